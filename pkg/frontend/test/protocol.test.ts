import { describe, expect, it } from "vitest";

import {
  parseServerMessage,
  returnCommandMessage,
  scenarioInfoRequest,
  setReferenceMessage,
} from "../src/protocol";

describe("server message parsing", () => {
  it("accepts telemetry, scenario_info and error frames", () => {
    const t = parseServerMessage('{"type":"telemetry","tick":3,"vx_r":0.5}');
    expect(t?.type).toBe("telemetry");
    const s = parseServerMessage('{"type":"scenario_info","walls":[]}');
    expect(s?.type).toBe("scenario_info");
    const e = parseServerMessage('{"type":"error","message":"nope"}');
    expect(e?.type).toBe("error");
  });

  it("rejects garbage and unknown types", () => {
    expect(parseServerMessage("not json")).toBeNull();
    expect(parseServerMessage('{"no_type":1}')).toBeNull();
    expect(parseServerMessage('{"type":"mystery"}')).toBeNull();
    expect(parseServerMessage("42")).toBeNull();
  });
});

describe("command serialization", () => {
  it("produces the exact wire shapes", () => {
    expect(JSON.parse(returnCommandMessage())).toEqual({ type: "return_command" });
    expect(JSON.parse(scenarioInfoRequest())).toEqual({ type: "scenario_info" });
    expect(JSON.parse(setReferenceMessage(1.0, 1.2, 0.0))).toEqual({
      type: "set_reference",
      z_r: 1.0,
      vx_r: 1.2,
      vy_r: 0.0,
    });
  });
});
