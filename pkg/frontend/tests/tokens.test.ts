import { describe, expect, it } from "vitest";

import { diffTokens, reflectPrefixAt, splitTokens, REFLECT } from "../src/tokens.js";

describe("splitTokens", () => {
  it("splits case-study notation", () => {
    expect(splitTokens("RL<reflect>MNFYGFL$")).toEqual([
      "R", "L", "<reflect>", "M", "N", "F", "Y", "G", "F", "L", "$",
    ]);
  });

  it("keeps modification suffixes attached", () => {
    expect(splitTokens("ELM+15.995NY")).toEqual(["E", "L", "M+15.995", "N", "Y"]);
  });

  it("rejects malformed strings", () => {
    expect(() => splitTokens("K<reflec>")).toThrow(/malformed/);
  });

  it("handles the empty string", () => {
    expect(splitTokens("")).toEqual([]);
  });
});

describe("reflectPrefixAt", () => {
  const raw = ["R", "L", "A", "N", "$"];

  it("builds the paper-style prefix after position 2", () => {
    expect(reflectPrefixAt(raw, 2)).toBe("RL<reflect>");
  });

  it("position 0 yields a bare reflect", () => {
    expect(reflectPrefixAt(raw, 0)).toBe(REFLECT);
  });

  it("never includes the terminator", () => {
    expect(reflectPrefixAt(raw, 5)).toBe("RLAN<reflect>");
  });

  it("rejects out-of-range positions", () => {
    expect(() => reflectPrefixAt(raw, 6)).toThrow(/outside/);
  });
});

describe("diffTokens", () => {
  it("is empty for identical sequences", () => {
    expect(diffTokens(["A", "B"], ["A", "B"])).toEqual([]);
  });

  it("reports a changed suffix", () => {
    const diff = diffTokens(
      splitTokens("RLANLYWL"),
      splitTokens("RMNFYGFL"),
    );
    expect(diff.length).toBeGreaterThan(0);
    expect(diff[0].index).toBe(1);
    expect(diff[0]).toMatchObject({ left: "L", right: "M" });
  });

  it("handles length differences", () => {
    const diff = diffTokens(["A"], ["A", "B"]);
    expect(diff).toEqual([{ index: 1, left: null, right: "B" }]);
  });
});
