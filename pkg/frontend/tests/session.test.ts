import { describe, expect, it, vi } from "vitest";

import { SteerClient, SteerRequest, SteerResponse } from "../src/api.js";
import { SteerSession } from "../src/session.js";

function response(raw: string, answer: string): SteerResponse {
  const tokens = raw.match(/<reflect>|\$|[A-Z]/g) ?? [];
  return {
    raw,
    raw_tokens: tokens,
    log_probs: tokens.map(() => -0.1),
    answer,
    terminated: true,
    mass: { predicted: 100, precursor: 100.02, delta: -0.02 },
  };
}

/** Fake service: deterministic per request body, counts calls. */
function fakeClient() {
  const calls: { path: string; body: SteerRequest }[] = [];
  const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
    const path = String(url).replace("http://svc", "");
    const body = init?.body ? (JSON.parse(String(init.body)) as SteerRequest) : {};
    calls.push({ path, body });
    let payload: SteerResponse;
    if (path === "/predict") {
      payload = response("RLANLYWL$", "RLANLYWL");
    } else {
      const prefix = body.prefix ?? "";
      payload = response(`${prefix}MNFYGFL$`, "RMNFYGFL");
    }
    return new Response(JSON.stringify(payload), { status: 200 });
  });
  return { client: new SteerClient("http://svc", fetchFn as typeof fetch), calls };
}

describe("SteerSession", () => {
  it("insertReflectAt builds the prefix from the current raw tokens", async () => {
    const { client, calls } = fakeClient();
    const session = new SteerSession(client, "psm-1");
    await session.predict();
    const steered = await session.insertReflectAt(2);
    expect(calls[1].path).toBe("/steer");
    expect(calls[1].body.prefix).toBe("RL<reflect>");
    expect(steered.raw.startsWith("RL<reflect>")).toBe(true);
    expect(steered.answer).not.toContain("<reflect>");
  });

  it("position 0 sends a bare reflect prefix", async () => {
    const { client, calls } = fakeClient();
    const session = new SteerSession(client, "psm-1");
    await session.predict();
    await session.insertReflectAt(0);
    expect(calls[1].body.prefix).toBe("<reflect>");
  });

  it("history is append-only and replay reissues the stored request", async () => {
    const { client, calls } = fakeClient();
    const session = new SteerSession(client, "psm-1");
    await session.predict();
    await session.insertReflectAt(2);
    await session.insertReflectAt(1);
    expect(session.history.length).toBe(2);
    const stored = session.history[0].response;
    const replayed = await session.replay(0);
    expect(replayed).toEqual(stored);
    // replay does not grow the history
    expect(session.history.length).toBe(2);
    expect(calls.filter((c) => c.path === "/steer").length).toBe(3);
  });

  it("steering without a prediction is rejected", async () => {
    const { client } = fakeClient();
    const session = new SteerSession(client, "psm-1");
    await expect(session.insertReflectAt(1)).rejects.toThrow(/no current/);
  });

  it("serializes concurrent steer calls in order", async () => {
    const order: string[] = [];
    let release: (() => void) | null = null;
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      const body = init?.body ? JSON.parse(String(init.body)) : {};
      order.push(body.prefix ?? "predict");
      if (order.length === 2) {
        // hold the first steer until the third call is queued
        await new Promise<void>((resolve) => {
          release = resolve;
          setTimeout(resolve, 50);
        });
      }
      return new Response(JSON.stringify(response("GA$", "GA")), { status: 200 });
    });
    const session = new SteerSession(
      new SteerClient("http://svc", fetchFn as typeof fetch),
      "psm-1",
    );
    await session.predict();
    const a = session.steerWithPrefix("G<reflect>");
    const b = session.steerWithPrefix("GA<reflect>");
    await Promise.all([a, b]);
    expect(order).toEqual(["predict", "G<reflect>", "GA<reflect>"]);
    expect(session.history.map((h) => h.prefix)).toEqual(["G<reflect>", "GA<reflect>"]);
    void release;
  });

  it("a failed steer leaves the history unchanged", async () => {
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      if (String(url).endsWith("/steer")) {
        return new Response(JSON.stringify({ error: "bad prefix", at: "prefix" }), {
          status: 400,
        });
      }
      return new Response(JSON.stringify(response("GA$", "GA")), { status: 200 });
    });
    const session = new SteerSession(
      new SteerClient("http://svc", fetchFn as typeof fetch),
      "psm-1",
    );
    await session.predict();
    await expect(session.steerWithPrefix("$")).rejects.toThrow(/bad prefix/);
    expect(session.history.length).toBe(0);
    // the session still works afterwards
    await session.predict();
  });
});
