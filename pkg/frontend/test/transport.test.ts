import { describe, expect, it } from "vitest";
import { LatestWinsThrottle, type ViewParams } from "../src/transport.js";
import type { ViewRequest } from "../src/protocol.js";

function params(time: number): ViewParams {
  return {
    pose: { quaternion: [1, 0, 0, 0], translation: [0, 0, 0] },
    time,
    mode: "rgb",
    scale: 1,
  };
}

describe("LatestWinsThrottle", () => {
  it("sends the first request immediately", () => {
    const sent: ViewRequest[] = [];
    const throttle = new LatestWinsThrottle({ send: (r) => sent.push(r) });
    throttle.request(params(0));
    expect(sent).toHaveLength(1);
    expect(sent[0].id).toBe(1);
  });

  it("keeps only the newest request while one is in flight", () => {
    const sent: ViewRequest[] = [];
    const throttle = new LatestWinsThrottle({ send: (r) => sent.push(r) });
    // a burst of 20 rapid requests: only the first goes out, then — after the
    // frame for it arrives — only the very last of the burst
    for (let i = 0; i < 20; i++) throttle.request(params(i));
    expect(sent).toHaveLength(1);
    expect(sent[0].time).toBe(0);
    throttle.settle(sent[0].id);
    expect(sent).toHaveLength(2);
    expect(sent[1].time).toBe(19);
    throttle.settle(sent[1].id);
    expect(sent).toHaveLength(2); // nothing pending
  });

  it("ignores stale or unknown reply ids", () => {
    const sent: ViewRequest[] = [];
    const throttle = new LatestWinsThrottle({ send: (r) => sent.push(r) });
    throttle.request(params(0));
    throttle.request(params(1));
    throttle.settle(999); // not the in-flight id
    expect(sent).toHaveLength(1);
    throttle.settle(sent[0].id);
    expect(sent).toHaveLength(2);
  });

  it("assigns strictly increasing ids", () => {
    const sent: ViewRequest[] = [];
    const throttle = new LatestWinsThrottle({ send: (r) => sent.push(r) });
    for (let i = 0; i < 5; i++) {
      throttle.request(params(i));
      throttle.settle(sent[sent.length - 1].id);
    }
    expect(sent.map((r) => r.id)).toEqual([1, 2, 3, 4, 5]);
  });

  it("reset drops pending state so the next request sends fresh", () => {
    const sent: ViewRequest[] = [];
    const throttle = new LatestWinsThrottle({ send: (r) => sent.push(r) });
    throttle.request(params(0));
    throttle.request(params(1)); // pending
    throttle.reset();
    throttle.request(params(2));
    expect(sent).toHaveLength(2);
    expect(sent[1].time).toBe(2);
  });
});
