import { describe, expect, it } from "vitest";

import type { ClickPayload, VerifyResponse } from "../src/api.js";
import { ClientSession } from "../src/session.js";

function makeSession(opts: {
  prompt?: string[];
  renderScale?: number;
  imageSize?: number;
  respond?: VerifyResponse;
}) {
  const submitted: ClickPayload[][] = [];
  let clock = 0;
  const session = new ClientSession({
    sessionId: "s1",
    prompt: opts.prompt ?? ["甲", "乙", "丙"],
    imageSize: opts.imageSize ?? 256,
    renderScale: opts.renderScale ?? 1.0,
    submit: async (clicks) => {
      submitted.push(clicks);
      return opts.respond ?? { success: true, elapsed_seconds: 1.5 };
    },
    now: () => {
      clock += 250;
      return clock;
    },
  });
  return { session, submitted };
}

describe("coordinate round-trip", () => {
  for (const scale of [0.5, 1.0, 2.0]) {
    it(`delivers native pixels exactly at display scale ${scale}`, async () => {
      const { session, submitted } = makeSession({ renderScale: scale, prompt: ["a", "b"] });
      session.markImagePainted();
      const native: Array<[number, number]> = [
        [13, 57],
        [200, 31],
      ];
      for (const [x, y] of native) {
        session.recordClick(x * scale, y * scale);
      }
      await session.settled();
      expect(submitted).toHaveLength(1);
      expect(submitted[0].map((c) => [c.x, c.y])).toEqual(native);
    });
  }
});

describe("click capture rules", () => {
  it("ignores clicks before the image paints (timer not started)", () => {
    const { session } = makeSession({});
    expect(session.recordClick(10, 10)).toBe("ignored");
    expect(session.clicks).toHaveLength(0);
  });

  it("ignores clicks outside the image area", () => {
    const { session } = makeSession({ imageSize: 100 });
    session.markImagePainted();
    expect(session.recordClick(150, 50)).toBe("ignored");
    expect(session.recordClick(-5, 50)).toBe("ignored");
    expect(session.clicks).toHaveLength(0);
  });

  it("timestamps are monotone and measured from paint", () => {
    const { session } = makeSession({});
    session.markImagePainted(); // clock = 250
    session.recordClick(1, 1); // 500 - 250
    session.recordClick(2, 2);
    expect(session.clicks.map((c) => c.t_ms)).toEqual([250, 500]);
    expect(session.clicks[0].t_ms).toBeLessThanOrEqual(session.clicks[1].t_ms);
  });

  it("never records more clicks than prompt glyphs", async () => {
    const { session } = makeSession({ prompt: ["a", "b"] });
    session.markImagePainted();
    session.recordClick(1, 1);
    session.recordClick(2, 2);
    session.recordClick(3, 3); // beyond the prompt
    await session.settled();
    expect(session.clicks).toHaveLength(2);
  });
});

describe("auto-submit", () => {
  it("fires exactly once per completed prompt", async () => {
    const { session, submitted } = makeSession({ prompt: ["a", "b"] });
    session.markImagePainted();
    expect(session.recordClick(1, 1)).toBe("recorded");
    expect(session.recordClick(2, 2)).toBe("submitted");
    expect(session.recordClick(3, 3)).toBe("ignored"); // after submission
    await session.settled();
    expect(submitted).toHaveLength(1);
    expect(session.submitCount).toBe(1);
    expect(session.phase).toBe("solved");
  });

  it("reports failure verdicts", async () => {
    const { session } = makeSession({
      prompt: ["a"],
      respond: { success: false, elapsed_seconds: 3.2 },
    });
    session.markImagePainted();
    session.recordClick(5, 5);
    await session.settled();
    expect(session.phase).toBe("failed");
    expect(session.result?.elapsed_seconds).toBe(3.2);
  });
});

describe("undo", () => {
  it("removes the last click before submission, then the corrected sequence is sent", async () => {
    const { session, submitted } = makeSession({ prompt: ["a", "b"] });
    session.markImagePainted();
    session.recordClick(1, 1);
    expect(session.undo()).toBe(true);
    expect(session.clicks).toHaveLength(0);
    session.recordClick(7, 7);
    session.recordClick(8, 8);
    await session.settled();
    expect(submitted[0].map((c) => [c.x, c.y])).toEqual([
      [7, 7],
      [8, 8],
    ]);
    expect(submitted[0]).toHaveLength(2);
  });

  it("cannot undo after submission", async () => {
    const { session } = makeSession({ prompt: ["a"] });
    session.markImagePainted();
    session.recordClick(1, 1);
    await session.settled();
    expect(session.undo()).toBe(false);
  });
});

describe("abandon", () => {
  it("submits the incomplete sequence so the attempt counts", async () => {
    const { session, submitted } = makeSession({
      prompt: ["a", "b", "c"],
      respond: { success: false, elapsed_seconds: 0.5 },
    });
    session.markImagePainted();
    session.recordClick(1, 1);
    session.abandon();
    await session.settled();
    expect(submitted).toHaveLength(1);
    expect(submitted[0]).toHaveLength(1);
    expect(session.phase).toBe("failed");
  });
});
