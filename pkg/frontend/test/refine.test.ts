import { describe, expect, it } from "vitest";

import { RefineConsole } from "../src/refine.js";
import type { JobLine } from "../src/types.js";

const record = (attempt: number, step: number, total: number): JobLine => ({
  record: { attempt, step, total, depth: total / 2, semantic: total / 4,
            size: total / 8 },
});

describe("refinement console", () => {
  it("accumulates streamed loss points in order", () => {
    const consol = new RefineConsole();
    consol.start("job-1");
    consol.feed(record(0, 0, 3.0));
    consol.feed(record(0, 1, 2.5));
    consol.feed(record(1, 0, 2.8));
    const series = consol.lossSeries;
    expect(series.map((p) => p.index)).toEqual([0, 1, 2]);
    expect(series.map((p) => p.total)).toEqual([3.0, 2.5, 2.8]);
    expect(series[2].attempt).toBe(1);
    expect(consol.state).toBe("streaming");
  });

  it("a done line stores the result and finishes", () => {
    const consol = new RefineConsole();
    consol.start("job-2");
    consol.feed(record(0, 0, 1.0));
    consol.feed({
      state: "done", progress: 1,
      result: { layout: [], initial_loss: 1.0, final_loss: 0.4,
                selected_attempt: 0 },
    });
    expect(consol.state).toBe("done");
    expect(consol.result?.final_loss).toBe(0.4);
    expect(consol.lossSeries).toHaveLength(1); // chart stays populated
  });

  it("a failed line captures the error", () => {
    const consol = new RefineConsole();
    consol.start("job-3");
    consol.feed({ state: "failed", error: "target unreadable" });
    expect(consol.state).toBe("failed");
    expect(consol.error).toBe("target unreadable");
  });

  it("cancel freezes the last polled state", () => {
    const consol = new RefineConsole();
    consol.start("job-4");
    consol.feed(record(0, 0, 2.0));
    consol.feed(record(0, 1, 1.5));
    consol.cancel();
    expect(consol.state).toBe("cancelled");
    expect(consol.lossSeries).toHaveLength(2);
    // late lines after cancellation must not mutate anything
    consol.feed(record(0, 2, 1.0));
    consol.feed({ state: "done", progress: 1 });
    expect(consol.state).toBe("cancelled");
    expect(consol.lossSeries).toHaveLength(2);
  });

  it("starting a new job clears the previous run", () => {
    const consol = new RefineConsole();
    consol.start("a");
    consol.feed(record(0, 0, 2.0));
    consol.feed({ state: "done", progress: 1 });
    consol.start("b");
    expect(consol.jobId).toBe("b");
    expect(consol.lossSeries).toHaveLength(0);
    expect(consol.result).toBeNull();
  });

  it("refuses to start while streaming", () => {
    const consol = new RefineConsole();
    consol.start("a");
    expect(() => consol.start("b")).toThrow(/in flight/);
  });
});
