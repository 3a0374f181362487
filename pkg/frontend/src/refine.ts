/** Refinement console: consumes a job's streamed NDJSON lines and keeps the
 * loss series and final result for charting. Cancelling freezes the last
 * polled state instead of clearing it. */

import type { JobLine, JobRecord, JobResult } from "./types.js";

export type ConsoleState =
  | "idle" | "streaming" | "done" | "failed" | "cancelled";

export interface LossPoint {
  /** Global step index across attempts, in arrival order. */
  index: number;
  attempt: number;
  step: number;
  total: number;
  depth: number;
  semantic: number;
  size: number;
}

export class RefineConsole {
  private state_: ConsoleState = "idle";
  private points_: LossPoint[] = [];
  private result_: JobResult | null = null;
  private error_: string | null = null;
  private jobId_: string | null = null;

  get state(): ConsoleState {
    return this.state_;
  }

  get jobId(): string | null {
    return this.jobId_;
  }

  get lossSeries(): LossPoint[] {
    return [...this.points_];
  }

  get result(): JobResult | null {
    return this.result_;
  }

  get error(): string | null {
    return this.error_;
  }

  start(jobId: string): void {
    if (this.state_ === "streaming") {
      throw new Error("a refinement job is already in flight");
    }
    this.jobId_ = jobId;
    this.state_ = "streaming";
    this.points_ = [];
    this.result_ = null;
    this.error_ = null;
  }

  /** Feed one parsed NDJSON line from the job endpoint. */
  feed(line: JobLine): void {
    if (this.state_ !== "streaming") {
      return; // late lines after cancel/completion are ignored
    }
    if (line.record) {
      this.push(line.record);
      return;
    }
    if (line.state === "done") {
      this.result_ = line.result ?? null;
      this.state_ = "done";
    } else if (line.state === "failed") {
      this.error_ = line.error ?? "refinement failed";
      this.state_ = "failed";
    }
  }

  /** Stop consuming; everything received so far stays visible. */
  cancel(): void {
    if (this.state_ === "streaming") {
      this.state_ = "cancelled";
    }
  }

  private push(record: JobRecord): void {
    this.points_.push({
      index: this.points_.length,
      attempt: record.attempt,
      step: record.step,
      total: record.total,
      depth: record.depth,
      semantic: record.semantic,
      size: record.size,
    });
  }
}
