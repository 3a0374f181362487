/** Latent interpolation slider backed by a server-computed layout path. */

import type { InterpolateResponse, LayoutBox } from "./types.js";

export class InterpolationPath {
  private t_: number[] = [];
  private layouts_: LayoutBox[][] = [];

  load(response: InterpolateResponse): void {
    if (response.t.length !== response.layouts.length
        || response.t.length < 2) {
      throw new Error("malformed interpolation response");
    }
    this.t_ = [...response.t];
    this.layouts_ = response.layouts.map((l) => [...l]);
  }

  get steps(): number {
    return this.t_.length;
  }

  get loaded(): boolean {
    return this.t_.length > 0;
  }

  /** The path sample whose t is closest to the slider position. */
  at(t: number): { t: number; layout: LayoutBox[] } {
    if (!this.loaded) {
      throw new Error("no interpolation loaded");
    }
    if (t < 0 || t > 1) {
      throw new Error(`t=${t} outside [0, 1]`);
    }
    let best = 0;
    for (let i = 1; i < this.t_.length; i++) {
      if (Math.abs(this.t_[i] - t) < Math.abs(this.t_[best] - t)) {
        best = i;
      }
    }
    return { t: this.t_[best], layout: this.layouts_[best] };
  }

  /** Endpoint layouts: exactly the first and last path entries. */
  get start(): LayoutBox[] {
    return this.at(0).layout;
  }

  get end(): LayoutBox[] {
    return this.at(1).layout;
  }
}
