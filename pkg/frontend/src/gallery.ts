/** Gallery state: sampled layout cards with accuracy badges.
 *
 * The UI never recomputes a number — badges and layouts are copied verbatim
 * from the sample response (single source of truth).
 */

import type { LayoutBox, SampleResponse } from "./types.js";

export interface GalleryCard {
  index: number;
  layout: LayoutBox[];
  /** Scene-graph accuracy in percent, exactly as the API reported it. */
  accuracyBadge: string;
  accuracy: number;
}

export class Gallery {
  private cards_: GalleryCard[] = [];
  private seed_: number | null = null;
  private selected_: number | null = null;
  heatmapVisible = false;

  get cards(): GalleryCard[] {
    return [...this.cards_];
  }

  get seed(): number | null {
    return this.seed_;
  }

  get selected(): GalleryCard | null {
    return this.selected_ === null ? null : this.cards_[this.selected_];
  }

  load(response: SampleResponse): void {
    if (response.layouts.length !== response.accuracy.length) {
      throw new Error("malformed sample response");
    }
    this.cards_ = response.layouts.map((layout, index) => ({
      index,
      layout,
      accuracy: response.accuracy[index],
      accuracyBadge: formatAccuracyBadge(response.accuracy[index]),
    }));
    this.seed_ = response.seed;
    this.selected_ = null;
  }

  select(index: number): GalleryCard {
    if (index < 0 || index >= this.cards_.length) {
      throw new Error(`no card ${index}`);
    }
    this.selected_ = index;
    return this.cards_[index];
  }

  toggleHeatmap(): boolean {
    this.heatmapVisible = !this.heatmapVisible;
    return this.heatmapVisible;
  }
}

/** The API value verbatim, with a percent sign; no rounding of its digits. */
export function formatAccuracyBadge(accuracy: number): string {
  return `${accuracy}%`;
}
