import { describe, expect, it } from "vitest";

import { Gallery, formatAccuracyBadge } from "../src/gallery.js";
import type { LayoutBox, SampleResponse } from "../src/types.js";

const box = (x: number): LayoutBox => [x, 0, 0, x + 0.2, 0.2, 0.2, 3];

const response: SampleResponse = {
  layouts: [[box(0.1), box(0.5)], [box(0.2), box(0.6)]],
  accuracy: [100.0, 66.66666666666667],
  seed: 7,
};

describe("gallery", () => {
  it("builds one card per sampled layout", () => {
    const gallery = new Gallery();
    gallery.load(response);
    expect(gallery.cards).toHaveLength(2);
    expect(gallery.seed).toBe(7);
  });

  it("badges echo the API accuracy verbatim", () => {
    const gallery = new Gallery();
    gallery.load(response);
    expect(gallery.cards[0].accuracyBadge).toBe("100%");
    expect(gallery.cards[1].accuracyBadge).toBe("66.66666666666667%");
    expect(gallery.cards[1].accuracy).toBe(response.accuracy[1]);
  });

  it("layouts are stored untouched", () => {
    const gallery = new Gallery();
    gallery.load(response);
    expect(gallery.cards[0].layout).toEqual(response.layouts[0]);
  });

  it("selection tracks a card and reload clears it", () => {
    const gallery = new Gallery();
    gallery.load(response);
    expect(gallery.selected).toBeNull();
    gallery.select(1);
    expect(gallery.selected?.index).toBe(1);
    gallery.load(response);
    expect(gallery.selected).toBeNull();
  });

  it("rejects out-of-range selection and misaligned responses", () => {
    const gallery = new Gallery();
    gallery.load(response);
    expect(() => gallery.select(5)).toThrow(/no card/);
    expect(() => gallery.load({ ...response, accuracy: [1] }))
      .toThrow(/malformed/);
  });

  it("heatmap visibility toggles", () => {
    const gallery = new Gallery();
    expect(gallery.heatmapVisible).toBe(false);
    expect(gallery.toggleHeatmap()).toBe(true);
    expect(gallery.toggleHeatmap()).toBe(false);
  });
});

describe("badge formatting", () => {
  it("never rounds the API value", () => {
    expect(formatAccuracyBadge(83.33333333333333)).toBe("83.33333333333333%");
    expect(formatAccuracyBadge(0)).toBe("0%");
  });
});
