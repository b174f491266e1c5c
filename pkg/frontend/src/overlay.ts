/** Compositing of the segmentation overlay onto the image.
 *
 * All math is integer fixed-point so the same inputs always produce the
 * same bytes; the overlay never invents labels — every pixel's color comes
 * from the service-provided label image.
 */

import { boundaryColor, regionColor, type Rgb } from "./colors.js";
import type { LabelImage } from "./types.js";

export class DimensionMismatchError extends Error {}

/** A pixel is a boundary pixel if any 4-neighbor carries a different label. */
function isBoundary(labels: LabelImage, x: number, y: number): boolean {
  const { width, height, data } = labels;
  const v = data[y * width + x]!;
  return (
    (x > 0 && data[y * width + x - 1] !== v) ||
    (x + 1 < width && data[y * width + x + 1] !== v) ||
    (y > 0 && data[(y - 1) * width + x] !== v) ||
    (y + 1 < height && data[(y + 1) * width + x] !== v)
  );
}

/**
 * Blend the label overlay over an RGBA image buffer.
 *
 * opacity 0 returns the image bytes unchanged; boundary pixels use the
 * darkened region color at the same opacity, so outlines also vanish at 0.
 */
export function compositeOverlay(
  image: Uint8ClampedArray,
  width: number,
  height: number,
  labels: LabelImage,
  opacity: number,
): Uint8ClampedArray {
  if (labels.width !== width || labels.height !== height) {
    throw new DimensionMismatchError(
      `labels are ${labels.width}x${labels.height}, image is ${width}x${height}`);
  }
  if (image.length !== width * height * 4) {
    throw new DimensionMismatchError(
      `image buffer has ${image.length} bytes, expected ${width * height * 4}`);
  }
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new RangeError(`opacity must be in [0,1], got ${opacity}`);
  }

  const alpha = Math.round(opacity * 255);
  const out = new Uint8ClampedArray(image);
  if (alpha === 0) return out;

  const fill = new Map<number, Rgb>();
  const edge = new Map<number, Rgb>();
  const lookup = (cache: Map<number, Rgb>, id: number, f: (id: number) => Rgb) => {
    let c = cache.get(id);
    if (!c) { c = f(id); cache.set(id, c); }
    return c;
  };

  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const id = labels.data[y * width + x]!;
      const tint = isBoundary(labels, x, y)
        ? lookup(edge, id, boundaryColor)
        : lookup(fill, id, regionColor);
      const at = (y * width + x) * 4;
      for (let c = 0; c < 3; c++) {
        const base = image[at + c]!;
        // integer blend, round-half-up: (base*(255-a) + tint*a) / 255
        out[at + c] = ((base * (255 - alpha) + tint[c]! * alpha + 127) / 255) | 0;
      }
      out[at + 3] = 255;
    }
  }
  return out;
}
