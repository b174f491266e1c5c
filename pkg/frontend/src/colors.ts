/** Region colors: a pure function of the region id, stable across revisions. */

export type Rgb = [number, number, number];

// golden-angle hue steps keep consecutive ids far apart on the wheel
const GOLDEN_ANGLE = 137.50776405003785;

function hslToRgb(h: number, s: number, l: number): Rgb {
  const c = (1 - Math.abs(2 * l - 1)) * s;
  const hp = h / 60;
  const x = c * (1 - Math.abs((hp % 2) - 1));
  let r = 0, g = 0, b = 0;
  if (hp < 1) [r, g, b] = [c, x, 0];
  else if (hp < 2) [r, g, b] = [x, c, 0];
  else if (hp < 3) [r, g, b] = [0, c, x];
  else if (hp < 4) [r, g, b] = [0, x, c];
  else if (hp < 5) [r, g, b] = [x, 0, c];
  else [r, g, b] = [c, 0, x];
  const m = l - c / 2;
  return [
    Math.round((r + m) * 255),
    Math.round((g + m) * 255),
    Math.round((b + m) * 255),
  ];
}

export function regionColor(regionId: number): Rgb {
  if (!Number.isInteger(regionId) || regionId < 1) {
    throw new RangeError(`region id must be a positive integer, got ${regionId}`);
  }
  const hue = ((regionId - 1) * GOLDEN_ANGLE) % 360;
  // alternate lightness a little so nearby hues still separate
  const light = regionId % 2 === 0 ? 0.55 : 0.45;
  return hslToRgb(hue, 0.65, light);
}

/** Outline variant: the region color darkened for boundary pixels. */
export function boundaryColor(regionId: number): Rgb {
  const [r, g, b] = regionColor(regionId);
  return [r >> 1, g >> 1, b >> 1];
}
