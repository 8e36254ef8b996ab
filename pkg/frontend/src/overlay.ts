/**
 * Translucent per-item overlays for the canvas. Pure pixel math so
 * the same code runs under tests; the DOM layer just blits the RGBA
 * buffers into ImageData.
 */

import type { Partition } from './partition.js';
import type { PpmImage } from './netpbm.js';

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

// Golden-angle hue walk keeps colors distinct for any item count, and
// the id -> color map stays bijective because hues never collide
// within the 16-item cap.
export function itemColor(itemId: number): Rgb {
  const hue = (itemId * 137.50776405003785) % 360;
  return hslToRgb(hue, 0.85, 0.55);
}

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
  return {
    r: Math.round((r + m) * 255),
    g: Math.round((g + m) * 255),
    b: Math.round((b + m) * 255),
  };
}

export function cssColor(c: Rgb, alpha = 1): string {
  return `rgba(${c.r}, ${c.g}, ${c.b}, ${alpha})`;
}

export interface OverlayOptions {
  /** overlay opacity in [0, 1]; 0 shows the raw image unmodified */
  alpha?: number;
  /** item under the cursor, rendered brighter */
  hovered?: number;
  /** selected item, rendered at full strength with the rest dimmed */
  selected?: number;
}

/**
 * Compose the base image with item overlays into an RGBA buffer of
 * width*height*4 bytes, row-major, ready for ImageData.
 */
export function composeOverlay(image: PpmImage, partition: Partition,
                               opts: OverlayOptions = {}): Uint8ClampedArray {
  if (image.width !== partition.width || image.height !== partition.height) {
    throw new Error(
      `image is ${image.height}x${image.width}, mask is ` +
      `${partition.height}x${partition.width}`);
  }
  const alpha = opts.alpha ?? 0.45;
  const out = new Uint8ClampedArray(image.width * image.height * 4);
  const colors: Rgb[] = [];
  for (let i = 0; i < partition.nItems; i++) colors.push(itemColor(i));

  for (let i = 0; i < image.width * image.height; i++) {
    const label = partition.labels[i];
    const color = colors[label];
    let a = alpha;
    if (opts.selected !== undefined) {
      a = label === opts.selected ? Math.min(1, alpha * 1.6) : alpha * 0.35;
    }
    if (opts.hovered !== undefined && label === opts.hovered) {
      a = Math.min(1, a + 0.2);
    }
    const r = image.rgb[i * 3];
    const g = image.rgb[i * 3 + 1];
    const b = image.rgb[i * 3 + 2];
    out[i * 4] = Math.round(r * (1 - a) + color.r * a);
    out[i * 4 + 1] = Math.round(g * (1 - a) + color.g * a);
    out[i * 4 + 2] = Math.round(b * (1 - a) + color.b * a);
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Raw image as RGBA, used when overlays are toggled off. */
export function composePlain(image: PpmImage): Uint8ClampedArray {
  const out = new Uint8ClampedArray(image.width * image.height * 4);
  for (let i = 0; i < image.width * image.height; i++) {
    out[i * 4] = image.rgb[i * 3];
    out[i * 4 + 1] = image.rgb[i * 3 + 1];
    out[i * 4 + 2] = image.rgb[i * 3 + 2];
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Item owning the pixel under a canvas click, or -1 off-canvas. */
export function itemAt(partition: Partition, row: number, col: number): number {
  if (row < 0 || row >= partition.height || col < 0 || col >= partition.width) {
    return -1;
  }
  return partition.labels[row * partition.width + col];
}
