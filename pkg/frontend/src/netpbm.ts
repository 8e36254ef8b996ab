/**
 * Binary netpbm codecs for the two formats the service speaks:
 * P6 (color image, maxval 255) and P5 (gray mask, raw item ids).
 *
 * Header rules: whitespace-separated numeric tokens after the magic,
 * '#' starts a comment running to end of line, and exactly one
 * whitespace byte separates the header from the payload.
 */

export class NetpbmError extends Error {}

export interface PpmImage {
  width: number;
  height: number;
  /** Interleaved RGB, row-major, 3 bytes per pixel. */
  rgb: Uint8Array;
}

export interface PgmMask {
  width: number;
  height: number;
  /** One item id per pixel, row-major. */
  labels: Int32Array;
  nItems: number;
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0b, 0x0c, 0x0d]);

function readHeader(data: Uint8Array, count: number): { tokens: number[]; offset: number } {
  let pos = 2;
  const tokens: number[] = [];
  while (tokens.length < count) {
    if (pos >= data.length) throw new NetpbmError('file ends inside the header');
    const b = data[pos];
    if (WHITESPACE.has(b)) {
      pos += 1;
    } else if (b === 0x23 /* # */) {
      while (pos < data.length && data[pos] !== 0x0a && data[pos] !== 0x0d) pos += 1;
    } else {
      let start = pos;
      while (pos < data.length && !WHITESPACE.has(data[pos]) && data[pos] !== 0x23) pos += 1;
      const tok = new TextDecoder().decode(data.subarray(start, pos));
      if (!/^[0-9]+$/.test(tok)) throw new NetpbmError(`non-numeric header token ${JSON.stringify(tok)}`);
      tokens.push(parseInt(tok, 10));
    }
  }
  if (pos >= data.length || !WHITESPACE.has(data[pos])) {
    throw new NetpbmError('missing whitespace between header and payload');
  }
  return { tokens, offset: pos + 1 };
}

export function parsePpm(data: Uint8Array): PpmImage {
  if (data.length < 2 || data[0] !== 0x50 || data[1] !== 0x36) {
    throw new NetpbmError('not a binary color image (expected P6)');
  }
  const { tokens, offset } = readHeader(data, 3);
  const [width, height, maxval] = tokens;
  if (maxval !== 255) throw new NetpbmError(`unsupported maxval ${maxval}, expected 255`);
  const need = width * height * 3;
  if (data.length - offset < need) {
    throw new NetpbmError(`payload holds ${data.length - offset} bytes, needs ${need}`);
  }
  return { width, height, rgb: data.slice(offset, offset + need) };
}

export function encodePpm(img: PpmImage): Uint8Array {
  const header = new TextEncoder().encode(`P6\n${img.width} ${img.height}\n255\n`);
  const out = new Uint8Array(header.length + img.rgb.length);
  out.set(header, 0);
  out.set(img.rgb, header.length);
  return out;
}

export function parsePgm(data: Uint8Array, nItems?: number): PgmMask {
  if (data.length < 2 || data[0] !== 0x50 || data[1] !== 0x35) {
    throw new NetpbmError('not a binary gray image (expected P5)');
  }
  const { tokens, offset } = readHeader(data, 3);
  const [width, height, maxval] = tokens;
  if (maxval !== 255) throw new NetpbmError(`unsupported maxval ${maxval}, expected 255`);
  const need = width * height;
  if (data.length - offset < need) {
    throw new NetpbmError(`payload holds ${data.length - offset} bytes, needs ${need}`);
  }
  const labels = new Int32Array(need);
  let max = 0;
  for (let i = 0; i < need; i++) {
    labels[i] = data[offset + i];
    if (labels[i] > max) max = labels[i];
  }
  const n = nItems ?? max + 1;
  if (max >= n) throw new NetpbmError(`mask holds label ${max}, valid range [0, ${n})`);
  return { width, height, labels, nItems: n };
}

export function encodePgm(mask: PgmMask): Uint8Array {
  const header = new TextEncoder().encode(`P5\n${mask.width} ${mask.height}\n255\n`);
  const out = new Uint8Array(header.length + mask.labels.length);
  out.set(header, 0);
  for (let i = 0; i < mask.labels.length; i++) {
    const v = mask.labels[i];
    if (v < 0 || v > 255) throw new NetpbmError(`label ${v} does not fit one byte`);
    out[header.length + i] = v;
  }
  return out;
}
