import { describe, expect, it } from 'vitest';

import {
  encodePgm,
  encodePpm,
  NetpbmError,
  parsePgm,
  parsePpm,
} from '../src/netpbm.js';

function bytes(text: string, payload: number[]): Uint8Array {
  const head = new TextEncoder().encode(text);
  const out = new Uint8Array(head.length + payload.length);
  out.set(head, 0);
  out.set(payload, head.length);
  return out;
}

describe('color image codec', () => {
  it('round-trips an image', () => {
    const img = {
      width: 3,
      height: 2,
      rgb: new Uint8Array([0, 0, 0, 255, 0, 0, 0, 255, 0,
                           0, 0, 255, 128, 128, 128, 255, 255, 255]),
    };
    const again = parsePpm(encodePpm(img));
    expect(again.width).toBe(3);
    expect(again.height).toBe(2);
    expect([...again.rgb]).toEqual([...img.rgb]);
  });

  it('accepts comments and mixed whitespace in the header', () => {
    const data = bytes('P6 # comment\n# full line\n 2\t1 # w h\n255\n', [1, 2, 3, 4, 5, 6]);
    const img = parsePpm(data);
    expect(img.width).toBe(2);
    expect(img.height).toBe(1);
    expect([...img.rgb]).toEqual([1, 2, 3, 4, 5, 6]);
  });

  it('rejects a wrong magic number', () => {
    expect(() => parsePpm(bytes('P5\n1 1\n255\n', [0, 0, 0]))).toThrow(NetpbmError);
  });

  it('rejects a non-255 maxval', () => {
    expect(() => parsePpm(bytes('P6\n1 1\n65535\n', [0, 0, 0]))).toThrow(/maxval/);
  });

  it('rejects a truncated payload', () => {
    expect(() => parsePpm(bytes('P6\n2 2\n255\n', [0, 0, 0]))).toThrow(/payload/);
  });

  it('rejects a header that never ends', () => {
    expect(() => parsePpm(bytes('P6\n2', []))).toThrow(/header/);
  });

  it('rejects junk header tokens', () => {
    expect(() => parsePpm(bytes('P6\ntwo 2\n255\n', [0]))).toThrow(/non-numeric/);
  });
});

describe('mask codec', () => {
  it('round-trips labels and the item count', () => {
    const mask = {
      width: 4,
      height: 2,
      labels: new Int32Array([0, 0, 1, 1, 2, 2, 0, 1]),
      nItems: 3,
    };
    const again = parsePgm(encodePgm(mask), 3);
    expect(again.nItems).toBe(3);
    expect([...again.labels]).toEqual([...mask.labels]);
  });

  it('infers the item count from the largest label when not given', () => {
    const mask = { width: 2, height: 1, labels: new Int32Array([0, 4]), nItems: 5 };
    expect(parsePgm(encodePgm(mask)).nItems).toBe(5);
  });

  it('rejects labels beyond the declared item count', () => {
    const mask = { width: 2, height: 1, labels: new Int32Array([0, 4]), nItems: 5 };
    expect(() => parsePgm(encodePgm(mask), 3)).toThrow(/label/);
  });

  it('rejects labels that do not fit one byte', () => {
    const mask = { width: 1, height: 1, labels: new Int32Array([300]), nItems: 301 };
    expect(() => encodePgm(mask)).toThrow(/byte/);
  });

  it('emits the canonical single-space header', () => {
    const mask = { width: 3, height: 1, labels: new Int32Array([0, 1, 0]), nItems: 2 };
    const data = encodePgm(mask);
    const header = new TextDecoder().decode(data.subarray(0, 10));
    expect(header).toBe('P5\n3 1\n255');
  });
});
