/**
 * Content hashing for result comparison. The before/after viewer and
 * the interpolation endpoint check only need a stable identity for a
 * byte payload, so 64-bit FNV-1a is plenty and keeps the client free
 * of crypto dependencies.
 */

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK64 = 0xffffffffffffffffn;

export function fnv1a64(data: Uint8Array): bigint {
  let h = FNV_OFFSET;
  for (let i = 0; i < data.length; i++) {
    h ^= BigInt(data[i]);
    h = (h * FNV_PRIME) & MASK64;
  }
  return h;
}

export function hashHex(data: Uint8Array): string {
  return fnv1a64(data).toString(16).padStart(16, '0');
}

export function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) if (a[i] !== b[i]) return false;
  return true;
}
