// Canonical byte serialization, mirroring docs/protocol.md exactly:
// big-endian fixed-width integers, u32 length-prefixed UTF-8 text and
// blobs, one presence byte for optionals. Signatures computed here must
// verify byte-for-byte against the service.

export function u32(value: number): Uint8Array {
  if (!Number.isInteger(value) || value < 0 || value > 0xffffffff) {
    throw new Error(`u32 out of range: ${value}`);
  }
  const out = new Uint8Array(4);
  new DataView(out.buffer).setUint32(0, value, false);
  return out;
}

export function u64(value: number | bigint): Uint8Array {
  const big = BigInt(value);
  if (big < 0n || big > 0xffffffffffffffffn) {
    throw new Error(`u64 out of range: ${value}`);
  }
  const out = new Uint8Array(8);
  new DataView(out.buffer).setBigUint64(0, big, false);
  return out;
}

export function blob(value: Uint8Array): Uint8Array {
  return concat(u32(value.length), value);
}

export function text(value: string): Uint8Array {
  return blob(new TextEncoder().encode(value));
}

export function fixed(value: Uint8Array, size: number): Uint8Array {
  if (value.length !== size) {
    throw new Error(`expected ${size} bytes, got ${value.length}`);
  }
  return value;
}

export function optional(
  value: Uint8Array | null | undefined,
  encode: (v: Uint8Array) => Uint8Array,
): Uint8Array {
  if (value == null) return new Uint8Array([0]);
  return concat(new Uint8Array([1]), encode(value));
}

export function concat(...parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}
