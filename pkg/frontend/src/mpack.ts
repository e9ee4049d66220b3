/**
 * Canonical MessagePack codec matching the policy server byte-for-byte:
 * insertion-ordered map keys, shortest container/int headers, float64 for
 * every fractional number. Wrap a number in F64 to force float encoding
 * where the schema calls for a real (JS cannot tell 1.0 from 1).
 */

export class F64 {
  constructor(public readonly value: number) {}
}

export class FormatError extends Error {}

type Encodable =
  | null
  | boolean
  | number
  | F64
  | string
  | Uint8Array
  | Encodable[]
  | { [key: string]: Encodable };

export function packb(obj: Encodable): Uint8Array {
  const chunks: number[] = [];
  pack(obj, chunks);
  return Uint8Array.from(chunks);
}

function pushUint(chunks: number[], value: number, bytes: number): void {
  for (let i = bytes - 1; i >= 0; i--) {
    chunks.push((value / 2 ** (8 * i)) & 0xff);
  }
}

function pack(obj: Encodable, out: number[]): void {
  if (obj === null) {
    out.push(0xc0);
  } else if (obj === true) {
    out.push(0xc3);
  } else if (obj === false) {
    out.push(0xc2);
  } else if (obj instanceof F64) {
    packFloat64(obj.value, out);
  } else if (typeof obj === "number") {
    if (Number.isInteger(obj)) {
      packInt(obj, out);
    } else {
      packFloat64(obj, out);
    }
  } else if (typeof obj === "string") {
    const data = new TextEncoder().encode(obj);
    const n = data.length;
    if (n <= 31) {
      out.push(0xa0 | n);
    } else if (n <= 0xff) {
      out.push(0xd9, n);
    } else if (n <= 0xffff) {
      out.push(0xda);
      pushUint(out, n, 2);
    } else {
      out.push(0xdb);
      pushUint(out, n, 4);
    }
    for (const b of data) out.push(b);
  } else if (obj instanceof Uint8Array) {
    const n = obj.length;
    if (n <= 0xff) {
      out.push(0xc4, n);
    } else if (n <= 0xffff) {
      out.push(0xc5);
      pushUint(out, n, 2);
    } else {
      out.push(0xc6);
      pushUint(out, n, 4);
    }
    for (const b of obj) out.push(b);
  } else if (Array.isArray(obj)) {
    const n = obj.length;
    if (n <= 15) {
      out.push(0x90 | n);
    } else if (n <= 0xffff) {
      out.push(0xdc);
      pushUint(out, n, 2);
    } else {
      out.push(0xdd);
      pushUint(out, n, 4);
    }
    for (const item of obj) pack(item, out);
  } else if (typeof obj === "object") {
    const keys = Object.keys(obj);
    const n = keys.length;
    if (n <= 15) {
      out.push(0x80 | n);
    } else if (n <= 0xffff) {
      out.push(0xde);
      pushUint(out, n, 2);
    } else {
      out.push(0xdf);
      pushUint(out, n, 4);
    }
    for (const key of keys) {
      pack(key, out);
      pack(obj[key], out);
    }
  } else {
    throw new FormatError(`cannot msgpack-encode ${typeof obj}`);
  }
}

function packFloat64(value: number, out: number[]): void {
  const buf = new DataView(new ArrayBuffer(8));
  buf.setFloat64(0, value, false);
  out.push(0xcb);
  for (let i = 0; i < 8; i++) out.push(buf.getUint8(i));
}

function packInt(v: number, out: number[]): void {
  if (v >= 0 && v <= 0x7f) {
    out.push(v);
  } else if (v < 0 && v >= -32) {
    out.push(v & 0xff);
  } else if (v >= 0 && v <= 0xff) {
    out.push(0xcc, v);
  } else if (v >= 0 && v <= 0xffff) {
    out.push(0xcd);
    pushUint(out, v, 2);
  } else if (v >= 0 && v <= 0xffffffff) {
    out.push(0xce);
    pushUint(out, v, 4);
  } else if (v >= 0 && v <= Number.MAX_SAFE_INTEGER) {
    out.push(0xcf);
    pushUint(out, Math.floor(v / 2 ** 32), 4);
    pushUint(out, v % 2 ** 32, 4);
  } else if (v < 0 && v >= -0x80) {
    out.push(0xd0, v & 0xff);
  } else if (v < 0 && v >= -0x8000) {
    out.push(0xd1);
    pushUint(out, v & 0xffff, 2);
  } else if (v < 0 && v >= -0x80000000) {
    out.push(0xd2);
    pushUint(out, v >>> 0, 4);
  } else {
    throw new FormatError(`integer out of supported range: ${v}`);
  }
}

export function unpackb(data: Uint8Array): unknown {
  const [obj, pos] = unpack(data, 0);
  if (pos !== data.length) {
    throw new FormatError(`trailing bytes after msgpack object (${data.length - pos})`);
  }
  return obj;
}

function unpack(buf: Uint8Array, pos: number): [unknown, number] {
  if (pos >= buf.length) throw new FormatError("truncated msgpack data");
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const b = buf[pos];
  pos += 1;
  if (b <= 0x7f) return [b, pos];
  if (b >= 0xe0) return [b - 0x100, pos];
  if (b >= 0x80 && b <= 0x8f) return unpackMap(buf, pos, b & 0x0f);
  if (b >= 0x90 && b <= 0x9f) return unpackArray(buf, pos, b & 0x0f);
  if (b >= 0xa0 && b <= 0xbf) return unpackStr(buf, pos, b & 0x1f);
  switch (b) {
    case 0xc0: return [null, pos];
    case 0xc2: return [false, pos];
    case 0xc3: return [true, pos];
    case 0xc4: return unpackBin(buf, pos + 1, need(buf, pos, 1) ? buf[pos] : 0);
    case 0xc5: return unpackBin(buf, pos + 2, view.getUint16(check(buf, pos, 2)));
    case 0xc6: return unpackBin(buf, pos + 4, view.getUint32(check(buf, pos, 4)));
    case 0xca: return [view.getFloat32(check(buf, pos, 4)), pos + 4];
    case 0xcb: return [view.getFloat64(check(buf, pos, 8)), pos + 8];
    case 0xcc: return [buf[check(buf, pos, 1)], pos + 1];
    case 0xcd: return [view.getUint16(check(buf, pos, 2)), pos + 2];
    case 0xce: return [view.getUint32(check(buf, pos, 4)), pos + 4];
    case 0xcf: {
      const hi = view.getUint32(check(buf, pos, 8));
      const lo = view.getUint32(pos + 4);
      return [hi * 2 ** 32 + lo, pos + 8];
    }
    case 0xd0: return [view.getInt8(check(buf, pos, 1)), pos + 1];
    case 0xd1: return [view.getInt16(check(buf, pos, 2)), pos + 2];
    case 0xd2: return [view.getInt32(check(buf, pos, 4)), pos + 4];
    case 0xd3: return [Number(view.getBigInt64(check(buf, pos, 8))), pos + 8];
    case 0xd9: return unpackStr(buf, pos + 1, buf[check(buf, pos, 1)]);
    case 0xda: return unpackStr(buf, pos + 2, view.getUint16(check(buf, pos, 2)));
    case 0xdb: return unpackStr(buf, pos + 4, view.getUint32(check(buf, pos, 4)));
    case 0xdc: return unpackArray(buf, pos + 2, view.getUint16(check(buf, pos, 2)));
    case 0xdd: return unpackArray(buf, pos + 4, view.getUint32(check(buf, pos, 4)));
    case 0xde: return unpackMap(buf, pos + 2, view.getUint16(check(buf, pos, 2)));
    case 0xdf: return unpackMap(buf, pos + 4, view.getUint32(check(buf, pos, 4)));
    default:
      throw new FormatError(`unsupported msgpack type byte 0x${b.toString(16)}`);
  }
}

function need(buf: Uint8Array, pos: number, n: number): boolean {
  if (pos + n > buf.length) throw new FormatError("truncated msgpack header");
  return true;
}

function check(buf: Uint8Array, pos: number, n: number): number {
  need(buf, pos, n);
  return pos;
}

function unpackStr(buf: Uint8Array, pos: number, n: number): [string, number] {
  need(buf, pos, n);
  return [new TextDecoder("utf-8", { fatal: true }).decode(buf.subarray(pos, pos + n)), pos + n];
}

function unpackBin(buf: Uint8Array, pos: number, n: number): [Uint8Array, number] {
  need(buf, pos, n);
  return [buf.slice(pos, pos + n), pos + n];
}

function unpackArray(buf: Uint8Array, pos: number, n: number): [unknown[], number] {
  const items: unknown[] = [];
  for (let i = 0; i < n; i++) {
    const [item, next] = unpack(buf, pos);
    items.push(item);
    pos = next;
  }
  return [items, pos];
}

function unpackMap(buf: Uint8Array, pos: number, n: number): [Record<string, unknown>, number] {
  const out: Record<string, unknown> = {};
  for (let i = 0; i < n; i++) {
    const [key, afterKey] = unpack(buf, pos);
    const [value, afterValue] = unpack(buf, afterKey);
    out[String(key)] = value;
    pos = afterValue;
  }
  return [out, pos];
}
