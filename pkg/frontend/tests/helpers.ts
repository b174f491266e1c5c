/** Test-side 16-bit grayscale PNG encoder, the decoder's round-trip twin. */

import { deflateSync } from "node:zlib";

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = new Uint32Array(256);
for (let n = 0; n < 256; n++) {
  let c = n;
  for (let k = 0; k < 8; k++) {
    c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
  }
  CRC_TABLE[n] = c;
}

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (const b of bytes) {
    c = CRC_TABLE[(c ^ b) & 0xff]! ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + data.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, data.length);
  for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
  out.set(data, 8);
  view.setUint32(8 + data.length, crc32(out.subarray(4, 8 + data.length)));
  return out;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a), pb = Math.abs(p - b), pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

/**
 * Encode big-endian 16-bit grayscale samples, filtering each row with
 * filterForRow(y). The default encodes everything unfiltered.
 */
export function encodePng16(
  samples: Uint16Array,
  width: number,
  height: number,
  filterForRow: (y: number) => number = () => 0,
): Uint8Array {
  if (samples.length !== width * height) {
    throw new Error("sample count does not match dimensions");
  }
  const stride = width * 2;
  const raw = new Uint8Array(height * stride);
  for (let i = 0; i < samples.length; i++) {
    raw[i * 2] = samples[i]! >> 8;
    raw[i * 2 + 1] = samples[i]! & 0xff;
  }
  const filtered = new Uint8Array(height * (stride + 1));
  const bpp = 2;
  for (let y = 0; y < height; y++) {
    const ftype = filterForRow(y);
    filtered[y * (stride + 1)] = ftype;
    for (let i = 0; i < stride; i++) {
      const x = raw[y * stride + i]!;
      const left = i >= bpp ? raw[y * stride + i - bpp]! : 0;
      const up = y > 0 ? raw[(y - 1) * stride + i]! : 0;
      const upLeft = y > 0 && i >= bpp ? raw[(y - 1) * stride + i - bpp]! : 0;
      let value: number;
      switch (ftype) {
        case 0: value = x; break;
        case 1: value = x - left; break;
        case 2: value = x - up; break;
        case 3: value = x - ((left + up) >> 1); break;
        case 4: value = x - paeth(left, up, upLeft); break;
        default: throw new Error(`unsupported filter ${ftype}`);
      }
      filtered[y * (stride + 1) + 1 + i] = value & 0xff;
    }
  }

  const ihdr = new Uint8Array(13);
  const view = new DataView(ihdr.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  ihdr[8] = 16;  // bit depth
  ihdr[9] = 0;   // grayscale
  const parts = [
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", new Uint8Array(deflateSync(filtered))),
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const p of parts) {
    out.set(p, offset);
    offset += p.length;
  }
  return out;
}

export function toBase64(bytes: Uint8Array): string {
  return Buffer.from(bytes).toString("base64");
}
