/** Decoder for the label images the service returns: 16-bit grayscale PNG.
 *
 * Only that exact subset is supported (bit depth 16, color type 0, no
 * interlacing), which keeps the decoder small enough to ship dependency-free
 * in the browser. CRCs are not verified; the transport already checks
 * integrity.
 */

import type { LabelImage } from "./types.js";

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

export class PngFormatError extends Error {}

function u32(bytes: Uint8Array, at: number): number {
  return (
    ((bytes[at]! << 24) | (bytes[at + 1]! << 16) | (bytes[at + 2]! << 8) |
      bytes[at + 3]!) >>> 0
  );
}

async function inflate(data: Uint8Array): Promise<Uint8Array> {
  // PNG IDAT carries a zlib stream; DecompressionStream("deflate") is the
  // zlib format (raw deflate would be "deflate-raw")
  const stream = new Blob([data as BlobPart]).stream()
    .pipeThrough(new DecompressionStream("deflate"));
  return new Uint8Array(await new Response(stream).arrayBuffer());
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

/** Undo per-row filtering in place and return the raw scanline bytes. */
function unfilter(raw: Uint8Array, width: number, height: number): Uint8Array {
  const bpp = 2; // one 16-bit grayscale sample
  const stride = width * bpp;
  const out = new Uint8Array(stride * height);
  for (let row = 0; row < height; row++) {
    const filter = raw[row * (stride + 1)]!;
    const src = row * (stride + 1) + 1;
    const dst = row * stride;
    for (let i = 0; i < stride; i++) {
      const x = raw[src + i]!;
      const a = i >= bpp ? out[dst + i - bpp]! : 0;
      const b = row > 0 ? out[dst + i - stride]! : 0;
      const c = row > 0 && i >= bpp ? out[dst + i - stride - bpp]! : 0;
      let value: number;
      switch (filter) {
        case 0: value = x; break;
        case 1: value = x + a; break;
        case 2: value = x + b; break;
        case 3: value = x + ((a + b) >> 1); break;
        case 4: value = x + paeth(a, b, c); break;
        default: throw new PngFormatError(`unknown filter type ${filter}`);
      }
      out[dst + i] = value & 0xff;
    }
  }
  return out;
}

export async function decodePng16(bytes: Uint8Array): Promise<LabelImage> {
  if (bytes.length < 8 || SIGNATURE.some((v, i) => bytes[i] !== v)) {
    throw new PngFormatError("not a PNG file");
  }

  let width = 0;
  let height = 0;
  let sawHeader = false;
  const idat: Uint8Array[] = [];

  let at = 8;
  while (at + 8 <= bytes.length) {
    const length = u32(bytes, at);
    const type = String.fromCharCode(
      bytes[at + 4]!, bytes[at + 5]!, bytes[at + 6]!, bytes[at + 7]!);
    const data = bytes.subarray(at + 8, at + 8 + length);
    if (data.length < length) throw new PngFormatError("truncated chunk");
    at += 8 + length + 4; // skip CRC

    if (type === "IHDR") {
      width = u32(data, 0);
      height = u32(data, 4);
      const [depth, color, , , interlace] = [
        data[8]!, data[9]!, data[10]!, data[11]!, data[12]!];
      if (depth !== 16 || color !== 0) {
        throw new PngFormatError(
          `expected 16-bit grayscale, got depth ${depth} color type ${color}`);
      }
      if (interlace !== 0) throw new PngFormatError("interlacing unsupported");
      sawHeader = true;
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
    // ancillary chunks are skipped
  }
  if (!sawHeader || idat.length === 0) {
    throw new PngFormatError("missing IHDR or IDAT");
  }
  if (width === 0 || height === 0) throw new PngFormatError("empty image");

  const joined = new Uint8Array(idat.reduce((n, c) => n + c.length, 0));
  let offset = 0;
  for (const chunk of idat) {
    joined.set(chunk, offset);
    offset += chunk.length;
  }
  const raw = await inflate(joined);
  if (raw.length !== height * (width * 2 + 1)) {
    throw new PngFormatError(
      `decompressed to ${raw.length} bytes, expected ${height * (width * 2 + 1)}`);
  }

  const scanlines = unfilter(raw, width, height);
  const data = new Uint16Array(width * height);
  for (let i = 0; i < data.length; i++) {
    data[i] = (scanlines[2 * i]! << 8) | scanlines[2 * i + 1]!; // big-endian
  }
  return { width, height, data };
}

export function base64ToBytes(b64: string): Uint8Array {
  // atob exists in both browsers and node 20
  const binary = atob(b64);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}
