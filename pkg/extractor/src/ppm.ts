/**
 * Minimal PPM image support (P6 binary and P3 ASCII, 8-bit RGB). PPM keeps
 * the extractor dependency-free; fixtures and tests generate PPM directly.
 */
import { readFileSync, writeFileSync } from "fs";

export interface Image {
  width: number;
  height: number;
  /** RGB, row-major, 3 bytes per pixel. */
  pixels: Uint8Array;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

/** Reads the next whitespace-delimited token, skipping `#` comments. */
function nextToken(buf: Uint8Array, pos: number): [string, number] {
  while (pos < buf.length) {
    if (buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
    } else if (isSpace(buf[pos])) {
      pos++;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < buf.length && !isSpace(buf[pos]) && buf[pos] !== 0x23) pos++;
  if (start === pos) throw new Error("unexpected end of PPM header");
  return [Buffer.from(buf.slice(start, pos)).toString("ascii"), pos];
}

export function decodePpm(data: Uint8Array): Image {
  let [magic, pos] = nextToken(data, 0);
  if (magic !== "P6" && magic !== "P3") {
    throw new Error(`unsupported image format ${JSON.stringify(magic)}; expected PPM P6/P3`);
  }
  let widthTok, heightTok, maxTok;
  [widthTok, pos] = nextToken(data, pos);
  [heightTok, pos] = nextToken(data, pos);
  [maxTok, pos] = nextToken(data, pos);
  const width = parseInt(widthTok, 10);
  const height = parseInt(heightTok, 10);
  const maxVal = parseInt(maxTok, 10);
  if (!(width > 0 && height > 0)) throw new Error("invalid PPM dimensions");
  if (maxVal !== 255) throw new Error(`only 8-bit PPM supported, got maxval ${maxVal}`);
  const n = width * height * 3;
  const pixels = new Uint8Array(n);
  if (magic === "P6") {
    pos += 1; // exactly one whitespace byte after maxval
    if (data.length - pos < n) throw new Error("truncated PPM payload");
    pixels.set(data.subarray(pos, pos + n));
  } else {
    for (let i = 0; i < n; i++) {
      let tok;
      [tok, pos] = nextToken(data, pos);
      pixels[i] = parseInt(tok, 10);
    }
  }
  return { width, height, pixels };
}

export function loadImage(path: string): Image {
  return decodePpm(readFileSync(path));
}

export function encodePpm(img: Image): Buffer {
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(img.pixels)]);
}

export function saveImage(path: string, img: Image): void {
  writeFileSync(path, encodePpm(img));
}
