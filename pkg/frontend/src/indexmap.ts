/** Lossless index-map codec (binary PGM, one byte per pixel = class id).
 *
 * The byte layout matches the service's own encoder exactly
 * ("P5\n{w} {h}\n255\n" + row-major payload), so a mask exported here,
 * uploaded, stored, and fetched back compares byte-identical.
 */

export class IndexMapError extends Error {}

export interface IndexMap {
  width: number;
  height: number;
  /** Row-major class ids, length width * height. */
  grid: Uint8Array;
}

export function encodePGM(
  width: number,
  height: number,
  grid: Uint8Array,
): Uint8Array {
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new IndexMapError(`bad dimensions ${width}x${height}`);
  }
  if (grid.length !== width * height) {
    throw new IndexMapError(
      `grid has ${grid.length} cells, expected ${width * height}`,
    );
  }
  const header = new TextEncoder().encode(`P5\n${width} ${height}\n255\n`);
  const out = new Uint8Array(header.length + grid.length);
  out.set(header, 0);
  out.set(grid, header.length);
  return out;
}

const PGM_HEADER = /^P5\s+(\d+)\s+(\d+)\s+(\d+)\s/;

export function decodePGM(bytes: Uint8Array): IndexMap {
  if (bytes.length < 2 || bytes[0] !== 0x50 || bytes[1] !== 0x35) {
    throw new IndexMapError("not a P5 index map");
  }
  // The header is pure ASCII; decode just enough of it to parse.
  const head = new TextDecoder("latin1").decode(
    bytes.subarray(0, Math.min(bytes.length, 64)),
  );
  const match = PGM_HEADER.exec(head);
  if (!match) {
    throw new IndexMapError("malformed P5 header");
  }
  const width = Number(match[1]);
  const height = Number(match[2]);
  const maxVal = Number(match[3]);
  if (maxVal > 255) {
    throw new IndexMapError(`16-bit P5 not supported (maxval ${maxVal})`);
  }
  const offset = match[0].length;
  const expected = width * height;
  if (bytes.length - offset !== expected) {
    throw new IndexMapError(
      `payload has ${bytes.length - offset} bytes, expected ${expected}`,
    );
  }
  return { width, height, grid: bytes.slice(offset) };
}

/** Standard base64 of raw bytes, for the job spec's mask_b64 field. */
export function bytesToBase64(bytes: Uint8Array): string {
  const BufferCtor = (globalThis as Record<string, any>)["Buffer"];
  if (typeof BufferCtor !== "undefined") {
    return BufferCtor.from(bytes).toString("base64");
  }
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}
