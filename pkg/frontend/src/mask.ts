/** The drawable mask: a grid of class ids at the backend's working
 * resolution, a class/radius brush, and an undo stack of whole-grid
 * snapshots (one per stroke).
 */
import { decodePGM, encodePGM, IndexMapError } from "./indexmap";

export class EmptyMaskError extends Error {}

export interface Brush {
  classId: number;
  radius: number;
}

const MAX_UNDO = 64;

export class CanvasMask {
  readonly width: number;
  readonly height: number;
  readonly numClasses: number;

  private grid: Uint8Array;
  private undoStack: Uint8Array[] = [];
  /** Snapshot taken when the current stroke opened; null between strokes. */
  private strokeSnapshot: Uint8Array | null = null;
  private strokeChanged = false;

  brush: Brush = { classId: 1, radius: 1 };

  constructor(width: number, height: number, numClasses: number) {
    if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
      throw new RangeError(`bad canvas size ${width}x${height}`);
    }
    if (!Number.isInteger(numClasses) || numClasses < 2 || numClasses > 256) {
      throw new RangeError(`numClasses must be in [2, 256], got ${numClasses}`);
    }
    this.width = width;
    this.height = height;
    this.numClasses = numClasses;
    this.grid = new Uint8Array(width * height);
  }

  setBrush(classId: number, radius: number): void {
    if (!Number.isInteger(classId) || classId < 0 || classId >= this.numClasses) {
      throw new RangeError(`class id ${classId} outside vocabulary`);
    }
    if (!Number.isInteger(radius) || radius < 0) {
      throw new RangeError(`brush radius must be a nonnegative integer`);
    }
    this.brush = { classId, radius };
  }

  cell(x: number, y: number): number {
    if (x < 0 || y < 0 || x >= this.width || y >= this.height) {
      throw new RangeError(`cell (${x}, ${y}) out of bounds`);
    }
    return this.grid[y * this.width + x];
  }

  /** Copy of the current grid (row-major). */
  snapshot(): Uint8Array {
    return this.grid.slice();
  }

  beginStroke(): void {
    if (this.strokeSnapshot === null) {
      this.strokeSnapshot = this.grid.slice();
      this.strokeChanged = false;
    }
  }

  /** Stamp the brush circle centered on (x, y); coordinates are floored and
   * the stamp is clipped to the canvas. Opens a stroke if none is active.
   * Returns the number of cells that changed class. */
  paint(x: number, y: number): number {
    this.beginStroke();
    const cx = Math.floor(x);
    const cy = Math.floor(y);
    const { classId, radius } = this.brush;
    let changed = 0;
    for (let dy = -radius; dy <= radius; dy++) {
      const py = cy + dy;
      if (py < 0 || py >= this.height) continue;
      for (let dx = -radius; dx <= radius; dx++) {
        const px = cx + dx;
        if (px < 0 || px >= this.width) continue;
        if (dx * dx + dy * dy > radius * radius) continue;
        const idx = py * this.width + px;
        if (this.grid[idx] !== classId) {
          this.grid[idx] = classId;
          changed++;
        }
      }
    }
    if (changed > 0) {
      this.strokeChanged = true;
    }
    return changed;
  }

  /** Commit the open stroke (if it changed anything) as one undo unit. */
  endStroke(): void {
    if (this.strokeSnapshot !== null && this.strokeChanged) {
      this.undoStack.push(this.strokeSnapshot);
      if (this.undoStack.length > MAX_UNDO) {
        this.undoStack.shift();
      }
    }
    this.strokeSnapshot = null;
    this.strokeChanged = false;
  }

  /** Restore the grid to before the last stroke. An uncommitted stroke is
   * cancelled first. Returns false when there is nothing to undo. */
  undo(): boolean {
    if (this.strokeSnapshot !== null && this.strokeChanged) {
      this.grid = this.strokeSnapshot;
      this.strokeSnapshot = null;
      this.strokeChanged = false;
      return true;
    }
    this.strokeSnapshot = null;
    this.strokeChanged = false;
    const prev = this.undoStack.pop();
    if (prev === undefined) {
      return false;
    }
    this.grid = prev;
    return true;
  }

  /** Reset every cell to background, as a single undoable stroke. */
  clear(): void {
    this.endStroke();
    if (!this.hasForeground()) {
      return;
    }
    this.undoStack.push(this.grid.slice());
    if (this.undoStack.length > MAX_UNDO) {
      this.undoStack.shift();
    }
    this.grid.fill(0);
  }

  hasForeground(): boolean {
    return this.grid.some((v) => v !== 0);
  }

  /** Serialize to the wire index-map format. Submitting an all-background
   * mask is a user error the UI must catch before upload. */
  exportBytes(): Uint8Array {
    if (!this.hasForeground()) {
      throw new EmptyMaskError(
        "draw at least one foreground pixel before submitting",
      );
    }
    return encodePGM(this.width, this.height, this.grid);
  }

  static fromBytes(bytes: Uint8Array, numClasses: number): CanvasMask {
    const { width, height, grid } = decodePGM(bytes);
    const mask = new CanvasMask(width, height, numClasses);
    for (const v of grid) {
      if (v >= numClasses) {
        throw new IndexMapError(
          `index map contains class id ${v} outside the ${numClasses}-class vocabulary`,
        );
      }
    }
    mask.grid = grid.slice();
    return mask;
  }

  /** Colorize into an RGBA buffer of length width*height*4 (palette colors
   * are 0..1 floats, as the vocabulary serves them). */
  renderInto(
    rgba: Uint8ClampedArray,
    palette: ReadonlyArray<readonly [number, number, number]>,
  ): void {
    if (rgba.length !== this.width * this.height * 4) {
      throw new RangeError("rgba buffer size mismatch");
    }
    if (palette.length < this.numClasses) {
      throw new RangeError("palette smaller than vocabulary");
    }
    for (let i = 0; i < this.grid.length; i++) {
      const color = palette[this.grid[i]];
      rgba[i * 4] = Math.round(color[0] * 255);
      rgba[i * 4 + 1] = Math.round(color[1] * 255);
      rgba[i * 4 + 2] = Math.round(color[2] * 255);
      rgba[i * 4 + 3] = 255;
    }
  }
}
