/** Model behind the live loss chart: one polyline per Stage-1 run, fed by
 * loss events. Steps within a run must strictly increase; out-of-order
 * deliveries (e.g. replay overlap races) are dropped rather than drawn
 * backwards.
 */

export interface LossPoint {
  step: number;
  lClip: number;
  lSegs: number[];
  lTotal: number;
}

export interface ChartBounds {
  minStep: number;
  maxStep: number;
  minLoss: number;
  maxLoss: number;
}

export class LossTrace {
  private byRun = new Map<number, LossPoint[]>();

  /** Returns false (and stores nothing) for a step that does not advance
   * its run, or for non-finite loss values. */
  add(run: number, point: LossPoint): boolean {
    if (!Number.isFinite(point.step) || !Number.isFinite(point.lTotal)) {
      return false;
    }
    let series = this.byRun.get(run);
    if (series === undefined) {
      series = [];
      this.byRun.set(run, series);
    }
    const lastPoint = series[series.length - 1];
    if (lastPoint !== undefined && point.step <= lastPoint.step) {
      return false;
    }
    series.push(point);
    return true;
  }

  isEmpty(): boolean {
    return this.byRun.size === 0;
  }

  runs(): number[] {
    return [...this.byRun.keys()].sort((a, b) => a - b);
  }

  series(run: number): readonly LossPoint[] {
    return this.byRun.get(run) ?? [];
  }

  clear(): void {
    this.byRun.clear();
  }

  bounds(): ChartBounds | null {
    let minStep = Infinity;
    let maxStep = -Infinity;
    let minLoss = Infinity;
    let maxLoss = -Infinity;
    for (const series of this.byRun.values()) {
      for (const p of series) {
        minStep = Math.min(minStep, p.step);
        maxStep = Math.max(maxStep, p.step);
        minLoss = Math.min(minLoss, p.lTotal);
        maxLoss = Math.max(maxLoss, p.lTotal);
      }
    }
    if (!Number.isFinite(minStep)) {
      return null;
    }
    return { minStep, maxStep, minLoss, maxLoss };
  }

  /** Pixel coordinates for one run's polyline in a width x height viewport.
   * X positions are strictly increasing; Y grows downward (canvas space),
   * so lower loss plots lower on the chart's value axis means higher y. */
  polyline(
    run: number,
    width: number,
    height: number,
    pad = 8,
  ): Array<[number, number]> {
    const bounds = this.bounds();
    const series = this.byRun.get(run);
    if (bounds === null || series === undefined) {
      return [];
    }
    const spanX = bounds.maxStep - bounds.minStep || 1;
    const spanY = bounds.maxLoss - bounds.minLoss || 1;
    const innerW = width - 2 * pad;
    const innerH = height - 2 * pad;
    return series.map((p) => [
      pad + ((p.step - bounds.minStep) / spanX) * innerW,
      pad + ((bounds.maxLoss - p.lTotal) / spanY) * innerH,
    ]);
  }
}
