/**
 * Annotation session controller. Holds all view state and talks to the
 * service; free of DOM so it can be driven headlessly in tests.
 *
 * The segmentation itself is never edited here: every label buffer comes
 * straight out of a decoded service response.
 */

import { ApiClient, ApiError } from "./api.js";
import { base64ToBytes, decodePng16 } from "./png16.js";
import type {
  LabelImage, Point, RegionQuadruple, RegionSummary, SegmentationResponse,
} from "./types.js";

export type ToolMode = "extreme-point" | "scribble";

export interface ViewState {
  sessionId: string | null;
  width: number;
  height: number;
  revision: number;
  nRegions: number;
  labels: LabelImage | null;
  summary: RegionSummary[];
  toolMode: ToolMode;
  activeRegion: number;
  opacity: number;
  /** extreme-point clicks for the region being placed, in image coords */
  pendingClicks: Point[];
  /** completed 4-click regions awaiting submit */
  stagedRegions: Point[][];
  /** scribble in progress, in image coords */
  pendingStroke: Point[];
  /** inline guidance ("finish the region", "redraw after conflict") */
  prompt: string | null;
  /** hard errors (network, malformed response) */
  banner: string | null;
  /** warnings returned by the last mutation */
  warnings: string[];
}

export interface Box {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/** Axis-aligned extent of a set of clicks, for the staging preview. */
export function boxFromClicks(clicks: Point[]): Box | null {
  if (clicks.length === 0) return null;
  let x0 = Infinity, y0 = Infinity, x1 = -Infinity, y1 = -Infinity;
  for (const [x, y] of clicks) {
    if (x < x0) x0 = x;
    if (x > x1) x1 = x;
    if (y < y0) y0 = y;
    if (y > y1) y1 = y;
  }
  return { x0, y0, x1, y1 };
}

/**
 * Named extreme points from 4 clicks: the service wants left/right/top/
 * bottom explicitly, so take the extremal click along each axis.
 */
export function quadrupleFromClicks(clicks: Point[]): RegionQuadruple {
  if (clicks.length !== 4) {
    throw new Error(`need exactly 4 clicks, got ${clicks.length}`);
  }
  let left = clicks[0]!, right = clicks[0]!, top = clicks[0]!, bottom = clicks[0]!;
  for (const p of clicks) {
    if (p[0] < left[0]) left = p;
    if (p[0] > right[0]) right = p;
    if (p[1] < top[1]) top = p;
    if (p[1] > bottom[1]) bottom = p;
  }
  return { left, right, top, bottom };
}

export class AnnotatorController {
  readonly state: ViewState = {
    sessionId: null,
    width: 0,
    height: 0,
    revision: 0,
    nRegions: 0,
    labels: null,
    summary: [],
    toolMode: "extreme-point",
    activeRegion: 1,
    opacity: 0.5,
    pendingClicks: [],
    stagedRegions: [],
    pendingStroke: [],
    prompt: null,
    banner: null,
    warnings: [],
  };

  /** device pixels per image pixel; pointer input is divided by this */
  viewScale = 1;

  private listeners: Array<() => void> = [];
  private queue: Array<() => Promise<void>> = [];
  private inFlight = false;
  private drainWaiters: Array<() => void> = [];

  constructor(private readonly api: ApiClient) {}

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }

  async startFromScene(sceneId: string): Promise<void> {
    this.adoptSession(await this.api.createSessionFromScene(sceneId));
  }

  async startFromImage(pngBase64: string): Promise<void> {
    this.adoptSession(await this.api.createSessionFromImage(pngBase64));
  }

  private adoptSession(info: {
    session_id: string; revision: number; width: number; height: number;
  }): void {
    const s = this.state;
    s.sessionId = info.session_id;
    s.revision = info.revision;
    s.width = info.width;
    s.height = info.height;
    s.nRegions = 0;
    s.labels = null;
    s.summary = [];
    s.toolMode = "extreme-point";
    s.activeRegion = 1;
    s.pendingClicks = [];
    s.stagedRegions = [];
    s.pendingStroke = [];
    s.prompt = null;
    s.banner = null;
    s.warnings = [];
    this.notify();
  }

  setOpacity(value: number): void {
    this.state.opacity = Math.min(1, Math.max(0, value));
    this.notify();
  }

  setToolMode(mode: ToolMode): void {
    if (mode === "scribble" && this.state.labels === null) {
      this.state.prompt = "submit extreme points before scribbling";
      this.notify();
      return;
    }
    this.state.toolMode = mode;
    this.state.prompt = null;
    this.notify();
  }

  setActiveRegion(regionId: number): void {
    if (regionId >= 1 && regionId <= this.state.nRegions) {
      this.state.activeRegion = regionId;
      this.notify();
    }
  }

  // ---- pointer input (device coordinates) ----

  private toImage(xDev: number, yDev: number): Point {
    const x = xDev / this.viewScale;
    const y = yDev / this.viewScale;
    // clamp so a drag past the edge still produces a legal polyline
    return [
      Math.min(Math.max(x, 0), this.state.width - 1),
      Math.min(Math.max(y, 0), this.state.height - 1),
    ];
  }

  pointerDown(xDev: number, yDev: number): void {
    const p = this.toImage(xDev, yDev);
    if (this.state.toolMode === "extreme-point") {
      this.addClick(p);
    } else {
      this.state.pendingStroke = [p];
      this.notify();
    }
  }

  pointerMove(xDev: number, yDev: number): void {
    const stroke = this.state.pendingStroke;
    if (this.state.toolMode !== "scribble" || stroke.length === 0) return;
    const p = this.toImage(xDev, yDev);
    const last = stroke[stroke.length - 1]!;
    // drop sub-pixel jitter so a plain click stays a single point
    if (Math.round(last[0]) === Math.round(p[0]) &&
        Math.round(last[1]) === Math.round(p[1])) {
      return;
    }
    stroke.push(p);
    this.notify();
  }

  pointerUp(): void {
    if (this.state.toolMode !== "scribble") return;
    const stroke = this.state.pendingStroke;
    this.state.pendingStroke = [];
    if (stroke.length === 0) return;
    if (stroke.length === 1) {
      this.pickRegion(stroke[0]!);
      return;
    }
    this.enqueue(() => this.sendScribble(stroke));
    this.notify();
  }

  /** click-to-pick: a click without a drag selects the region under it */
  private pickRegion(p: Point): void {
    const labels = this.state.labels;
    if (labels === null) return;
    const idx = Math.round(p[1]) * labels.width + Math.round(p[0]);
    const label = labels.data[idx];
    if (label !== undefined && label >= 1) {
      this.state.activeRegion = label;
      this.state.prompt = null;
    }
    this.notify();
  }

  // ---- extreme points ----

  private addClick(p: Point): void {
    this.state.pendingClicks.push(p);
    if (this.state.pendingClicks.length === 4) {
      this.state.stagedRegions.push(this.state.pendingClicks);
      this.state.pendingClicks = [];
    }
    this.state.prompt = null;
    this.notify();
  }

  undoClick(): void {
    const s = this.state;
    if (s.pendingClicks.length === 0 && s.stagedRegions.length > 0) {
      // reopen the most recently staged region
      s.pendingClicks = s.stagedRegions.pop()!;
    }
    s.pendingClicks.pop();
    this.notify();
  }

  /** Submit all staged regions. Returns false when staging is incomplete. */
  submitExtremePoints(): boolean {
    const s = this.state;
    if (s.pendingClicks.length > 0) {
      s.prompt = `finish the current region: ${s.pendingClicks.length} of 4 ` +
        "extreme points placed";
      this.notify();
      return false;
    }
    if (s.stagedRegions.length === 0) {
      s.prompt = "place 4 extreme points on each region first";
      this.notify();
      return false;
    }
    const regions = s.stagedRegions.map(quadrupleFromClicks);
    this.enqueue(async () => {
      const resp = await this.api.submitExtremePoints(
        s.sessionId!, regions, s.revision);
      s.stagedRegions = [];
      s.toolMode = "scribble";
      s.activeRegion = 1;
      await this.applyResponse(resp);
    });
    return true;
  }

  // ---- scribbles ----

  private async sendScribble(points: Point[]): Promise<void> {
    const s = this.state;
    // the revision is read here, not at enqueue time, so a queued stroke
    // carries the revision returned by the stroke before it
    const resp = await this.api.submitScribbles(
      s.sessionId!,
      [{ region_id: s.activeRegion, points }],
      s.revision);
    await this.applyResponse(resp);
  }

  private async applyResponse(resp: SegmentationResponse): Promise<void> {
    const s = this.state;
    let labels: LabelImage;
    try {
      labels = await decodePng16(base64ToBytes(resp.label_png));
    } catch (err) {
      s.banner = `label image did not decode: ${String(err)}`;
      this.notify();
      return;
    }
    if (labels.width !== s.width || labels.height !== s.height) {
      s.banner = `label image is ${labels.width}x${labels.height}, ` +
        `expected ${s.width}x${s.height}`;
      this.notify();
      return;
    }
    s.labels = labels;
    s.revision = resp.revision;
    s.nRegions = resp.n_regions;
    s.summary = resp.summary;
    s.warnings = resp.warnings ?? [];
    s.banner = null;
    if (s.activeRegion > s.nRegions) s.activeRegion = s.nRegions;
    if (s.activeRegion < 1) s.activeRegion = 1;
    this.notify();
  }

  // ---- mutation queue: at most one request in flight, strictly FIFO ----

  private enqueue(task: () => Promise<void>): void {
    this.queue.push(task);
    void this.pump();
  }

  private async pump(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    try {
      for (;;) {
        const task = this.queue.shift();
        if (task === undefined) break;
        try {
          await task();
        } catch (err) {
          await this.handleMutationError(err);
        }
      }
    } finally {
      this.inFlight = false;
      for (const w of this.drainWaiters.splice(0)) w();
      this.notify();
    }
  }

  /** Resolves once every queued mutation has settled. */
  idle(): Promise<void> {
    if (!this.inFlight && this.queue.length === 0) return Promise.resolve();
    return new Promise((resolve) => this.drainWaiters.push(resolve));
  }

  private async handleMutationError(err: unknown): Promise<void> {
    const s = this.state;
    if (err instanceof ApiError && err.code === "revision_conflict") {
      // refetch-and-redraw: drop anything queued behind the stale stroke,
      // adopt the segmentation we raced against, ask the user to redraw
      this.queue.length = 0;
      try {
        await this.applyResponse(await this.api.getSegmentation(s.sessionId!));
      } catch (refetchErr) {
        s.banner = `refetch after conflict failed: ${String(refetchErr)}`;
      }
      s.prompt = "the segmentation changed underneath your stroke; " +
        "it was not applied, please redraw";
    } else if (err instanceof ApiError) {
      s.prompt = err.message;
    } else {
      s.banner = String(err);
    }
    this.notify();
  }
}
