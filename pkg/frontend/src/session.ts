// Client-side challenge session: timed click capture in native image
// coordinates, with auto-submit on the final click.
//
// Click coordinates always leave this module in native image pixel
// space: screen positions are divided by the rendering scale before
// being recorded, whatever the canvas size or device pixel ratio. The
// timer starts when the image paints, not when the page loads.

import type { ClickPayload, VerifyResponse } from "./api.js";

export type SubmitFn = (clicks: ClickPayload[]) => Promise<VerifyResponse>;

export type SessionPhase =
  | "waiting-image"
  | "active"
  | "submitting"
  | "solved"
  | "failed"
  | "error";

export interface SessionOptions {
  sessionId: string;
  prompt: string[];
  imageSize: number;
  renderScale: number; // on-screen pixels per native pixel
  submit: SubmitFn;
  now?: () => number;
}

export class ClientSession {
  readonly sessionId: string;
  readonly prompt: string[];
  readonly imageSize: number;
  readonly renderScale: number;

  clicks: ClickPayload[] = [];
  phase: SessionPhase = "waiting-image";
  result: VerifyResponse | null = null;
  submitCount = 0;

  private startedAt: number | null = null;
  private readonly submit: SubmitFn;
  private readonly now: () => number;
  private pending: Promise<void> | null = null;

  constructor(opts: SessionOptions) {
    this.sessionId = opts.sessionId;
    this.prompt = opts.prompt;
    this.imageSize = opts.imageSize;
    this.renderScale = opts.renderScale;
    this.submit = opts.submit;
    this.now = opts.now ?? (() => performance.now());
  }

  /** Timer origin: the image became visible. */
  markImagePainted(): void {
    if (this.phase !== "waiting-image") return;
    this.startedAt = this.now();
    this.phase = "active";
  }

  get currentIndex(): number {
    return this.clicks.length;
  }

  get complete(): boolean {
    return this.clicks.length === this.prompt.length;
  }

  /**
   * Record a click given in on-screen (display) coordinates. Returns
   * "recorded" | "submitted" when accepted, "ignored" otherwise. Clicks
   * outside the image area, before the image paints, after completion,
   * or after submission are ignored.
   */
  recordClick(displayX: number, displayY: number): "recorded" | "submitted" | "ignored" {
    if (this.phase !== "active" || this.startedAt === null) return "ignored";
    if (this.complete) return "ignored";
    const x = displayX / this.renderScale;
    const y = displayY / this.renderScale;
    if (x < 0 || y < 0 || x > this.imageSize || y > this.imageSize) return "ignored";
    const prev = this.clicks.length ? this.clicks[this.clicks.length - 1].t_ms : 0;
    const t_ms = Math.max(this.now() - this.startedAt, prev);
    this.clicks.push({ x, y, t_ms });
    if (this.complete) {
      this.doSubmit();
      return "submitted";
    }
    return "recorded";
  }

  /** Remove the last click; only possible before submission. */
  undo(): boolean {
    if (this.phase !== "active" || this.clicks.length === 0) return false;
    this.clicks.pop();
    return true;
  }

  /** Give up: submit the incomplete sequence so the attempt counts as failed. */
  abandon(): void {
    if (this.phase !== "active") return;
    this.doSubmit();
  }

  /** Resolves once the verdict (or error) has landed. */
  settled(): Promise<void> {
    return this.pending ?? Promise.resolve();
  }

  private doSubmit(): void {
    if (this.submitCount > 0) return; // exactly one POST per session
    this.submitCount += 1;
    this.phase = "submitting";
    this.pending = this.submit([...this.clicks])
      .then((res) => {
        this.result = res;
        this.phase = res.success ? "solved" : "failed";
      })
      .catch(() => {
        this.phase = "error";
      });
  }
}
