/**
 * Session view state and the single-flight mutation queue.
 *
 * Invariants the controller maintains:
 *  - the mask shown is always the server's bytes (mask_png_b64), never a
 *    client-side prediction;
 *  - the marker list mirrors the server's custom prompt history exactly;
 *  - at most one mutating request is in flight, later clicks are ignored
 *    until the response lands;
 *  - undo removes the last prompt on the server and re-renders from the
 *    response, so post-undo state equals the pre-prompt state.
 */

import {
  ApiClient,
  EvaluationReport,
  GcodeExport,
  MachineForm,
  PromptLabel,
  PromptPoint,
  ProposalInfo,
} from './api.js';

export interface ViewState {
  sessionId: string | null;
  imageWidth: number;
  imageHeight: number;
  maskPngB64: string | null;
  markers: PromptPoint[];
  proposals: ProposalInfo[];
  pending: boolean;
  lastDelta: number | null;
  evaluation: EvaluationReport | null;
  gcode: GcodeExport | null;
  error: string | null;
}

export type MutationOutcome = 'applied' | 'ignored';

export function initialState(): ViewState {
  return {
    sessionId: null,
    imageWidth: 0,
    imageHeight: 0,
    maskPngB64: null,
    markers: [],
    proposals: [],
    pending: false,
    lastDelta: null,
    evaluation: null,
    gcode: null,
    error: null,
  };
}

export class SessionController {
  state: ViewState = initialState();
  private hasTruth = false;

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: (state: ViewState) => void = () => {},
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  private fail(err: unknown): void {
    this.state.error = err instanceof Error ? err.message : String(err);
    this.emit();
  }

  async open(image: Blob, config: unknown, width: number, height: number): Promise<MutationOutcome> {
    if (this.state.pending) return 'ignored';
    this.state = { ...initialState(), pending: true, imageWidth: width, imageHeight: height };
    this.emit();
    try {
      const created = await this.api.createSession(image, config);
      this.state.sessionId = created.id;
      this.state.maskPngB64 = created.mask_png_b64;
      this.state.proposals = created.proposals;
      this.hasTruth = false;
      return 'applied';
    } catch (err) {
      this.fail(err);
      return 'ignored';
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }

  /** Place a prompt; ignored while another request is pending. */
  async placePrompt(x: number, y: number, label: PromptLabel): Promise<MutationOutcome> {
    if (this.state.pending || !this.state.sessionId) return 'ignored';
    this.state.pending = true;
    this.state.error = null;
    this.emit();
    try {
      const update = await this.api.addPrompt(this.state.sessionId, { x, y, label });
      this.state.markers = [...this.state.markers, { x, y, label }];
      this.state.maskPngB64 = update.mask_png_b64;
      this.state.proposals = update.proposals;
      this.state.lastDelta = update.delta;
      await this.maybeRefreshEvaluation();
      return 'applied';
    } catch (err) {
      this.fail(err);
      return 'ignored';
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }

  /** Remove the most recent prompt via DELETE and adopt the server mask. */
  async undo(): Promise<MutationOutcome> {
    if (this.state.pending || !this.state.sessionId || this.state.markers.length === 0) {
      return 'ignored';
    }
    this.state.pending = true;
    this.state.error = null;
    this.emit();
    try {
      const index = this.state.markers.length - 1;
      const update = await this.api.removePrompt(this.state.sessionId, index);
      this.state.markers = this.state.markers.slice(0, -1);
      this.state.maskPngB64 = update.mask_png_b64;
      this.state.proposals = update.proposals;
      this.state.lastDelta = update.delta;
      await this.maybeRefreshEvaluation();
      return 'applied';
    } catch (err) {
      this.fail(err);
      return 'ignored';
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }

  async uploadTruth(image: Blob): Promise<MutationOutcome> {
    if (this.state.pending || !this.state.sessionId) return 'ignored';
    this.state.pending = true;
    this.emit();
    try {
      await this.api.uploadTruth(this.state.sessionId, image);
      this.hasTruth = true;
      await this.maybeRefreshEvaluation();
      return 'applied';
    } catch (err) {
      this.fail(err);
      return 'ignored';
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }

  private async maybeRefreshEvaluation(): Promise<void> {
    if (!this.hasTruth || !this.state.sessionId) return;
    this.state.evaluation = await this.api.evaluate(this.state.sessionId);
  }

  async previewGcode(machine: MachineForm): Promise<MutationOutcome> {
    if (this.state.pending || !this.state.sessionId) return 'ignored';
    this.state.pending = true;
    this.state.error = null;
    this.emit();
    try {
      this.state.gcode = await this.api.exportGcode(this.state.sessionId, machine);
      return 'applied';
    } catch (err) {
      this.fail(err);
      return 'ignored';
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }
}

/** Per-field validation for the machine config form. */
export function validateMachineForm(raw: Record<string, string>): {
  machine?: MachineForm;
  errors: Record<string, string>;
} {
  const errors: Record<string, string> = {};
  const num = (field: string, text: string): number => {
    const value = Number(text);
    if (text.trim() === '' || !Number.isFinite(value)) {
      errors[field] = 'must be a number';
    }
    return value;
  };
  const mmPerPixel = num('mm_per_pixel', raw.mm_per_pixel ?? '');
  const safeZ = num('safe_z', raw.safe_z ?? '5');
  const cutZ = num('cut_z', raw.cut_z ?? '-1');
  const feed = num('feed_rate', raw.feed_rate ?? '300');
  const plunge = num('plunge_rate', raw.plunge_rate ?? '100');
  const rpm = num('spindle_rpm', raw.spindle_rpm ?? '10000');

  if (!errors.mm_per_pixel && mmPerPixel <= 0) errors.mm_per_pixel = 'must be > 0';
  if (!errors.safe_z && safeZ <= 0) errors.safe_z = 'must be > 0';
  if (!errors.cut_z && cutZ >= 0) errors.cut_z = 'must be < 0';
  if (!errors.feed_rate && feed <= 0) errors.feed_rate = 'must be > 0';
  if (!errors.plunge_rate && plunge <= 0) errors.plunge_rate = 'must be > 0';
  if (!errors.spindle_rpm && (rpm <= 0 || !Number.isInteger(rpm))) {
    errors.spindle_rpm = 'must be a positive integer';
  }
  if (Object.keys(errors).length > 0) return { errors };
  return {
    machine: {
      mm_per_pixel: mmPerPixel,
      safe_z: safeZ,
      cut_z: cutZ,
      feed_rate: feed,
      plunge_rate: plunge,
      spindle_rpm: rpm,
      optimize: raw.optimize === 'true',
    },
    errors,
  };
}
