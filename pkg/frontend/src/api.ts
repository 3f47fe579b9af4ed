/**
 * Typed client for the segmentation service HTTP API.
 *
 * The fetch implementation is injectable so tests can run against a
 * fake server without a browser or network.
 */

export type PromptLabel = 'fg' | 'bg';

export interface PromptPoint {
  x: number;
  y: number;
  label: PromptLabel;
}

export interface ProposalInfo {
  confidence: number;
  backend_id: string;
  pixels: number;
  seed_prompts: number[];
}

export interface SessionCreated {
  id: string;
  mask_png_b64: string;
  proposals: ProposalInfo[];
  prompt_count: number;
  warnings: string[];
}

export interface MaskUpdate {
  mask_png_b64: string;
  delta: number;
  proposals: ProposalInfo[];
  prompt_index?: number;
}

export interface MachineForm {
  mm_per_pixel: number;
  safe_z?: number;
  cut_z?: number;
  feed_rate?: number;
  plunge_rate?: number;
  spindle_rpm?: number;
  tool_diameter?: number | null;
  optimize?: boolean;
}

export interface GcodeExport {
  gcode: string;
  cut_mm: number;
  rapid_mm: number;
  removed_cells: number;
  warnings: string[];
}

export interface EvaluationReport {
  id: string;
  iou_ratio: number;
  iou_percent: number;
  quality: string;
  grade?: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

async function parseError(response: Response): Promise<never> {
  let code = 'unknown';
  let message = `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // Non-JSON error body; keep the defaults.
  }
  throw new ApiError(response.status, code, message);
}

export class ApiClient {
  constructor(
    private readonly baseUrl = '',
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  createSession(image: Blob, config: unknown): Promise<SessionCreated> {
    const form = new FormData();
    form.append('image', image, 'image.png');
    form.append('config', JSON.stringify(config ?? {}));
    return this.request<SessionCreated>('/sessions', { method: 'POST', body: form });
  }

  addPrompt(sessionId: string, point: PromptPoint): Promise<MaskUpdate> {
    return this.request<MaskUpdate>(`/sessions/${sessionId}/prompts`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(point),
    });
  }

  removePrompt(sessionId: string, index: number): Promise<MaskUpdate> {
    return this.request<MaskUpdate>(`/sessions/${sessionId}/prompts/${index}`, {
      method: 'DELETE',
    });
  }

  uploadTruth(sessionId: string, image: Blob): Promise<{ ok: boolean; truth_pixels: number }> {
    const form = new FormData();
    form.append('truth', image, 'truth.png');
    return this.request(`/sessions/${sessionId}/truth`, { method: 'POST', body: form });
  }

  evaluate(sessionId: string): Promise<EvaluationReport> {
    return this.request<EvaluationReport>(`/sessions/${sessionId}/evaluation`);
  }

  exportGcode(sessionId: string, machine: MachineForm): Promise<GcodeExport> {
    return this.request<GcodeExport>(`/sessions/${sessionId}/gcode`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(machine),
    });
  }

  maskUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/mask.png`;
  }
}
