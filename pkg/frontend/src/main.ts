/**
 * Editor wiring: file pickers, click-to-prompt, undo, ground-truth IoU
 * readout, toolpath preview and G-code download.
 */

import { ApiClient } from './api.js';
import { displayToImage, drawScene, maskToOverlayCanvas } from './overlay.js';
import { SessionController, ViewState, validateMachineForm } from './state.js';
import { PixelStroke, extractCutStrokes, strokeToPixels } from './toolpath.js';

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const api = new ApiClient('..');
let baseImage: HTMLImageElement | null = null;
let overlayCanvas: HTMLCanvasElement | null = null;
let strokes: PixelStroke[] = [];
let scale = 3;

const canvas = $('editor') as unknown as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;

function render(state: ViewState): void {
  drawScene(ctx, baseImage, overlayCanvas, state.markers, strokes, scale,
    state.imageWidth, state.imageHeight);
  $('status').textContent = state.pending ? 'working…'
    : state.error ? `error: ${state.error}`
    : state.sessionId ? `session ${state.sessionId}` : 'no session';
  $('delta').textContent = state.lastDelta === null ? '' : `last change: ${state.lastDelta} px`;
  const evalBox = $('evaluation');
  if (state.evaluation) {
    const grade = state.evaluation.grade ? `, grade ${state.evaluation.grade}` : '';
    evalBox.textContent = `IoU ${state.evaluation.iou_percent.toFixed(1)}% (${state.evaluation.quality}${grade})`;
  } else {
    evalBox.textContent = 'no ground truth loaded';
  }
  const stats = $('gcode-stats');
  if (state.gcode) {
    stats.textContent = `cut ${state.gcode.cut_mm.toFixed(1)} mm, rapid ${state.gcode.rapid_mm.toFixed(1)} mm, `
      + `removes ${state.gcode.removed_cells} cells`;
  }
  ($('undo') as HTMLButtonElement).disabled = state.pending || state.markers.length === 0;
  const proposals = state.proposals
    .map((p) => `${(p.confidence * 100).toFixed(0)}% · ${p.pixels} px`)
    .join('\n');
  $('proposals').textContent = proposals || 'no proposals';
}

const controller = new SessionController(api, (state) => {
  if (state.maskPngB64) {
    const mask = new Image();
    mask.onload = () => {
      overlayCanvas = maskToOverlayCanvas(mask, state.imageWidth, state.imageHeight);
      render(state);
    };
    mask.src = `data:image/png;base64,${state.maskPngB64}`;
  } else {
    overlayCanvas = null;
  }
  render(state);
});

function currentLabel(): 'fg' | 'bg' {
  return ($('label-bg') as HTMLInputElement).checked ? 'bg' : 'fg';
}

function defaultConfig(): unknown {
  try {
    return JSON.parse(($('config') as HTMLTextAreaElement).value || '{}');
  } catch {
    $('status').textContent = 'error: config is not valid JSON';
    return null;
  }
}

$('image-file').addEventListener('change', async (event) => {
  const input = event.target as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) return;
  const config = defaultConfig();
  if (config === null) return;
  const bitmap = await createImageBitmap(file);
  const img = new Image();
  img.src = URL.createObjectURL(file);
  await img.decode();
  baseImage = img;
  strokes = [];
  scale = Math.max(1, Math.floor(640 / bitmap.width));
  await controller.open(file, config, bitmap.width, bitmap.height);
});

$('truth-file').addEventListener('change', async (event) => {
  const input = event.target as HTMLInputElement;
  const file = input.files?.[0];
  if (file) await controller.uploadTruth(file);
});

canvas.addEventListener('click', async (event) => {
  const rect = canvas.getBoundingClientRect();
  const point = displayToImage(event.clientX, event.clientY, rect,
    controller.state.imageWidth, controller.state.imageHeight);
  if (point) await controller.placePrompt(point.x, point.y, currentLabel());
});

$('undo').addEventListener('click', () => void controller.undo());

$('preview').addEventListener('click', async () => {
  const fields: Record<string, string> = {
    mm_per_pixel: ($('mm-per-pixel') as HTMLInputElement).value,
    safe_z: ($('safe-z') as HTMLInputElement).value,
    cut_z: ($('cut-z') as HTMLInputElement).value,
    feed_rate: ($('feed-rate') as HTMLInputElement).value,
    plunge_rate: ($('plunge-rate') as HTMLInputElement).value,
    spindle_rpm: ($('spindle-rpm') as HTMLInputElement).value,
    optimize: String(($('optimize') as HTMLInputElement).checked),
  };
  const { machine, errors } = validateMachineForm(fields);
  for (const id of ['mm-per-pixel', 'safe-z', 'cut-z', 'feed-rate', 'plunge-rate', 'spindle-rpm']) {
    const key = id.replace(/-/g, '_');
    $(id).classList.toggle('invalid', key in errors);
    $(`${id}-error`).textContent = errors[key] ?? '';
  }
  if (!machine) return;
  const outcome = await controller.previewGcode(machine);
  if (outcome === 'applied' && controller.state.gcode) {
    strokes = extractCutStrokes(controller.state.gcode.gcode)
      .map((s) => strokeToPixels(s, machine.mm_per_pixel, controller.state.imageHeight));
    render(controller.state);
  }
});

$('download').addEventListener('click', () => {
  const program = controller.state.gcode?.gcode;
  if (!program) return;
  const blob = new Blob([program], { type: 'text/plain' });
  const link = document.createElement('a');
  link.href = URL.createObjectURL(blob);
  link.download = 'out.gcode';
  link.click();
  URL.revokeObjectURL(link.href);
});
