/**
 * Canvas compositing for the editor: base image, semi-transparent mask
 * overlay, prompt markers, and toolpath strokes. Coordinate math is
 * kept pure so it can be unit tested without a canvas.
 */

import { PromptPoint } from './api.js';
import { PixelStroke } from './toolpath.js';

export interface DisplayRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

/**
 * Convert a client (mouse) position into integer image coordinates.
 * Returns null for positions outside the displayed image.
 */
export function displayToImage(
  clientX: number,
  clientY: number,
  rect: DisplayRect,
  imageWidth: number,
  imageHeight: number,
): { x: number; y: number } | null {
  if (rect.width <= 0 || rect.height <= 0) return null;
  const fx = (clientX - rect.left) / rect.width;
  const fy = (clientY - rect.top) / rect.height;
  if (fx < 0 || fx >= 1 || fy < 0 || fy >= 1) return null;
  return { x: Math.floor(fx * imageWidth), y: Math.floor(fy * imageHeight) };
}

export const MASK_FILL = 'rgba(46, 160, 67, 0.45)';
export const FG_MARKER = { fill: '#22c55e', text: '+' };
export const BG_MARKER = { fill: '#ef4444', text: '-' };

export function markerStyle(label: 'fg' | 'bg'): { fill: string; text: string } {
  return label === 'fg' ? FG_MARKER : BG_MARKER;
}

/**
 * Paint the retained region of a black/white mask image as a
 * semi-transparent green layer sized to the base image.
 */
export function maskToOverlayCanvas(mask: HTMLImageElement, width: number, height: number): HTMLCanvasElement {
  const canvas = document.createElement('canvas');
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext('2d')!;
  ctx.drawImage(mask, 0, 0, width, height);
  const data = ctx.getImageData(0, 0, width, height);
  const px = data.data;
  for (let i = 0; i < px.length; i += 4) {
    if (px[i] >= 128) {
      // Retained (white in the mask PNG): tint green.
      px[i] = 46;
      px[i + 1] = 160;
      px[i + 2] = 67;
      px[i + 3] = 115;
    } else {
      px[i + 3] = 0;
    }
  }
  ctx.putImageData(data, 0, 0);
  return canvas;
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  base: CanvasImageSource | null,
  overlay: CanvasImageSource | null,
  markers: PromptPoint[],
  strokes: PixelStroke[],
  scale: number,
  imageWidth: number,
  imageHeight: number,
): void {
  ctx.canvas.width = imageWidth * scale;
  ctx.canvas.height = imageHeight * scale;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  if (base) ctx.drawImage(base, 0, 0, imageWidth * scale, imageHeight * scale);
  if (overlay) ctx.drawImage(overlay, 0, 0, imageWidth * scale, imageHeight * scale);

  ctx.lineWidth = Math.max(1, scale * 0.6);
  ctx.strokeStyle = '#f59e0b';
  ctx.lineCap = 'round';
  for (const s of strokes) {
    ctx.beginPath();
    ctx.moveTo((s.col0 + 0.5) * scale, (s.row0 + 0.5) * scale);
    ctx.lineTo((s.col1 + 0.5) * scale, (s.row1 + 0.5) * scale);
    ctx.stroke();
  }

  const r = Math.max(4, scale * 0.8);
  for (const marker of markers) {
    const { fill } = markerStyle(marker.label);
    const cx = (marker.x + 0.5) * scale;
    const cy = (marker.y + 0.5) * scale;
    ctx.beginPath();
    ctx.arc(cx, cy, r, 0, Math.PI * 2);
    ctx.fillStyle = fill;
    ctx.fill();
    ctx.lineWidth = 1.5;
    ctx.strokeStyle = '#ffffff';
    ctx.stroke();
  }
}
