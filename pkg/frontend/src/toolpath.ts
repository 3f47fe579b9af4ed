/**
 * Minimal G-code reading for the toolpath preview.
 *
 * Walks G0/G1 moves with sticky coordinates and collects the XY strokes
 * executed below the surface (z < 0), which is where the engraver cuts.
 * Machine (x, y) maps back to image pixels as col = x / mmPerPixel,
 * row = (height - 1) - y / mmPerPixel.
 */

export interface Stroke {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

interface Words {
  command?: string;
  values: Map<string, number>;
}

function tokenize(line: string): Words | null {
  const body = line.replace(/\(.*?\)/g, '').split(';')[0].trim();
  if (!body) return null;
  const words: Words = { values: new Map() };
  const re = /([A-Za-z])\s*([-+]?(?:\d+\.?\d*|\.\d+))/g;
  for (const match of body.matchAll(re)) {
    const letter = match[1].toUpperCase();
    const value = Number(match[2]);
    if (letter === 'G' || letter === 'M') {
      words.command = `${letter}${value}`;
    } else {
      words.values.set(letter, value);
    }
  }
  return words;
}

/** Cut strokes (and uncovered plunges, as zero-length strokes) in machine mm. */
export function extractCutStrokes(gcode: string): Stroke[] {
  const strokes: Stroke[] = [];
  const plunges: { x: number; y: number }[] = [];
  let x = 0;
  let y = 0;
  let z = 0;
  let motion: string | undefined;
  for (const line of gcode.split('\n')) {
    const words = tokenize(line);
    if (!words) continue;
    if (words.command === 'G0' || words.command === 'G1') motion = words.command;
    else if (words.command !== undefined) continue;
    if (!motion || words.values.size === 0) continue;

    const nx = words.values.get('X') ?? x;
    const ny = words.values.get('Y') ?? y;
    const nz = words.values.get('Z') ?? z;
    if (motion === 'G1') {
      if ((nx !== x || ny !== y) && (z < 0 || nz < 0)) {
        strokes.push({ x0: x, y0: y, x1: nx, y1: ny });
      } else if (nz < 0 && z >= 0) {
        plunges.push({ x: nx, y: ny });
      }
    }
    x = nx;
    y = ny;
    z = nz;
  }
  // A lone plunge (no lateral cut from that point) still removes one
  // cell; show it as a dot unless a stroke already touches it.
  for (const p of plunges) {
    const covered = strokes.some(
      (s) => (s.x0 === p.x && s.y0 === p.y) || (s.x1 === p.x && s.y1 === p.y));
    if (!covered) strokes.push({ x0: p.x, y0: p.y, x1: p.x, y1: p.y });
  }
  return strokes;
}

export interface PixelStroke {
  col0: number;
  row0: number;
  col1: number;
  row1: number;
}

export function strokeToPixels(stroke: Stroke, mmPerPixel: number, imageHeight: number): PixelStroke {
  return {
    col0: stroke.x0 / mmPerPixel,
    row0: imageHeight - 1 - stroke.y0 / mmPerPixel,
    col1: stroke.x1 / mmPerPixel,
    row1: imageHeight - 1 - stroke.y1 / mmPerPixel,
  };
}

export function totalStrokeLength(strokes: Stroke[]): number {
  return strokes.reduce((sum, s) => sum + Math.hypot(s.x1 - s.x0, s.y1 - s.y0), 0);
}
