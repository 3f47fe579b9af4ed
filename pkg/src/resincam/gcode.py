"""Binary removal image -> CNC toolpath -> G-code, plus parse/simulate.

The compiler rasterizes every black pixel run into a straight engraving
cut; the simulator replays a program and reports exactly which cells the
tool removed, giving an independent check that a compiled program takes
off the marked material and nothing else.

Dialect: G0 (rapid), G1 (feed move), G21 (mm), G90 (absolute),
M3 S (spindle on), M5 (spindle off). Canonical text is uppercase,
single-spaced, LF-terminated, X/Y/Z at exactly three decimals, integer
S, and F only when the effective feed changes.

Pixel (col, row) maps to machine (col * mm_per_pixel,
(height - 1 - row) * mm_per_pixel): the top image row sits at max Y so
the cut part matches the photographed orientation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .imaging import RasterImage

RAPID = "rapid"
CUT = "cut"
PLUNGE = "plunge"
RETRACT = "retract"

SUPPORTED_COMMANDS = ("G0", "G1", "G21", "G90", "M3", "M5")
PARAM_ORDER = "XYZFS"

# Tolerance for "at cutting depth" checks, in mm.
Z_TOL = 1e-6

_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)")
_WORD_RE = re.compile(r"\s*([A-Za-z])\s*([-+]?(?:\d+\.?\d*|\.\d+))")


class GcodeError(Exception):
    pass


class PlanError(GcodeError):
    pass


class GcodeSyntaxError(GcodeError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.reason = message


class SimulationError(GcodeError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.reason = message


@dataclass(frozen=True)
class MachineConfig:
    mm_per_pixel: float
    safe_z: float = 5.0
    cut_z: float = -1.0
    feed_rate: float = 300.0
    plunge_rate: float = 100.0
    spindle_rpm: int = 10000
    tool_diameter: float | None = None

    def __post_init__(self):
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be > 0")
        if not (self.cut_z < 0 < self.safe_z):
            raise ValueError("need cut_z < 0 < safe_z")
        if self.feed_rate <= 0 or self.plunge_rate <= 0:
            raise ValueError("feed and plunge rates must be > 0")
        if self.spindle_rpm <= 0:
            raise ValueError("spindle_rpm must be > 0")
        if self.tool_diameter is None:
            object.__setattr__(self, "tool_diameter", self.mm_per_pixel)
        elif self.tool_diameter <= 0:
            raise ValueError("tool_diameter must be > 0")


Point3 = tuple[float, float, float]


@dataclass(frozen=True)
class ToolpathSegment:
    kind: str
    start: Point3
    end: Point3


@dataclass(frozen=True)
class Toolpath:
    """Chained machine motion starting at (0, 0, safe_z).

    Cutting happens only at z = cut_z; rapids only at z = safe_z. The
    program emitter appends the return to origin, so the segment list
    itself ends wherever the last run finished (at safe_z).
    """

    segments: tuple[ToolpathSegment, ...]
    config: MachineConfig

    def __post_init__(self):
        cfg = self.config
        pos = (0.0, 0.0, cfg.safe_z)
        for i, seg in enumerate(self.segments):
            if seg.start != pos:
                raise ValueError(f"segment {i} starts at {seg.start}, expected {pos}")
            sx, sy, sz = seg.start
            ex, ey, ez = seg.end
            if seg.kind == CUT and not (sz == ez == cfg.cut_z):
                raise ValueError(f"segment {i}: cut must stay at z={cfg.cut_z}")
            if seg.kind == RAPID and not (sz == ez == cfg.safe_z):
                raise ValueError(f"segment {i}: rapid must stay at z={cfg.safe_z}")
            if seg.kind == PLUNGE and not ((sx, sy) == (ex, ey) and sz == cfg.safe_z and ez == cfg.cut_z):
                raise ValueError(f"segment {i}: plunge must drop safe_z -> cut_z in place")
            if seg.kind == RETRACT and not ((sx, sy) == (ex, ey) and sz == cfg.cut_z and ez == cfg.safe_z):
                raise ValueError(f"segment {i}: retract must rise cut_z -> safe_z in place")
            if seg.kind not in (RAPID, CUT, PLUNGE, RETRACT):
                raise ValueError(f"segment {i}: unknown kind {seg.kind!r}")
            pos = seg.end

    @property
    def end_xy(self) -> tuple[float, float]:
        if not self.segments:
            return (0.0, 0.0)
        ex, ey, _ = self.segments[-1].end
        return (ex, ey)

    @property
    def cut_length_mm(self) -> float:
        return sum(math.dist(s.start[:2], s.end[:2]) for s in self.segments if s.kind == CUT)

    @property
    def rapid_length_mm(self) -> float:
        """Total XY length of the rapid segments.

        The return home that the emitter appends is not counted; it is
        program framing, not planned travel.
        """
        return sum(math.dist(s.start[:2], s.end[:2]) for s in self.segments if s.kind == RAPID)


@dataclass(frozen=True)
class Statement:
    """One canonical G-code line: a command word plus operand words."""

    command: str
    params: tuple[tuple[str, float], ...] = ()
    line: int = field(default=0, compare=False)

    def render(self) -> str:
        words = [self.command]
        for letter, value in self.params:
            if letter in "XYZ":
                words.append(f"{letter}{_fmt_coord(value)}")
            elif letter == "F":
                words.append(f"F{_fmt_feed(value)}")
            else:
                words.append(f"S{int(value)}")
        return " ".join(words)

    def get(self, letter: str) -> float | None:
        for k, v in self.params:
            if k == letter:
                return v
        return None


@dataclass(frozen=True)
class GcodeProgram:
    statements: tuple[Statement, ...]

    @property
    def lines(self) -> list[str]:
        return [s.render() for s in self.statements]

    @property
    def text(self) -> str:
        lines = self.lines
        return "\n".join(lines) + "\n" if lines else ""


@dataclass(frozen=True)
class RemovalMap:
    """Cells a simulated program actually removed (True = removed)."""

    width: int
    height: int
    removed: np.ndarray
    warnings: tuple[str, ...] = ()

    def count(self) -> int:
        return int(self.removed.sum())


def _fmt_coord(v: float) -> str:
    return f"{v:.3f}"


def _fmt_feed(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return s if s else "0"


def _canon(v: float) -> float:
    """Quantize to the 3-decimal canonical grid; normalizes -0.0."""
    q = float(f"{v:.3f}")
    return 0.0 if q == 0 else q


def black_pixels(binary: RasterImage) -> np.ndarray:
    """Boolean grid of removal-marked pixels; rejects non-binary input."""
    arr = binary.array
    black = (arr == 0).all(axis=2)
    white = (arr == 255).all(axis=2)
    bad = ~(black | white)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        r, g, b = arr[row, col]
        raise PlanError(
            f"pixel ({col}, {row}) is ({r}, {g}, {b}); a removal image may "
            f"contain only (0, 0, 0) and (255, 255, 255)")
    return black


def _runs_to_segments(runs: list[list[tuple[float, float]]], cfg: MachineConfig) -> tuple[ToolpathSegment, ...]:
    """Retract/rapid/plunge/cut chain for each run polyline, from origin."""
    segs: list[ToolpathSegment] = []
    cx, cy = 0.0, 0.0
    for pts in runs:
        ex, ey = pts[0]
        if (ex, ey) != (cx, cy):
            segs.append(ToolpathSegment(RAPID, (cx, cy, cfg.safe_z), (ex, ey, cfg.safe_z)))
        segs.append(ToolpathSegment(PLUNGE, (ex, ey, cfg.safe_z), (ex, ey, cfg.cut_z)))
        px, py = ex, ey
        for nx, ny in pts[1:]:
            if (nx, ny) != (px, py):
                segs.append(ToolpathSegment(CUT, (px, py, cfg.cut_z), (nx, ny, cfg.cut_z)))
                px, py = nx, ny
        segs.append(ToolpathSegment(RETRACT, (px, py, cfg.cut_z), (px, py, cfg.safe_z)))
        cx, cy = px, py
    return tuple(segs)


def plan_toolpath(binary: RasterImage, cfg: MachineConfig) -> Toolpath:
    """Raster the black runs of a removal image into engraving motion.

    Rows go top to bottom with alternating direction (zig-zag); within a
    row, maximal horizontal black runs become one straight cut each
    along the row's center line. Single-pixel runs become a plunge with
    no lateral cut.
    """
    black = black_pixels(binary)
    h = binary.height
    mpp = cfg.mm_per_pixel

    runs: list[list[tuple[float, float]]] = []
    left_to_right = True
    for row in range(h):
        cols = np.flatnonzero(black[row])
        if cols.size == 0:
            continue
        # Split into maximal consecutive runs.
        breaks = np.flatnonzero(np.diff(cols) > 1)
        starts = np.concatenate(([0], breaks + 1))
        ends = np.concatenate((breaks, [cols.size - 1]))
        row_runs = [(int(cols[a]), int(cols[b])) for a, b in zip(starts, ends)]
        if not left_to_right:
            row_runs = [(c1, c0) for c0, c1 in reversed(row_runs)]
        y = (h - 1 - row) * mpp
        for c_in, c_out in row_runs:
            if c_in == c_out:
                runs.append([(c_in * mpp, y)])
            else:
                runs.append([(c_in * mpp, y), (c_out * mpp, y)])
        left_to_right = not left_to_right
    return Toolpath(segments=_runs_to_segments(runs, cfg), config=cfg)


def _extract_runs(toolpath: Toolpath) -> list[list[tuple[float, float]]]:
    runs: list[list[tuple[float, float]]] = []
    i, segs = 0, toolpath.segments
    while i < len(segs):
        seg = segs[i]
        if seg.kind == PLUNGE:
            pts = [(seg.end[0], seg.end[1])]
            i += 1
            while i < len(segs) and segs[i].kind == CUT:
                pts.append((segs[i].end[0], segs[i].end[1]))
                i += 1
            runs.append(pts)
        else:
            i += 1
    return runs


def optimize_travel(toolpath: Toolpath) -> Toolpath:
    """Reorder (and possibly flip) cut runs to shorten rapid travel.

    Greedy nearest-endpoint ordering starting from the origin; the
    result is kept only if its total rapid XY length (including the
    return home) is no longer than the input's, so this never makes a
    path worse. Cut geometry is preserved up to direction flips.
    """
    runs = _extract_runs(toolpath)
    if len(runs) <= 1:
        return toolpath

    heads = np.array([r[0] for r in runs], dtype=np.float64)
    tails = np.array([r[-1] for r in runs], dtype=np.float64)
    remaining = list(range(len(runs)))
    ordered: list[list[tuple[float, float]]] = []
    cur = np.array([0.0, 0.0])
    while remaining:
        idx = np.array(remaining)
        d_head = np.hypot(*(heads[idx] - cur).T)
        d_tail = np.hypot(*(tails[idx] - cur).T)
        best = np.minimum(d_head, d_tail)
        k = int(np.argmin(best))
        run = runs[remaining.pop(k)]
        # Enter at the closer endpoint; ties keep the original direction.
        if d_tail[k] < d_head[k]:
            run = run[::-1]
        ordered.append(run)
        cur = np.array(run[-1])

    candidate = Toolpath(segments=_runs_to_segments(ordered, toolpath.config), config=toolpath.config)
    return candidate if candidate.rapid_length_mm <= toolpath.rapid_length_mm else toolpath


def emit_gcode(toolpath: Toolpath) -> GcodeProgram:
    """Render a toolpath as a canonical program.

    Header: G21, G90, M3 S, G0 Z safe. Footer: return to origin, M5.
    G1 lines carry F only when the effective feed changes.
    """
    cfg = toolpath.config
    stmts: list[Statement] = [
        Statement("G21"),
        Statement("G90"),
        Statement("M3", (("S", float(cfg.spindle_rpm)),)),
        Statement("G0", (("Z", _canon(cfg.safe_z)),)),
    ]
    modal_f: float | None = None
    for seg in toolpath.segments:
        if seg.kind == RAPID:
            stmts.append(Statement("G0", (("X", _canon(seg.end[0])), ("Y", _canon(seg.end[1])))))
        elif seg.kind == RETRACT:
            stmts.append(Statement("G0", (("Z", _canon(cfg.safe_z)),)))
        else:
            rate = _canon(cfg.plunge_rate if seg.kind == PLUNGE else cfg.feed_rate)
            if seg.kind == PLUNGE:
                params: list[tuple[str, float]] = [("Z", _canon(cfg.cut_z))]
            else:
                params = [("X", _canon(seg.end[0])), ("Y", _canon(seg.end[1]))]
            if rate != modal_f:
                params.append(("F", rate))
                modal_f = rate
            stmts.append(Statement("G1", tuple(params)))
    stmts.append(Statement("G0", (("X", 0.0), ("Y", 0.0))))
    stmts.append(Statement("M5"))
    numbered = tuple(
        Statement(s.command, s.params, line=i + 1) for i, s in enumerate(stmts))
    return GcodeProgram(statements=numbered)


def _strip_comments(raw: str, line_no: int) -> str:
    out = []
    i, n = 0, len(raw)
    while i < n:
        ch = raw[i]
        if ch == ";":
            break
        if ch == "(":
            close = raw.find(")", i + 1)
            if close == -1:
                raise GcodeSyntaxError(line_no, "unterminated ( comment")
            i = close + 1
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def parse_gcode(text: str) -> GcodeProgram:
    """Parse G-code text into canonical statements.

    Accepts lowercase words, ( ... ) and ; comments, blank lines, and
    modal motion lines (coordinates with the G word left off). Rejects
    anything outside the dialect with the offending line number.
    """
    statements: list[Statement] = []
    modal_motion: str | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comments(raw, line_no).strip()
        if not body:
            continue

        words: list[tuple[str, str]] = []
        pos = 0
        while pos < len(body):
            m = _WORD_RE.match(body, pos)
            if not m:
                rest = body[pos:].strip()
                if rest and rest[0].isalpha() and (len(rest) == 1 or not _NUMBER_RE.match(rest[1:].lstrip())):
                    raise GcodeSyntaxError(line_no, f"word {rest[0].upper()!r} has a malformed number")
                raise GcodeSyntaxError(line_no, f"cannot tokenize {rest!r}")
            words.append((m.group(1).upper(), m.group(2)))
            pos = m.end()

        command: str | None = None
        params: list[tuple[str, float]] = []
        seen: set[str] = set()
        for letter, number in words:
            if letter in ("G", "M"):
                code = float(number)
                if code != int(code):
                    raise GcodeSyntaxError(line_no, f"malformed command number {letter}{number}")
                word = f"{letter}{int(code)}"
                if word not in SUPPORTED_COMMANDS:
                    raise GcodeSyntaxError(line_no, f"unsupported command {word}")
                if command is not None:
                    raise GcodeSyntaxError(line_no, f"multiple command words ({command}, {word})")
                command = word
            elif letter in PARAM_ORDER:
                if letter in seen:
                    raise GcodeSyntaxError(line_no, f"duplicate word {letter}")
                seen.add(letter)
                params.append((letter, float(number)))
            else:
                raise GcodeSyntaxError(line_no, f"unsupported word {letter}")

        if command is None:
            if not any(k in "XYZF" for k, _ in params):
                raise GcodeSyntaxError(line_no, "line has no command word")
            if modal_motion is None:
                raise GcodeSyntaxError(line_no, "coordinates before any motion command")
            command = modal_motion

        if command in ("G0", "G1"):
            allowed = set("XYZF")
            modal_motion = command
        elif command == "M3":
            allowed = {"S"}
            s = dict(params).get("S")
            if s is None:
                raise GcodeSyntaxError(line_no, "M3 requires an S word")
            if s != int(s) or s < 0:
                raise GcodeSyntaxError(line_no, "S must be a non-negative integer")
        else:
            allowed = set()
        for k, _ in params:
            if k not in allowed:
                raise GcodeSyntaxError(line_no, f"unexpected word {k} after {command}")

        canon_params = tuple(
            (k, float(int(v)) if k == "S" else _canon(v))
            for k, v in sorted(params, key=lambda kv: PARAM_ORDER.index(kv[0])))
        statements.append(Statement(command, canon_params, line=line_no))
    return GcodeProgram(statements=tuple(statements))


def _mark_capsule(removed: np.ndarray, p0: tuple[float, float], p1: tuple[float, float],
                  radius: float, mpp: float, width: int, height: int) -> None:
    """Mark every cell whose center lies within radius of segment p0-p1."""
    x0, y0 = p0
    x1, y1 = p1
    cmin = max(0, math.ceil((min(x0, x1) - radius) / mpp))
    cmax = min(width - 1, math.floor((max(x0, x1) + radius) / mpp))
    # Cell row r has center y = (height - 1 - r) * mpp.
    rmin = max(0, math.ceil((height - 1) - (max(y0, y1) + radius) / mpp))
    rmax = min(height - 1, math.floor((height - 1) - (min(y0, y1) - radius) / mpp))
    if cmin > cmax or rmin > rmax:
        return
    cols = np.arange(cmin, cmax + 1)
    rows = np.arange(rmin, rmax + 1)
    cx = cols * mpp
    cy = (height - 1 - rows) * mpp
    px = np.broadcast_to(cx[None, :], (rows.size, cols.size))
    py = np.broadcast_to(cy[:, None], (rows.size, cols.size))
    dx, dy = x1 - x0, y1 - y0
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0:
        ddx, ddy = px - x0, py - y0
    else:
        t = np.clip(((px - x0) * dx + (py - y0) * dy) / seg_len2, 0.0, 1.0)
        ddx, ddy = px - (x0 + t * dx), py - (y0 + t * dy)
    inside = ddx * ddx + ddy * ddy <= radius * radius
    removed[rmin:rmax + 1, cmin:cmax + 1] |= inside


def simulate_toolpath(program: GcodeProgram, cfg: MachineConfig, width: int, height: int) -> RemovalMap:
    """Replay a program and mark the cells the tool removes.

    A move removes every cell whose center lies within tool_diameter / 2
    (inclusive) of the XY track it covers while at cutting depth
    (z <= cut_z, with 1e-6 mm slack). Motion below cut_z is an error;
    lateral motion strictly between the surface and cut depth only
    raises a gouge warning.
    """
    removed = np.zeros((height, width), dtype=bool)
    warnings: list[str] = []
    x = y = z = 0.0
    radius = cfg.tool_diameter / 2.0
    mpp = cfg.mm_per_pixel
    modal_f: float | None = None
    for stmt in program.statements:
        if stmt.command in ("G21", "G90", "M5"):
            continue
        if stmt.command == "M3":
            continue
        tx = stmt.get("X")
        ty = stmt.get("Y")
        tz = stmt.get("Z")
        f = stmt.get("F")
        if f is not None:
            modal_f = f
        nx = x if tx is None else tx
        ny = y if ty is None else ty
        nz = z if tz is None else tz

        if min(z, nz) < cfg.cut_z - Z_TOL:
            raise SimulationError(stmt.line, f"motion below cut depth {cfg.cut_z} (z={min(z, nz)})")
        moved_xy = (nx, ny) != (x, y)
        if moved_xy and min(z, nz) < -Z_TOL and max(z, nz) > cfg.cut_z + Z_TOL:
            warnings.append(
                f"line {stmt.line}: lateral motion between surface and cut depth (z {z} -> {nz})")

        cut_plane = cfg.cut_z + Z_TOL
        if min(z, nz) <= cut_plane:
            # Clip the move to the portion at cutting depth.
            if z <= cut_plane and nz <= cut_plane:
                a, b = (x, y), (nx, ny)
            elif z <= cut_plane:
                t = (cut_plane - z) / (nz - z)
                a, b = (x, y), (x + t * (nx - x), y + t * (ny - y))
            else:
                t = (cut_plane - z) / (nz - z)
                a, b = (x + t * (nx - x), y + t * (ny - y)), (nx, ny)
            _mark_capsule(removed, a, b, radius, mpp, width, height)
        x, y, z = nx, ny, nz
    return RemovalMap(width=width, height=height, removed=removed, warnings=tuple(warnings))
