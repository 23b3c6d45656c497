"""Deterministic synthesis of a labeled thermal-video corpus.

The planner reproduces a fixed activity-occurrence table exactly: 882
videos over 23 activity flags, of which 458 carry exactly one retained
label. The renderer draws each clip as a cool background with sensor
noise, a static warm patient ellipse, and per-activity caregiver blobs
moving along class-specific trajectories.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tvf

N_ACTIVITIES = 23
N_OBSERVED = 14

# occurrence totals for the 14 observed activities (columns a01..a14)
BEFORE_COUNTS = (88, 63, 20, 11, 9, 34, 49, 85, 57, 73, 23, 54, 59, 55)
# kept single-label counts for the 8 activities that clear the threshold
AFTER_COUNTS = (65, 58, 68, 54, 60, 46, 57, 50)
# zero-based observed-column index of each retained class, in table order
RETAINED_COLUMNS = (0, 1, 7, 8, 9, 11, 12, 13)
NON_RETAINED_COLUMNS = (2, 3, 4, 5, 6, 10)

TOTAL_VIDEOS = 882
FRAME_COUNT_RANGE = (676, 820)
FPS = 6

DEFAULT_GEOMETRY = (72, 96)  # (H, W), a 4x downscale of the capture sensor
SMOKE_GEOMETRY = (24, 32)
SMOKE_PER_CLASS = 10

BACKGROUND_LEVEL = 12000
PATIENT_DELTA = 18000
AGENT_DELTA = 33000
NOISE_DELTA = 1311  # 2% of the u16 dynamic range
MAX_VALUE = 65535


class PlanError(ValueError):
    pass


class RenderError(ValueError):
    pass


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary parts (hash() is salted)."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class PlanEntry:
    video_id: str
    labels: tuple  # 23 ints in {0,1}
    frame_count: int
    seed: int

    @property
    def label_columns(self):
        return tuple(i for i, v in enumerate(self.labels) if v)


@dataclass
class CorpusPlan:
    entries: list
    seed: int
    occurrence_totals: tuple = field(init=False)
    single_label_counts: tuple = field(init=False)

    def __post_init__(self):
        totals = [0] * N_ACTIVITIES
        singles = [0] * len(RETAINED_COLUMNS)
        for e in self.entries:
            cols = e.label_columns
            for c in cols:
                totals[c] += 1
            if len(cols) == 1 and cols[0] in RETAINED_COLUMNS:
                singles[RETAINED_COLUMNS.index(cols[0])] += 1
        self.occurrence_totals = tuple(totals)
        self.single_label_counts = tuple(singles)


def greedy_pairs(counts):
    """Pairs off counts by repeatedly joining the two largest remainders.

    Raises PlanError when any remainder exceeds the sum of all others (no
    perfect pairing exists); also triggered by an odd total.
    """
    remaining = list(counts)
    pairs = []
    while sum(remaining) > 0:
        top = max(remaining)
        if top > sum(remaining) - top:
            raise PlanError(
                f"pairing infeasible: count {top} exceeds the sum of the others ({remaining})"
            )
        order = sorted(range(len(remaining)), key=lambda i: (-remaining[i], i))
        a, b = order[0], order[1]
        remaining[a] -= 1
        remaining[b] -= 1
        pairs.append((a, b))
    return pairs


def _flags(columns):
    labels = [0] * N_ACTIVITIES
    for c in columns:
        labels[c] = 1
    return tuple(labels)


def plan_corpus(seed: int) -> CorpusPlan:
    """Lays out the full 882-entry corpus; pure function of the seed."""
    label_rows = []
    for class_idx, col in enumerate(RETAINED_COLUMNS):
        label_rows.extend([_flags([col])] * AFTER_COUNTS[class_idx])

    excess = [BEFORE_COUNTS[col] - AFTER_COUNTS[i] for i, col in enumerate(RETAINED_COLUMNS)]
    for a, b in greedy_pairs(excess):
        label_rows.append(_flags([RETAINED_COLUMNS[a], RETAINED_COLUMNS[b]]))

    leftovers = [BEFORE_COUNTS[c] for c in NON_RETAINED_COLUMNS]
    for a, b in greedy_pairs(leftovers):
        label_rows.append(_flags([NON_RETAINED_COLUMNS[a], NON_RETAINED_COLUMNS[b]]))

    label_rows.extend([_flags([])] * (TOTAL_VIDEOS - len(label_rows)))
    assert len(label_rows) == TOTAL_VIDEOS

    rng = np.random.default_rng(seed)
    lo, hi = FRAME_COUNT_RANGE
    entries = []
    for idx, labels in enumerate(label_rows):
        video_id = f"vid{idx:04d}"
        entries.append(
            PlanEntry(
                video_id=video_id,
                labels=labels,
                frame_count=int(rng.integers(lo, hi + 1)),
                seed=stable_seed(seed, video_id),
            )
        )
    return CorpusPlan(entries=entries, seed=seed)


def plan_smoke(seed: int) -> CorpusPlan:
    """Small separable corpus: 10 single-label clips per retained class."""
    rng = np.random.default_rng(seed)
    lo, hi = FRAME_COUNT_RANGE
    entries = []
    idx = 0
    for col in RETAINED_COLUMNS:
        for _ in range(SMOKE_PER_CLASS):
            video_id = f"smoke{idx:03d}"
            entries.append(
                PlanEntry(
                    video_id=video_id,
                    labels=_flags([col]),
                    frame_count=int(rng.integers(lo, hi + 1)),
                    seed=stable_seed(seed, video_id),
                )
            )
            idx += 1
    return CorpusPlan(entries=entries, seed=seed)


# --- motion patterns -------------------------------------------------------


@dataclass(frozen=True)
class MotionPattern:
    class_id: int
    kind: str
    agent_count: int
    dwell: tuple  # (y, x) center of activity in unit coordinates
    speed: float  # mean displacement per frame, unit coordinates
    warmth: int  # blob amplitude over background, raw counts


MOTION_PATTERNS = (
    MotionPattern(0, "bedside-dwell", 1, (0.55, 0.22), 0.0004, 24000),
    MotionPattern(1, "arm-reach", 1, (0.42, 0.78), 0.012, 26600),
    MotionPattern(2, "corner-station", 1, (0.14, 0.86), 0.0002, 29200),
    MotionPattern(3, "two-agent", 2, (0.85, 0.51), 0.0011, 31800),
    MotionPattern(4, "patient-roll", 1, (0.50, 0.80), 0.009, 34400),
    MotionPattern(5, "bedside-sweep", 1, (0.30, 0.50), 0.010, 37000),
    MotionPattern(6, "approach-retreat", 1, (0.28, 0.20), 0.006, 39600),
    MotionPattern(7, "brief-visit", 1, (0.77, 0.29), 0.004, 42200),
)

PATIENT_CENTER = (0.55, 0.50)
PATIENT_SEMI = (0.13, 0.24)


def _tri(u):
    """Triangle wave mapping phase to [0, 1]."""
    u = u % 1.0
    return np.where(u < 0.5, 2.0 * u, 2.0 - 2.0 * u)


def _stamp(radius_px, amplitude):
    r = max(int(radius_px), 1)
    yy, xx = np.mgrid[-2 * r : 2 * r + 1, -2 * r : 2 * r + 1]
    return (amplitude * np.exp(-(yy**2 + xx**2) / (2.0 * r * r))).astype(np.int32)


def _add_stamps(canvas, stamp, ys, xs):
    """Adds a stamp at integer centers (ys[t], xs[t]) into canvas[t]."""
    t_total, h, w = canvas.shape
    half = stamp.shape[0] // 2
    for t in range(t_total):
        cy, cx = ys[t], xs[t]
        if cy is None:
            continue
        y0, y1 = cy - half, cy + half + 1
        x0, x1 = cx - half, cx + half + 1
        sy0, sx0 = max(0, -y0), max(0, -x0)
        sy1 = stamp.shape[0] - max(0, y1 - h)
        sx1 = stamp.shape[1] - max(0, x1 - w)
        if sy0 >= sy1 or sx0 >= sx1:
            continue
        canvas[t, max(0, y0) : min(h, y1), max(0, x0) : min(w, x1)] += stamp[sy0:sy1, sx0:sx1]


def _to_px(y, x, h, w):
    ys = np.clip(np.round(np.asarray(y) * (h - 1)).astype(int), 0, h - 1)
    xs = np.clip(np.round(np.asarray(x) * (w - 1)).astype(int), 0, w - 1)
    return ys, xs


def _agent_tracks(pattern, t_total, phase_rng):
    """Unit-coordinate (y, x) trajectories for each agent blob of a class.

    Returns a list of (y_array, x_array, size_scale, presence_mask).
    """
    t = np.arange(t_total, dtype=np.float64)
    ph = phase_rng.uniform(0.0, 1.0, size=4)
    k = pattern.kind
    if k == "bedside-dwell":
        y = pattern.dwell[0] + 0.015 * np.sin(2 * np.pi * (0.004 * t + ph[0]))
        x = pattern.dwell[1] + 0.015 * np.cos(2 * np.pi * (0.005 * t + ph[1]))
        return [(y, x, 1.0, None)]
    if k == "arm-reach":
        ay = pattern.dwell[0] + 0.01 * np.sin(2 * np.pi * (0.003 * t + ph[0]))
        ax = np.full_like(t, pattern.dwell[1])
        u = 0.25 + 0.45 * (0.5 + 0.5 * np.sin(2 * np.pi * (0.02 * t + ph[1])))
        ry = ay + u * (PATIENT_CENTER[0] - ay)
        rx = ax + u * (PATIENT_CENTER[1] - ax)
        return [(ay, ax, 1.0, None), (ry, rx, 0.5, None)]
    if k == "corner-station":
        y = pattern.dwell[0] + 0.008 * np.sin(2 * np.pi * (0.002 * t + ph[0]))
        x = pattern.dwell[1] + 0.008 * np.cos(2 * np.pi * (0.0025 * t + ph[1]))
        return [(y, x, 1.0, None)]
    if k == "two-agent":
        sway = 0.025 * np.sin(2 * np.pi * (0.007 * t + ph[0]))
        y = np.full_like(t, pattern.dwell[0])
        return [(y + sway, 0.40 + sway * 0.5, 1.0, None), (y - sway, 0.62 - sway * 0.5, 1.0, None)]
    if k == "patient-roll":
        y = pattern.dwell[0] + 0.01 * np.sin(2 * np.pi * (0.004 * t + ph[0]))
        x = np.full_like(t, pattern.dwell[1])
        return [(y, x, 1.0, None)]
    if k == "bedside-sweep":
        x = 0.25 + 0.5 * _tri(0.01 * t + ph[0])
        y = np.full_like(t, pattern.dwell[0])
        return [(y, x, 1.0, None)]
    if k == "approach-retreat":
        u = _tri(0.006 * t + ph[0])
        y = 0.08 + u * (0.48 - 0.08)
        x = 0.06 + u * (0.34 - 0.06)
        return [(y, x, 1.0, None)]
    if k == "brief-visit":
        present = (t >= 0.38 * t_total) & (t <= 0.62 * t_total)
        u = np.clip((t - 0.38 * t_total) / (0.12 * t_total), 0.0, 1.0)
        leave = np.clip((t - 0.50 * t_total) / (0.12 * t_total), 0.0, 1.0)
        prog = u - leave
        y = 0.92 + prog * (0.62 - 0.92)
        x = 0.08 + prog * (0.50 - 0.08)
        return [(y, x, 1.0, present)]
    raise RenderError(f"no trajectory for pattern kind {k!r}")


def _wanderer_track(column, t_total, phase_rng):
    """Generic roaming blob for observed activities without a class pattern."""
    t = np.arange(t_total, dtype=np.float64)
    ph = phase_rng.uniform(0.0, 1.0)
    cy = 0.20 + 0.10 * (column % 3)
    cx = 0.55 + 0.12 * (column % 2)
    rate = 0.008 + 0.001 * (column % 5)
    y = cy + 0.08 * np.sin(2 * np.pi * (rate * t + ph))
    x = cx + 0.08 * np.cos(2 * np.pi * (rate * t + ph))
    return [(y, x, 0.8, None)]


def _patient_offsets(moving, t_total, phase_rng):
    if not moving:
        return np.zeros(t_total, dtype=int), np.zeros(t_total, dtype=int)
    t = np.arange(t_total, dtype=np.float64)
    ph = phase_rng.uniform(0.0, 1.0)
    dx = 0.06 * np.sin(2 * np.pi * (0.012 * t + ph))
    return np.zeros(t_total, dtype=int), dx


def render_clip(
    entry: PlanEntry, geometry=DEFAULT_GEOMETRY, seed=None, agent_scale=1.0
) -> tvf.VideoClip:
    """Draws the clip for one plan entry; deterministic in (entry, geometry, seed).

    agent_scale widens the caregiver blobs; the smoke corpus uses a bold
    scale so its classes separate quickly at micro training budgets.
    """
    h, w = geometry
    if h <= 0 or w <= 0:
        raise RenderError(f"invalid geometry {geometry}")
    seed = entry.seed if seed is None else seed
    t_total = entry.frame_count

    noise_rng = np.random.default_rng(seed)
    noise = noise_rng.integers(-NOISE_DELTA, NOISE_DELTA + 1, size=(t_total, h, w), dtype=np.int32)
    phase_rng = np.random.default_rng(stable_seed(seed, "phases"))

    canvas = np.full((t_total, h, w), BACKGROUND_LEVEL, dtype=np.int32)

    cols = entry.label_columns
    moving_patient = any(
        c in RETAINED_COLUMNS and MOTION_PATTERNS[RETAINED_COLUMNS.index(c)].kind == "patient-roll"
        for c in cols
    )

    # patient ellipse, static unless the roll pattern is active
    yy, xx = np.mgrid[0:h, 0:w]
    uy, ux = yy / (h - 1), xx / (w - 1)
    _, dx = _patient_offsets(moving_patient, t_total, phase_rng)
    if moving_patient:
        for t in range(t_total):
            mask = ((uy - PATIENT_CENTER[0]) / PATIENT_SEMI[0]) ** 2 + (
                (ux - PATIENT_CENTER[1] - dx[t]) / PATIENT_SEMI[1]
            ) ** 2 <= 1.0
            canvas[t][mask] += PATIENT_DELTA
    else:
        mask = ((uy - PATIENT_CENTER[0]) / PATIENT_SEMI[0]) ** 2 + (
            (ux - PATIENT_CENTER[1]) / PATIENT_SEMI[1]
        ) ** 2 <= 1.0
        canvas[:, mask] += PATIENT_DELTA

    base_radius = max(h, w) * 0.055 * agent_scale
    for c in cols:
        if c in RETAINED_COLUMNS:
            pattern = MOTION_PATTERNS[RETAINED_COLUMNS.index(c)]
            tracks = _agent_tracks(pattern, t_total, phase_rng)
            warmth = pattern.warmth
        elif c < N_OBSERVED:
            tracks = _wanderer_track(c, t_total, phase_rng)
            warmth = AGENT_DELTA
        else:
            continue
        for y, x, scale, present in tracks:
            stamp = _stamp(base_radius * scale, warmth)
            ys, xs = _to_px(y, x, h, w)
            if present is not None:
                ys = [yi if p else None for yi, p in zip(ys, present)]
            _add_stamps(canvas, stamp, ys, xs)

    canvas += noise
    frames = np.clip(canvas, 0, MAX_VALUE).astype(np.uint16)
    return tvf.VideoClip(frames=frames, fps=FPS)


MANIFEST_NAME = "labels.csv"
ACTIVITY_FIELDS = tuple(f"a{i + 1:02d}" for i in range(N_ACTIVITIES))


def write_manifest(plan: CorpusPlan, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / MANIFEST_NAME
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("video_id",) + ACTIVITY_FIELDS)
        for entry in plan.entries:
            writer.writerow((entry.video_id,) + entry.labels)
    return manifest


SMOKE_AGENT_SCALE = 3.0


def write_corpus(
    plan: CorpusPlan, directory, geometry=DEFAULT_GEOMETRY, seed=None, agent_scale=1.0
) -> Path:
    """Renders every entry to a TVF file and writes the label manifest.

    Returns the manifest path. Render seeds come from the plan entries
    unless ``seed`` is given, in which case they are re-derived from it.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for entry in plan.entries:
        render_seed = entry.seed if seed is None else stable_seed(seed, entry.video_id)
        clip = render_clip(entry, geometry=geometry, seed=render_seed, agent_scale=agent_scale)
        tvf.write_clip(tvf.clip_path(directory, entry.video_id), clip)
    return write_manifest(plan, directory)
