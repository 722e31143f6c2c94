"""Synthetic physics scenes with known ground-truth latents.

Four renderers stand in for recorded videos: a mass on a spring, a
pendulum, a falling object and a pulsar.  Each frame is a pure function
of the scene spec and the time t; the mechanism value at t is stored as
the noiseless ground-truth latent.

Vertical-position scenes (spring, fall) map the mechanism value
y in [-1, 1] linearly onto pixel rows, leaving a 10% margin at the top
and bottom: y = 1 sits at the top of the travel band, y = -1 at the
bottom.  The pendulum draws a bob at pivot + L (sin th, cos th) with a
one-pixel string.  The pulsar is a centered Gaussian blob whose peak
brightness is clamp(I(t) / I_max, 0, 1).  Everything is anti-aliased by
4x4 supersampled coverage so frames move smoothly with t.

Datasets are written as binary PPM (P6, maxval 255) frames plus a
plain-text ``meta.txt``: first line ``T W H``, then one line per frame
``index time ground_truth``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import mechanism as mech
from .errors import ConfigurationError, DataFormatError

SCENE_KINDS = ("spring", "pendulum", "fall", "pulsar")

# Paper-scale frame sizes (width, height) per scene; the time ranges and
# stock mechanisms of the four experiments.
EXPERIMENTS = {
    "spring": dict(width=226, height=100, t_low=0.0, t_high=2 * np.pi,
                   prior="spring_prior", intervention="spring_int"),
    "pendulum": dict(width=108, height=100, t_low=0.0, t_high=2 * np.pi,
                     prior="pendulum_prior", intervention="pendulum_int"),
    "fall": dict(width=205, height=100, t_low=0.0, t_high=1.0,
                 prior="fall_prior", intervention="fall_int"),
    "pulsar": dict(width=78, height=77, t_low=0.0, t_high=1.0,
                   prior="pulsar_prior", intervention="pulsar_int"),
}

_SUBGRID = 4  # supersampling factor per axis


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    width: int
    height: int
    frames: int
    mechanism: mech.MechanismExpr
    t_low: float
    t_high: float
    radius_px: float = 4.0
    margin: float = 0.1
    fg: tuple = (0.9, 0.9, 0.9)
    bg: tuple = (0.05, 0.05, 0.05)
    pivot_frac: float = 0.12      # pendulum pivot row / height
    length_frac: float = 0.55     # pendulum string length / height
    blob_sigma_frac: float = 0.18  # pulsar blob sigma / min(h, w)
    peak_intensity: float = 1.0   # pulsar I_max used for normalization

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigurationError(f"unknown scene kind {self.kind!r}")
        if self.frames < 2:
            raise ConfigurationError("a video needs at least 2 frames")
        if self.width < 16 or self.height < 16:
            raise ConfigurationError("frames must be at least 16x16")
        if not self.t_low < self.t_high:
            raise ConfigurationError("time range needs t_low < t_high")


def scene_preset(kind, width=None, height=None, frames=200, **overrides):
    """Stock scene for one of the four experiments, at paper-scale
    dimensions unless overridden."""
    try:
        exp = EXPERIMENTS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown scene kind {kind!r}") from None
    mechanism = mech.builtin(exp["prior"])
    spec = SceneSpec(
        kind=kind,
        width=exp["width"] if width is None else width,
        height=exp["height"] if height is None else height,
        frames=frames,
        mechanism=mechanism,
        t_low=exp["t_low"],
        t_high=exp["t_high"],
        **overrides,
    )
    if kind == "pulsar":
        grid = np.linspace(spec.t_low, spec.t_high, 4096)
        peak = float(np.max(mech.evaluate(mechanism, grid)))
        spec = replace(spec, peak_intensity=peak)
    return spec


# ---------------------------------------------------------------------------
# Rendering


def _subpixel_grid(height, width):
    """Sample points of a 4x4 subgrid per pixel: (h, w, 16) row/col."""
    offs = (np.arange(_SUBGRID) + 0.5) / _SUBGRID - 0.5
    rows = np.arange(height)[:, None, None, None] + offs[None, None, :, None]
    cols = np.arange(width)[None, :, None, None] + offs[None, None, None, :]
    rows = np.broadcast_to(rows, (height, width, _SUBGRID, _SUBGRID))
    cols = np.broadcast_to(cols, (height, width, _SUBGRID, _SUBGRID))
    return rows.reshape(height, width, -1), cols.reshape(height, width, -1)


def _disk_coverage(rows, cols, cy, cx, radius):
    d2 = (rows - cy) ** 2 + (cols - cx) ** 2
    return (d2 <= radius * radius).mean(axis=-1)


def _segment_coverage(rows, cols, p0, p1, half_width):
    dy, dx = p1[0] - p0[0], p1[1] - p0[1]
    denom = dy * dy + dx * dx
    if denom == 0:
        return _disk_coverage(rows, cols, p0[0], p0[1], half_width)
    s = ((rows - p0[0]) * dy + (cols - p0[1]) * dx) / denom
    s = np.clip(s, 0.0, 1.0)
    d2 = (rows - (p0[0] + s * dy)) ** 2 + (cols - (p0[1] + s * dx)) ** 2
    return (d2 <= half_width * half_width).mean(axis=-1)


def latent_to_row(spec, y):
    """Affine map from mechanism value y in [-1, 1] to a pixel row."""
    m = spec.margin * (spec.height - 1)
    return m + (1.0 - y) / 2.0 * ((spec.height - 1) - 2.0 * m)


def row_to_latent(spec, row):
    """Inverse of :func:`latent_to_row`."""
    m = spec.margin * (spec.height - 1)
    return 1.0 - 2.0 * (row - m) / ((spec.height - 1) - 2.0 * m)


def _compose(spec, coverage):
    fg = np.asarray(spec.fg, dtype=np.float64)
    bg = np.asarray(spec.bg, dtype=np.float64)
    frame = bg + coverage[..., None] * (fg - bg)
    return np.clip(frame, 0.0, 1.0).astype(np.float32)


def render_frame(spec, t, value=None):
    """Render one frame at time ``t``.

    Returns (frame, clamped): ``clamped`` reports whether the mechanism
    value had to be clipped into the renderable range.  ``value``
    overrides the mechanism evaluation (used by tests).
    """
    if not (spec.t_low - 1e-9 <= t <= spec.t_high + 1e-9):
        raise ConfigurationError(
            f"t={t:g} outside the scene time range "
            f"[{spec.t_low:g}, {spec.t_high:g}]")
    y = mech.evaluate(spec.mechanism, float(t)) if value is None else value
    rows, cols = _subpixel_grid(spec.height, spec.width)
    clamped = False

    if spec.kind in ("spring", "fall"):
        y_draw = min(1.0, max(-1.0, y))
        clamped = y_draw != y
        cy = latent_to_row(spec, y_draw)
        cov = _disk_coverage(rows, cols, cy, (spec.width - 1) / 2.0,
                             spec.radius_px)
        return _compose(spec, cov), clamped

    if spec.kind == "pendulum":
        pivot = (spec.pivot_frac * (spec.height - 1),
                 (spec.width - 1) / 2.0)
        length = spec.length_frac * (spec.height - 1)
        bob = (pivot[0] + length * np.cos(y), pivot[1] + length * np.sin(y))
        cov = np.maximum(
            _segment_coverage(rows, cols, pivot, bob, 0.5),
            _disk_coverage(rows, cols, bob[0], bob[1], spec.radius_px),
        )
        return _compose(spec, cov), clamped

    # pulsar: centered blob, brightness follows the intensity profile
    peak = y / spec.peak_intensity
    clamped = not 0.0 <= peak <= 1.0
    peak = min(1.0, max(0.0, peak))
    cy, cx = (spec.height - 1) / 2.0, (spec.width - 1) / 2.0
    sigma = spec.blob_sigma_frac * min(spec.height, spec.width)
    d2 = (rows - cy) ** 2 + (cols - cx) ** 2
    cov = peak * np.exp(-d2 / (2.0 * sigma * sigma)).mean(axis=-1)
    return _compose(spec, cov), clamped


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class VideoDataset:
    """Ordered frames with timestamps and ground-truth latents."""

    frames: np.ndarray       # (T, H, W, 3) float32 in [0, 1]
    times: np.ndarray        # (T,) float64, strictly increasing
    ground_truth: np.ndarray  # (T,) float64
    clamped: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not (len(self.frames) == len(self.times)
                == len(self.ground_truth)):
            raise ConfigurationError("frames/times/ground_truth lengths differ")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("times must be strictly increasing")

    @property
    def image_shape(self):
        return self.frames.shape[1:]


def frame_times(spec):
    k = np.arange(spec.frames, dtype=np.float64)
    return spec.t_low + (spec.t_high - spec.t_low) * k / (spec.frames - 1)


def generate_dataset(spec):
    """Render the full uniformly-sampled video for a scene."""
    times = frame_times(spec)
    frames = np.empty((spec.frames, spec.height, spec.width, 3),
                      dtype=np.float32)
    clamped = []
    for k, t in enumerate(times):
        frames[k], was_clamped = render_frame(spec, t)
        if was_clamped:
            clamped.append(k)
    gt = mech.evaluate(spec.mechanism, times)
    return VideoDataset(frames, times, gt, tuple(clamped))


def _frame_path(directory, k):
    return os.path.join(directory, "frames", f"{k:06d}.ppm")


def write_ppm(path, frame):
    """8-bit binary PPM (P6), one byte per channel."""
    h, w, _ = frame.shape
    data = np.round(np.asarray(frame, dtype=np.float64) * 255.0)
    data = np.clip(data, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P6"):
        raise DataFormatError(f"{path}: not a binary PPM (P6) file")
    # Header: magic, width, height, maxval, single whitespace, raster.
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":  # comment line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise DataFormatError(f"{path}: malformed PPM header")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DataFormatError(f"{path}: expected maxval 255, got {maxval}")
    raster = blob[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise DataFormatError(f"{path}: truncated raster")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return (data.astype(np.float32) / 255.0)


def write_dataset(dataset, directory):
    """Write frames/%06d.ppm plus meta.txt (documented lossy 8-bit)."""
    os.makedirs(os.path.join(directory, "frames"), exist_ok=True)
    t, h, w, _ = dataset.frames.shape
    for k in range(t):
        write_ppm(_frame_path(directory, k), dataset.frames[k])
    lines = [f"{t} {w} {h}"]
    for k in range(t):
        lines.append(
            f"{k} {float(dataset.times[k])!r} "
            f"{float(dataset.ground_truth[k])!r}")
    with open(os.path.join(directory, "meta.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(directory):
    meta_path = os.path.join(directory, "meta.txt")
    try:
        with open(meta_path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as e:
        raise DataFormatError(f"cannot read {meta_path}: {e}") from e
    try:
        t, w, h = (int(x) for x in lines[0].split())
    except (ValueError, IndexError):
        raise DataFormatError(f"{meta_path}: bad header line") from None
    if len(lines) != t + 1:
        raise DataFormatError(
            f"{meta_path}: expected {t} frame lines, found {len(lines) - 1}")
    times = np.empty(t)
    gt = np.empty(t)
    frames = np.empty((t, h, w, 3), dtype=np.float32)
    for k, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != 3 or int(parts[0]) != k:
            raise DataFormatError(f"{meta_path}: bad frame line {k}")
        times[k] = float(parts[1])
        gt[k] = float(parts[2])
        path = _frame_path(directory, k)
        if not os.path.exists(path):
            raise DataFormatError(f"missing frame file {path}")
        frame = read_ppm(path)
        if frame.shape != (h, w, 3):
            raise DataFormatError(
                f"{path}: frame is {frame.shape[1]}x{frame.shape[0]}, "
                f"metadata says {w}x{h}")
        frames[k] = frame
    return VideoDataset(frames, times, gt)


# ---------------------------------------------------------------------------
# Analysis helper (used by demos, tests and the intervention checks)


def centroid_row(frame, bg):
    """Intensity-weighted centroid row of a frame after removing the
    background color; nan if the frame is all background."""
    weight = np.abs(np.asarray(frame, dtype=np.float64)
                    - np.asarray(bg)).mean(axis=-1)
    total = weight.sum()
    if total <= 0:
        return float("nan")
    rows = np.arange(frame.shape[0])
    return float((weight.sum(axis=1) * rows).sum() / total)
