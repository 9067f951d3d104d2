"""Procedural toy fields, rendered-view preprocessing, and manifest ingestion."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .field import FieldSample, FieldSpec, View, camera_coordinate, frame_coordinate
from .io import from_uint8, read_image, read_pnm, to_uint8, write_image, write_pnm

log = logging.getLogger(__name__)

COLORS = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
}
MOTIONS = {"left_to_right": "left to right", "top_to_bottom": "top to bottom"}
BACKGROUND = -1.0
MAX_FRAMES = 128


# ----------------------------------------------------------------------------
# toy videos
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyVideoSpec:
    height: int = 16
    width: int = 16
    frames: int = 8
    square_size: int = 4
    color: str = "red"
    motion: str = "left_to_right"

    @property
    def caption(self) -> str:
        return f"a {self.color} square moving {MOTIONS[self.motion]}"


def square_track(spec: ToyVideoSpec, offset: int) -> list[tuple[int, int]]:
    """Top-left (row, col) of the square in each frame."""
    s = spec.square_size
    along = spec.width - s if spec.motion == "left_to_right" else spec.height - s
    out = []
    for i in range(spec.frames):
        pos = 0 if spec.frames == 1 else int(round(i * along / (spec.frames - 1)))
        out.append((offset, pos) if spec.motion == "left_to_right" else (pos, offset))
    return out


def gen_toy_video(spec: ToyVideoSpec, seed: int = 0, offset: int | None = None) -> FieldSample:
    """A coloured square moving linearly over a black background.

    ``seed`` picks the square's fixed cross-track position unless ``offset``
    is given explicitly.
    """
    if spec.color not in COLORS:
        raise ValueError(f"unknown color {spec.color!r}")
    if spec.motion not in MOTIONS:
        raise ValueError(f"unknown motion {spec.motion!r}")
    s = spec.square_size
    if s < 1 or s > spec.height or s > spec.width:
        raise ValueError(f"square_size {s} does not fit a {spec.height}x{spec.width} frame")
    cross = spec.height - s if spec.motion == "left_to_right" else spec.width - s
    if offset is None:
        offset = int(np.random.default_rng(seed).integers(0, cross + 1))
    if not 0 <= offset <= cross:
        raise ValueError(f"offset {offset} outside [0, {cross}]")
    color = np.asarray(COLORS[spec.color])
    image = spec.frames == 1
    fspec = FieldSpec(metric_dim=2 if image else 3, signal_dim=3, height=spec.height,
                      width=spec.width, num_views=spec.frames)
    views = []
    for i, (r, c) in enumerate(square_track(spec, offset)):
        px = np.full((spec.height, spec.width, 3), BACKGROUND)
        px[r:r + s, c:c + s] = color
        coord = () if image else (frame_coordinate(i, spec.frames),)
        views.append(View(px, coord))
    return FieldSample(fspec, views, spec.caption, meta={"color": spec.color, "motion": spec.motion,
                                                          "offset": offset})


def toy_video_dataset(height: int = 16, width: int = 16, frames: int = 8, square_size: int = 4,
                      colors=tuple(COLORS), motions=tuple(MOTIONS)) -> list[FieldSample]:
    """Every (color, motion, cross-track offset) combination."""
    out = []
    for color in colors:
        for motion in motions:
            spec = ToyVideoSpec(height, width, frames, square_size, color, motion)
            cross = (height if motion == "left_to_right" else width) - square_size
            out.extend(gen_toy_video(spec, offset=o) for o in range(cross + 1))
    return out


# ----------------------------------------------------------------------------
# toy multi-view renderings
# ----------------------------------------------------------------------------

_CUBE_VERTS = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
_CUBE_FACES = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
_FACE_COLORS = np.array([[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.25, 0.35, 0.9],
                         [0.9, 0.85, 0.2], [0.8, 0.3, 0.8], [0.2, 0.8, 0.85]])


@dataclass(frozen=True)
class ToyMultiViewSpec:
    size: int = 32
    views: int = 16
    elevation: float = math.radians(25.0)
    camera_radius: float = 3.0
    focal: float = 2.0  # in units of half the image width
    half_extent: float = 0.6
    caption: str = "a colorful cube"


def _look_at(eye: np.ndarray) -> np.ndarray:
    fwd = -eye / np.linalg.norm(eye)
    right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    return np.stack([right, up, fwd])


def render_cube(spec: ToyMultiViewSpec, azimuth: float) -> tuple[np.ndarray, np.ndarray]:
    """Painter's-algorithm render. Returns ([0,1] RGB image, boolean object mask)."""
    n = spec.size
    el, r = spec.elevation, spec.camera_radius
    eye = r * np.array([math.cos(el) * math.sin(azimuth), math.sin(el), math.cos(el) * math.cos(azimuth)])
    rot = _look_at(eye)
    cam = (_CUBE_VERTS * spec.half_extent - eye) @ rot.T  # x right, y up, z forward
    if (cam[:, 2] <= 0).any():
        raise ValueError("camera is inside or too close to the object")
    f = spec.focal * n / 2.0
    xy = np.stack([f * cam[:, 0] / cam[:, 2] + n / 2.0, n / 2.0 - f * cam[:, 1] / cam[:, 2]], axis=1)
    img = np.zeros((n, n, 3))
    mask = np.zeros((n, n, 1))
    depth = [cam[list(face), 2].mean() for face in _CUBE_FACES]
    for k in np.argsort(depth)[::-1]:
        a, b, c, d = _CUBE_FACES[k]
        for tri in ((a, b, c), (a, c, d)):
            pts = xy[list(tri)]
            _kernels.fill_triangle(img, pts, _FACE_COLORS[k])
            _kernels.fill_triangle(mask, pts, np.ones(1))
    return img, mask[:, :, 0] > 0


def gen_toy_views(spec: ToyMultiViewSpec = ToyMultiViewSpec(), seed: int = 0) -> FieldSample:
    """A cube seen from an azimuth ring; view coordinates use the 6-vector camera layout.

    ``seed`` rotates the ring start by a multiple of the ring spacing only
    when nonzero, so seed 0 starts at azimuth 0.
    """
    start = (seed % spec.views) * 2 * math.pi / spec.views
    views, masks = [], []
    for i in range(spec.views):
        az = (start + 2 * math.pi * i / spec.views) % (2 * math.pi)
        img, mask = render_cube(spec, az)
        coord = camera_coordinate(az, spec.elevation, spec.camera_radius, spec.focal)
        views.append(View(img * 2.0 - 1.0, coord))
        masks.append(mask)
    fspec = FieldSpec(metric_dim=6, signal_dim=3, height=spec.size, width=spec.size, num_views=spec.views)
    return FieldSample(fspec, views, spec.caption, masks=masks)


# ----------------------------------------------------------------------------
# rendered-view preprocessing
# ----------------------------------------------------------------------------

def _check_mask(view: View, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[:, :, 0]
    if mask.shape != view.pixels.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match view {view.pixels.shape[:2]}")
    return mask.astype(bool)


def prefill_blank(view: View, object_mask: np.ndarray, sigma: float = 0.1,
                  rng: np.random.Generator | None = None) -> View:
    """Replace background pixels with N(0, sigma) draws; object pixels are untouched."""
    mask = _check_mask(view, object_mask)
    rng = rng if rng is not None else np.random.default_rng()
    px = view.pixels.copy()
    noise = np.clip(rng.normal(0.0, sigma, px.shape), -1.0, 1.0)
    bg = ~mask
    px[bg] = noise[bg]
    return View(px, view.view_coord)


def postprocess_mask(view: View, object_mask: np.ndarray, background: float = BACKGROUND) -> View:
    """Set background pixels to the dataset background value."""
    mask = _check_mask(view, object_mask)
    px = view.pixels.copy()
    px[~mask] = background
    return View(px, view.view_coord)


def subsample_frames(num_frames: int, target: int = MAX_FRAMES) -> list[int]:
    """Uniform indices floor(i * T / target); identity when T <= target."""
    if num_frames <= target:
        return list(range(num_frames))
    return [i * num_frames // target for i in range(target)]


# ----------------------------------------------------------------------------
# manifests
# ----------------------------------------------------------------------------

@dataclass
class ManifestReport:
    records: int = 0
    skipped: int = 0
    fields: int = 0
    messages: list = field(default_factory=list)


class ManifestDataset:
    """Fields listed in a manifest; images load lazily on indexing.

    Records are grouped into fields by the parent directory of their image
    path, in first-appearance order; views keep manifest order.
    """

    def __init__(self, root: Path, groups: list, spec: FieldSpec, report: ManifestReport):
        self.root = root
        self.groups = groups
        self.spec = spec
        self.report = report

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> FieldSample:
        recs = self.groups[i]
        views, masks = [], []
        for rel, coord, _ in recs:
            path = self.root / rel
            img = read_image(path)
            views.append(View(from_uint8(img), coord))
            mpath = path.with_name(path.stem + "_mask.pgm")
            if mpath.exists():
                masks.append(read_pnm(mpath) > 127)
        first = views[0]
        spec = FieldSpec(self.spec.metric_dim, first.channels, first.height, first.width, len(views))
        return FieldSample(spec, views, recs[0][2], masks=masks if len(masks) == len(views) else None)


def ingest_manifest(path, metric_dim: int = 3, max_frames: int = MAX_FRAMES) -> ManifestDataset:
    """Parse a manifest of ``image_path, v1..v_dv, caption`` records.

    Records with the wrong coordinate count or a missing image are skipped
    with a warning; fields with more than ``max_frames`` views are uniformly
    subsampled.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    spec = FieldSpec(metric_dim=metric_dim)
    dv = spec.view_coord_dim
    report = ManifestReport()
    grouped: dict[str, list] = {}
    for lineno, row in enumerate(csv.reader(text.splitlines()), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        report.records += 1
        row = [c.strip() for c in row]
        rel, rest = row[0], row[1:]
        problem = None
        if len(rest) != dv + 1:
            problem = f"expected {dv} coordinates and a caption, got {len(rest)} fields"
        else:
            try:
                coord = tuple(float(v) for v in rest[:dv])
            except ValueError:
                problem = "non-numeric coordinate"
            else:
                if not (path.parent / rel).is_file():
                    problem = f"missing image {rel}"
        if problem:
            report.skipped += 1
            msg = f"{path}:{lineno}: skipped ({problem})"
            report.messages.append(msg)
            log.warning(msg)
            continue
        grouped.setdefault(str(Path(rel).parent), []).append((rel, coord, rest[-1]))
    groups = []
    for recs in grouped.values():
        groups.append([recs[i] for i in subsample_frames(len(recs), max_frames)])
    report.fields = len(groups)
    if not groups:
        log.warning("%s: manifest contains no usable fields", path)
    return ManifestDataset(path.parent, groups, spec, report)


def write_manifest(out_dir, fields: list[FieldSample], ext: str = ".ppm") -> Path:
    """Write fields as images plus ``manifest.csv`` (one subdirectory per field)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for fi, f in enumerate(fields):
        sub = out_dir / f"field_{fi:04d}"
        sub.mkdir(exist_ok=True)
        for vi, v in enumerate(f.views):
            name = f"view_{vi:03d}{ext}"
            write_image(sub / name, to_uint8(v.pixels))
            if f.masks is not None:
                write_pnm(sub / f"view_{vi:03d}_mask.pgm", np.where(f.masks[vi], 255, 0).astype(np.uint8))
            rows.append([f"{sub.name}/{name}", *(repr(c) for c in v.view_coord), f.caption])
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    return manifest
