"""Frame loading, sketch extraction, triplet datasets and augmentation.

Rasters are plain ``numpy`` float arrays in [0, 1]: ``(H, W)`` for sketches,
``(H, W, 3)`` for colour frames. Sketches use dark strokes on a white
background everywhere in the package.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.morphology import remove_small_objects, thin
from skimage.transform import resize

log = logging.getLogger(__name__)

MIN_SIDE = 16
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MANIFEST_NAME = "index.manifest"


def check_raster(img: np.ndarray, name: str = "raster") -> np.ndarray:
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise ValueError(f"{name}: expected (H, W) or (H, W, 1|3), got {img.shape}")
    if min(img.shape[:2]) < MIN_SIDE:
        raise ValueError(f"{name}: height and width must be >= {MIN_SIDE}, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name}: values must lie in [0, 1]")
    return img


def load_raster(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit grayscale or RGB image and scale it to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif im.mode in ("1", "P", "LA", "I;16"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_raster(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a [0, 1] raster as an 8-bit PNG (grayscale when single-channel)."""
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.shape[2] == 1 or (np.array_equal(img[..., 0], img[..., 1]) and np.array_equal(img[..., 0], img[..., 2])):
        return img[..., 0]
    return img @ np.array([0.299, 0.587, 0.114])


def sketchize(
    color: np.ndarray,
    sigmas: tuple[float, float] = (1.0, 1.6),
    min_stroke_px: int = 12,
    blur: float = 0.0,
) -> np.ndarray:
    """Convert a colour frame into a thin dark-on-white line sketch.

    Contours come from the dark side of a difference of Gaussians, binarised
    with Otsu's threshold; an input that is already binary is taken as its
    own contour map. Connected stroke fragments smaller than
    ``min_stroke_px`` are dropped and the rest are thinned to one pixel.
    With ``blur > 0`` the binary result is softened by a Gaussian of that
    sigma.
    """
    if color.ndim != 3 or color.shape[2] != 3:
        raise ValueError(f"sketchize expects a 3-channel frame, got shape {color.shape}")
    gray = to_gray(color)
    if np.all((gray == 0.0) | (gray == 1.0)):
        # binary line art is its own contour map
        strokes = gray < 0.5
    else:
        # dark-ridge response: positive where a pixel is darker than its wider surround
        response = np.maximum(ndimage.gaussian_filter(gray, sigmas[1]) - ndimage.gaussian_filter(gray, sigmas[0]), 0.0)
        if response.max() - response.min() < 1e-6:
            return np.ones(gray.shape)
        strokes = response > threshold_otsu(response)
    strokes = _simplify(strokes, min_stroke_px)
    sketch = np.where(strokes, 0.0, 1.0)
    if blur > 0:
        sketch = np.clip(ndimage.gaussian_filter(sketch, blur), 0.0, 1.0)
    return sketch


def _simplify(strokes: np.ndarray, min_stroke_px: int) -> np.ndarray:
    # iterate to a fixpoint so that a simplified sketch passes through unchanged
    while True:
        prev = strokes
        strokes = remove_small_objects(strokes, min_size=min_stroke_px, connectivity=2)
        strokes = _break_blocks(thin(strokes))
        if np.array_equal(strokes, prev):
            return strokes


def _break_blocks(strokes: np.ndarray) -> np.ndarray:
    # thinning can leave solid 2x2 squares; drop one corner until none remain
    strokes = strokes.copy()
    while True:
        block = strokes[:-1, :-1] & strokes[1:, :-1] & strokes[:-1, 1:] & strokes[1:, 1:]
        if not block.any():
            return strokes
        ys, xs = np.nonzero(block)
        strokes[ys[0], xs[0]] = False


@dataclass
class Triplet:
    frame0: np.ndarray
    frame_mid: np.ndarray
    frame1: np.ndarray
    id: str = ""

    def frames(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.frame0, self.frame_mid, self.frame1


@dataclass
class DatasetEntry:
    id: str
    clip: str
    paths: tuple[str, str, str]


@dataclass
class DatasetIndex:
    root: Path
    entries: list[DatasetEntry] = field(default_factory=list)
    split: str = "train"
    skipped_clips: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def load(self, i: int) -> Triplet:
        e = self.entries[i]
        frames = [to_gray(load_raster(self.root / p)) for p in e.paths]
        return Triplet(frames[0], frames[1], frames[2], id=e.id)

    def write_manifest(self) -> Path:
        path = Path(self.root) / MANIFEST_NAME
        lines = [json.dumps({"kind": "header", "split": self.split, "skipped_clips": self.skipped_clips,
                             "triplets": len(self.entries)}, sort_keys=True)]
        for e in self.entries:
            lines.append(json.dumps({"kind": "triplet", "id": e.id, "clip": e.clip,
                                     "frame0": e.paths[0], "frame1": e.paths[1], "frame2": e.paths[2]},
                                    sort_keys=True))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read(cls, root: str | os.PathLike) -> DatasetIndex:
        root = Path(root)
        manifest = root / MANIFEST_NAME
        if not manifest.is_file():
            raise FileNotFoundError(f"no dataset manifest at {manifest}")
        index = cls(root=root)
        seen = set()
        for line in manifest.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["kind"] == "header":
                index.split = rec["split"]
                index.skipped_clips = rec["skipped_clips"]
                continue
            if rec["id"] in seen:
                raise ValueError(f"duplicate triplet id {rec['id']} in {manifest}")
            seen.add(rec["id"])
            paths = (rec["frame0"], rec["frame1"], rec["frame2"])
            for p in paths:
                if not (root / p).is_file():
                    raise FileNotFoundError(f"manifest entry {rec['id']} points at missing file {root / p}")
            index.entries.append(DatasetEntry(rec["id"], rec["clip"], paths))
        return index


def list_frames(clip_dir: Path) -> list[Path]:
    return sorted(p for p in clip_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def triplet_starts(n_frames: int, stride: int) -> range:
    """Start indices i of the triplets (i, i + stride, i + 2 * stride)."""
    return range(max(0, n_frames - 2 * stride))


def build_dataset(
    frames_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    stride: int = 1,
    split: str = "train",
    convert: bool = False,
) -> DatasetIndex:
    """Cut every clip under ``frames_dir`` into frame triplets.

    ``frames_dir`` holds one sub-directory of ordered frames per clip (a flat
    directory of frames is treated as a single clip). Triplets are written to
    ``out_dir/<clip>/<triplet_id>/frame{0,1,2}.png`` together with the
    manifest. With ``convert`` colour frames are sketchized on the way.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    frames_dir, out_dir = Path(frames_dir), Path(out_dir)
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frames directory not found: {frames_dir}")
    clips = sorted(p for p in frames_dir.iterdir() if p.is_dir())
    if not clips:
        clips = [frames_dir]
    index = DatasetIndex(root=out_dir, split=split)
    for clip in clips:
        frames = list_frames(clip)
        starts = triplet_starts(len(frames), stride)
        if not starts:
            log.warning("clip %s has %d frames, need %d for stride %d; skipped",
                        clip.name, len(frames), 2 * stride + 1, stride)
            index.skipped_clips += 1
            continue
        cache: dict[int, np.ndarray] = {}

        def frame(k: int) -> np.ndarray:
            if k not in cache:
                img = load_raster(frames[k])
                if convert and img.ndim == 3:
                    img = sketchize(img)
                cache[k] = to_gray(img)
            return cache[k]

        for i in starts:
            tid = f"{clip.name}_{i:05d}"
            rel = Path(clip.name) / tid
            paths = tuple(str(rel / f"frame{k}.png") for k in range(3))
            for k, p in zip((i, i + stride, i + 2 * stride), paths):
                save_raster(out_dir / p, frame(k))
            index.entries.append(DatasetEntry(tid, clip.name, paths))
    out_dir.mkdir(parents=True, exist_ok=True)
    index.write_manifest()
    return index


def augment(
    t: Triplet,
    seed: int,
    size: tuple[int, int] = (384, 192),
    flip: bool | None = None,
) -> Triplet:
    """Resize, crop and optionally flip all three frames identically.

    ``size`` is (width, height). Frames are scaled (keeping aspect) just
    enough to cover the target, then cropped at a seed-chosen offset. The
    horizontal flip is a seeded coin toss unless ``flip`` forces it.
    """
    rng = np.random.default_rng(seed)
    tw, th = size
    h, w = t.frame0.shape[:2]
    scale = max(tw / w, th / h)
    nh, nw = max(th, int(np.ceil(h * scale - 1e-9))), max(tw, int(np.ceil(w * scale - 1e-9)))
    y0 = int(rng.integers(0, nh - th + 1))
    x0 = int(rng.integers(0, nw - tw + 1))
    do_flip = bool(rng.integers(0, 2)) if flip is None else flip

    def apply(img: np.ndarray) -> np.ndarray:
        if (nh, nw) != (h, w):
            img = resize(img, (nh, nw) + img.shape[2:], order=1, mode="edge", anti_aliasing=False)
        img = np.clip(img[y0:y0 + th, x0:x0 + tw], 0.0, 1.0)
        if do_flip:
            img = img[:, ::-1]
        return np.ascontiguousarray(img)

    return Triplet(apply(t.frame0), apply(t.frame_mid), apply(t.frame1), id=t.id)
