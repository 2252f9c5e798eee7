"""Image I/O, bicubic degradation, dataset preparation, and patch sampling.

The resampler follows the MATLAB imresize convention: separable cubic
kernel with a = -0.5, kernel support stretched by the scale factor when
downscaling (antialiasing), edge-clamped sampling, and per-position
weight normalization.  Matching this convention is what makes the
classic bicubic baseline numbers reproducible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .autograd import Tensor

__all__ = [
    "load_image",
    "save_image",
    "quantize",
    "bicubic_resize",
    "IndexEntry",
    "DatasetIndex",
    "prepare_dataset",
    "load_index",
    "SamplePair",
    "sample_batch",
    "augment",
    "dihedral_transform",
    "batch_to_tensors",
]

IMAGE_SUFFIXES = {".png", ".bmp"}
MANIFEST_NAME = "index.txt"


# ---------------------------------------------------------------------------
# Image I/O


def load_image(path) -> np.ndarray:
    """Decode to (h, w, 3) float32 in [0, 1]; 8-bit values map by v/255."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid while staying in float, clipped to [0, 1]."""
    return to_uint8(img).astype(np.float32) / 255.0


def save_image(path, img: np.ndarray) -> None:
    """Write float RGB as 8-bit PNG, quantizing by round(v*255)."""
    PILImage.fromarray(to_uint8(img)).save(path, format="PNG")


# ---------------------------------------------------------------------------
# Bicubic resampling


def _cubic(t: np.ndarray) -> np.ndarray:
    # Keys kernel with a = -0.5: k(0)=1, k(+-1)=0, support 2
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    return np.where(
        at <= 1.0,
        1.5 * at3 - 2.5 * at2 + 1.0,
        np.where(at < 2.0, -0.5 * at3 + 2.5 * at2 - 4.0 * at + 2.0, 0.0),
    )


def _resample_matrix(in_len: int, out_len: int) -> np.ndarray:
    """Dense (out_len, in_len) row-stochastic resampling operator."""
    scale = out_len / in_len
    if scale < 1.0:
        kernel_width, kernel_scale = 4.0 / scale, scale
    else:
        kernel_width, kernel_scale = 4.0, 1.0
    u = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(u - kernel_width / 2.0)
    taps = int(math.ceil(kernel_width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = _cubic((u[:, None] - idx) * kernel_scale) * kernel_scale
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1).astype(np.intp)
    matrix = np.zeros((out_len, in_len), dtype=np.float64)
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(matrix, (rows, idx.reshape(-1)), weights.reshape(-1))
    return matrix


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable cubic resampling of (h, w) or (h, w, c); channels independent."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    mh = _resample_matrix(h, out_h)
    mw = _resample_matrix(w, out_w)
    x = img.astype(np.float64, copy=False)
    if x.ndim == 2:
        out = mh @ x @ mw.T
    else:
        out = np.stack([mh @ x[..., c] @ mw.T for c in range(x.shape[2])], axis=-1)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Dataset preparation


@dataclass
class IndexEntry:
    hr_path: str                 # relative to the index root
    height: int                  # cropped HR dims
    width: int
    lr_paths: dict[int, str]     # scale -> relative path

    def lr_size(self, scale: int) -> tuple[int, int]:
        return self.height // scale, self.width // scale


@dataclass
class DatasetIndex:
    root: Path
    scales: tuple[int, ...]
    entries: list[IndexEntry]
    skipped: list[tuple[str, str]] = field(default_factory=list)
    _cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def _load(self, rel: str) -> np.ndarray:
        arr = self._cache.get(rel)
        if arr is None:
            arr = load_image(self.root / rel)
            arr.setflags(write=False)
            self._cache[rel] = arr
        return arr

    def load_hr(self, entry: IndexEntry) -> np.ndarray:
        return self._load(entry.hr_path)

    def load_lr(self, entry: IndexEntry, scale: int) -> np.ndarray:
        return self._load(entry.lr_paths[scale])


def _iter_source_images(hr_dir: Path):
    for p in sorted(hr_dir.rglob("*")):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            yield p


def prepare_dataset(hr_dir, scales, out_dir) -> DatasetIndex:
    """Center-crop each HR image to a common multiple of all scales, cache
    its bicubic downscales, and write a plain-text manifest beside them."""
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    scales = tuple(sorted(set(int(s) for s in scales)))
    if not scales or any(s < 1 for s in scales):
        raise ValueError(f"need at least one positive scale, got {scales}")
    multiple = math.lcm(*scales)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries: list[IndexEntry] = []
    skipped: list[tuple[str, str]] = []
    for src in _iter_source_images(hr_dir):
        rel = src.relative_to(hr_dir).as_posix()
        try:
            img = load_image(src)
        except Exception as exc:  # undecodable file: record and move on
            warnings.warn(f"skipping {rel}: {exc}")
            skipped.append((rel, str(exc)))
            continue
        h, w = img.shape[:2]
        ch, cw = (h // multiple) * multiple, (w // multiple) * multiple
        if ch == 0 or cw == 0:
            reason = f"smaller than the {multiple}px crop multiple"
            warnings.warn(f"skipping {rel}: {reason}")
            skipped.append((rel, reason))
            continue
        top, left = (h - ch) // 2, (w - cw) // 2
        hr = img[top:top + ch, left:left + cw]

        hr_rel = (Path("hr") / rel).with_suffix(".png").as_posix()
        (out_dir / hr_rel).parent.mkdir(parents=True, exist_ok=True)
        save_image(out_dir / hr_rel, hr)
        lr_paths = {}
        for s in scales:
            lr_rel = (Path(f"lr_x{s}") / rel).with_suffix(".png").as_posix()
            (out_dir / lr_rel).parent.mkdir(parents=True, exist_ok=True)
            save_image(out_dir / lr_rel, bicubic_resize(hr, ch // s, cw // s))
            lr_paths[s] = lr_rel
        entries.append(IndexEntry(hr_rel, ch, cw, lr_paths))

    index = DatasetIndex(out_dir, scales, entries, skipped)
    _write_manifest(index)
    return index


def _write_manifest(index: DatasetIndex) -> None:
    lines = ["# bidense dataset index",
             "# scales: " + " ".join(str(s) for s in index.scales)]
    for rel, reason in index.skipped:
        lines.append(f"# skipped {rel}: {reason}")
    for e in index.entries:
        cols = [e.hr_path, str(e.height), str(e.width)]
        cols += [f"{s}={e.lr_paths[s]}" for s in sorted(e.lr_paths)]
        lines.append("\t".join(cols))
    (index.root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def load_index(root) -> DatasetIndex:
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {root}; run prepare_dataset first")
    scales: tuple[int, ...] = ()
    entries: list[IndexEntry] = []
    skipped: list[tuple[str, str]] = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("# scales:"):
            scales = tuple(int(s) for s in line.split(":", 1)[1].split())
        elif line.startswith("# skipped "):
            body = line[len("# skipped "):]
            rel, _, reason = body.partition(": ")
            skipped.append((rel, reason))
        elif line.startswith("#"):
            continue
        else:
            cols = line.split("\t")
            hr_rel, h, w = cols[0], int(cols[1]), int(cols[2])
            lr_paths = {}
            for col in cols[3:]:
                s, _, p = col.partition("=")
                lr_paths[int(s)] = p
            entries.append(IndexEntry(hr_rel, h, w, lr_paths))
    return DatasetIndex(root, scales, entries, skipped)


# ---------------------------------------------------------------------------
# Patch sampling and augmentation


@dataclass
class SamplePair:
    lr: np.ndarray       # (p, p, 3)
    hr: np.ndarray       # (scale*p, scale*p, 3)
    scale: int


def dihedral_transform(img: np.ndarray, k: int) -> np.ndarray:
    """The k-th of the 8 square symmetries: k%4 quarter turns, mirror if k>=4."""
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must be in 0..7, got {k}")
    out = np.rot90(img, k % 4, axes=(0, 1))
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(pair: SamplePair, rng: np.random.Generator) -> SamplePair:
    """Apply one uniformly drawn square symmetry to both patches."""
    if pair.lr.shape[0] != pair.lr.shape[1]:
        raise ValueError("augmentation requires square patches")
    k = int(rng.integers(8))
    return SamplePair(dihedral_transform(pair.lr, k),
                      dihedral_transform(pair.hr, k), pair.scale)


def sample_batch(index: DatasetIndex, scale: int, batch: int,
                 rng: np.random.Generator, hr_patch: int = 96) -> list[SamplePair]:
    """Uniformly random aligned LR/HR crops with augmentation applied per pair."""
    if hr_patch % scale:
        raise ValueError(f"hr_patch {hr_patch} must be divisible by scale {scale}")
    p = hr_patch // scale
    pool = [e for e in index.entries
            if scale in e.lr_paths and min(e.lr_size(scale)) >= p]
    if not pool:
        raise ValueError(
            f"no image in the index is large enough for {p}x{p} crops at x{scale}"
        )
    pairs = []
    for _ in range(batch):
        entry = pool[int(rng.integers(len(pool)))]
        lh, lw = entry.lr_size(scale)
        ly = int(rng.integers(lh - p + 1))
        lx = int(rng.integers(lw - p + 1))
        lr = index.load_lr(entry, scale)[ly:ly + p, lx:lx + p]
        hy, hx = scale * ly, scale * lx
        hr = index.load_hr(entry)[hy:hy + hr_patch, hx:hx + hr_patch]
        pairs.append(augment(SamplePair(lr, hr, scale), rng))
    return pairs


def batch_to_tensors(pairs: list[SamplePair]) -> tuple[Tensor, Tensor]:
    """Stack pairs into (n, 3, h, w) input and target tensors."""
    x = np.stack([
        np.ascontiguousarray(p.lr.transpose(2, 0, 1)) for p in pairs])
    y = np.stack([
        np.ascontiguousarray(p.hr.transpose(2, 0, 1)) for p in pairs])
    return Tensor(x), Tensor(y)
