"""Images, the synthetic labelled dataset, and dataset files on disk.

Images are ``uint8`` arrays in planar ``(C, H, W)`` layout. On disk they are
binary PPM (P6, maxval 255) files, whose payload is interleaved RGB; a dataset
is a directory of such files plus ``manifest.csv`` with columns
``image_path,label`` (paths relative to the manifest).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.csv"


class PPMError(ValueError):
    pass


class PPMMagicError(PPMError):
    pass


class PPMMaxvalError(PPMError):
    pass


class PPMTruncatedError(PPMError):
    pass


def as_image(a) -> np.ndarray:
    """Validate ``a`` as a (C, H, W) image on the {0..255} pixel lattice."""
    arr = np.asarray(a)
    if arr.ndim != 3:
        raise ValueError(f"image must be (C, H, W), got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)) or arr.min() < 0 or arr.max() > 255:
            raise ValueError("image pixels must be integers in 0..255")
        arr = arr.astype(np.uint8)
    return arr


def parse_shape(text: str) -> tuple[int, int, int]:
    """Parse ``"3x32x32"`` into ``(3, 32, 32)``."""
    parts = text.lower().split("x")
    try:
        shape = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"shape must look like CxHxW, got {text!r}") from None
    if len(shape) != 3 or min(shape) < 1:
        raise ValueError(f"shape must be three positive integers CxHxW, got {text!r}")
    return shape


# ---------------------------------------------------------------- PPM files


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PPMTruncatedError("PPM header ended early")
    return buf[start:pos], pos


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise PPMMagicError(f"not a binary PPM: magic is {buf[:2]!r}, expected b'P6'")
    pos = 2
    values = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(buf, pos)
        try:
            values.append(int(tok))
        except ValueError:
            raise PPMError(f"PPM {name} is not an integer: {tok!r}") from None
    width, height, maxval = values
    if maxval != 255:
        raise PPMMaxvalError(f"PPM maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise PPMError(f"PPM dimensions must be positive, got {width}x{height}")
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PPMTruncatedError("PPM header is not followed by pixel data")
    pos += 1
    need = width * height * 3
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise PPMTruncatedError(f"PPM payload has {len(payload)} bytes, expected {need}")
    hwc = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(hwc.transpose(2, 0, 1))


def encode_ppm(image) -> bytes:
    img = as_image(image)
    if img.shape[0] != 3:
        raise ValueError(f"PPM images need 3 channels, got shape {img.shape}")
    _, h, w = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(image, path) -> None:
    Path(path).write_bytes(encode_ppm(image))


# ------------------------------------------------------------------ datasets


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) uint8
    labels: np.ndarray  # (N,) float64
    ids: list[str] = field(default_factory=list)
    generator: str = ""
    seed: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.images.ndim != 4 or self.images.dtype != np.uint8:
            raise ValueError(f"images must be a uint8 (N, C, H, W) array, got {self.images.dtype} {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(f"{self.images.shape[0]} images but labels have shape {self.labels.shape}")
        if not np.all(np.isfinite(self.labels)):
            raise ValueError("labels must be finite")
        if not self.ids:
            self.ids = [f"img_{i:05d}" for i in range(len(self.labels))]
        elif len(self.ids) != len(self.labels):
            raise ValueError(f"{len(self.ids)} ids for {len(self.labels)} images")

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(zip(self.images, self.labels))

    def __getitem__(self, i):
        return self.images[i], float(self.labels[i])

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.intp)
        return LabeledDataset(
            self.images[index], self.labels[index], [self.ids[i] for i in index], self.generator, self.seed
        )


def vertical_gradient_coefficient(image) -> float:
    """Bottom-half mean minus top-half mean, in units of full scale (so in [-1, 1])."""
    img = np.asarray(image, dtype=np.float64)
    h = img.shape[1]
    half = h // 2
    if half == 0:
        return 0.0
    top = img[:, :half].mean()
    bottom = img[:, h - half :].mean()
    return float((bottom - top) / 255.0)


def synth_label(image) -> float:
    """Label rule of the synthetic dataset: 15 + 20*mean/255 + 3*gradient, clamped to [14, 45]."""
    img = np.asarray(image, dtype=np.float64)
    value = 15.0 + 20.0 * img.mean() / 255.0 + 3.0 * vertical_gradient_coefficient(img)
    return float(min(max(value, 14.0), 45.0))


def _synth_image(rng: np.random.Generator, shape) -> np.ndarray:
    c, h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1.0, 1.0, h), np.linspace(-1.0, 1.0, w), indexing="ij")
    base = rng.uniform(25.0, 230.0)
    tint = rng.normal(0.0, 15.0, size=c)
    img = np.broadcast_to(base + tint[:, None, None], (c, h, w)).copy()
    # smooth ramps
    img += rng.uniform(-60.0, 60.0) * yy / 2.0
    img += rng.uniform(-40.0, 40.0) * xx / 2.0
    # gaussian blobs
    for _ in range(rng.integers(0, 4)):
        cy, cx = rng.uniform(-1.0, 1.0, size=2)
        sigma = rng.uniform(0.15, 0.5)
        amp = rng.uniform(-70.0, 70.0, size=c)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
        img += amp[:, None, None] * bump
    img += rng.normal(0.0, 8.0, size=img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synth_dataset(n: int, shape=(3, 32, 32), seed: int = 0) -> LabeledDataset:
    """Seeded stand-in for a (photo, BMI) dataset.

    Each image mixes a base brightness with a per-channel tint, horizontal and
    vertical ramps, a few Gaussian blobs and pixel noise. Labels come from
    :func:`synth_label`, a smooth function of global image content that spans
    the underweight through obese bands. Image ``i`` depends only on
    ``(seed, i)``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    shape = tuple(int(s) for s in shape)
    children = np.random.SeedSequence(seed).spawn(n)
    images = np.stack([_synth_image(np.random.default_rng(ss), shape) for ss in children])
    labels = np.array([synth_label(img) for img in images])
    return LabeledDataset(images, labels, generator="synth", seed=seed)


def grand_mean(dataset) -> float:
    """Mean of every pixel of every image, as a single scalar."""
    images = dataset.images if isinstance(dataset, LabeledDataset) else np.asarray(dataset)
    if images.size == 0:
        raise ValueError("grand mean of an empty dataset")
    # integer sum is exact; one rounding in the division
    return int(images.sum(dtype=np.int64)) / images.size


def split(dataset: LabeledDataset, train_fraction: float, seed: int = 0):
    """Seeded shuffle, then the first ``floor(n * train_fraction)`` items are the training side."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(n * train_fraction)
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} items at fraction {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[:n_train])), dataset.subset(np.sort(order[n_train:]))


def write_dataset(dataset: LabeledDataset, out_dir) -> Path:
    """Write one PPM per image plus the manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for image_id, img, label in zip(dataset.ids, dataset.images, dataset.labels):
        name = f"{image_id}.ppm"
        write_ppm(img, out / name)
        rows.append((name, repr(float(label))))
    manifest = out / MANIFEST_NAME
    tmp = manifest.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["image_path", "label"])
        writer.writerows(rows)
    os.replace(tmp, manifest)
    return manifest


def read_dataset(manifest) -> LabeledDataset:
    """Load a dataset from its manifest CSV (or the directory holding it)."""
    path = Path(manifest)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    images, labels, ids = [], [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"image_path", "label"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain image_path,label")
        for row_no, row in enumerate(reader, start=2):
            try:
                label = float(row["label"])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{row_no}: bad label {row['label']!r}") from None
            img_path = path.parent / row["image_path"]
            try:
                images.append(read_ppm(img_path))
            except (OSError, PPMError) as e:
                raise ValueError(f"{path}:{row_no}: cannot read {img_path}: {e}") from e
            labels.append(label)
            ids.append(Path(row["image_path"]).stem)
    if not images:
        raise ValueError(f"{path}: dataset is empty")
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise ValueError(f"{path}: images have mixed shapes {sorted(shapes)}")
    return LabeledDataset(np.stack(images), np.array(labels), ids, generator="file")
