"""IDX dataset I/O and splitting."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import IngestionError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


@dataclass
class Dataset:
    images: np.ndarray          # (n, H, W) or (n, H, W, C), float in [0, 1]
    labels: np.ndarray          # (n,) int
    classes: int = 10
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise IngestionError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise IngestionError(f"labels outside [0, {self.classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.classes, dict(self.tags))

    def as_nhwc(self) -> np.ndarray:
        return self.images[..., None] if self.images.ndim == 3 else self.images


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Raw uint8 array from an IDX file (optionally gzipped)."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"missing dataset file: {path}")
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IngestionError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise IngestionError(f"{path}: bad magic {magic}")
    ndim = 3 if magic == IMAGE_MAGIC else 1
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IngestionError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    n = int(np.prod(dims))
    if len(raw) - head < n:
        raise IngestionError(f"{path}: expected {n} bytes of data, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=head).reshape(dims)


def write_idx(path, array) -> None:
    a = np.asarray(array)
    if a.ndim == 3:
        magic = IMAGE_MAGIC
    elif a.ndim == 1:
        magic = LABEL_MAGIC
    else:
        raise IngestionError("IDX writer supports image stacks (3-D) and label vectors (1-D)")
    header = struct.pack(">I" + "I" * a.ndim, magic, *a.shape)
    path = Path(path)
    with (gzip.GzipFile(path, "wb", mtime=0) if path.suffix == ".gz" else open(path, "wb")) as fh:
        fh.write(header + a.astype(np.uint8).tobytes())


def load_dataset(path, format: str = "idx", classes: int = 10) -> Dataset:
    """Load an images/labels IDX pair.

    ``path`` is either a tuple ``(images_file, labels_file)`` or a directory
    holding the standard ``*-images-idx3-ubyte[.gz]`` / ``*-labels-idx1-ubyte[.gz]``
    pair for one split (the first matching pair is used).
    """
    if format != "idx":
        raise IngestionError(f"unsupported dataset format {format!r}")
    if isinstance(path, (tuple, list)):
        img_path, lbl_path = map(Path, path)
    else:
        img_path, lbl_path = _find_pair(Path(path))
    images = read_idx(img_path)
    labels = read_idx(lbl_path)
    if images.ndim != 3:
        raise IngestionError(f"{img_path}: not an image file")
    if labels.ndim != 1:
        raise IngestionError(f"{lbl_path}: not a label file")
    if len(images) != len(labels):
        raise IngestionError(f"{len(images)} images but {len(labels)} labels")
    if labels.size and labels.max() >= classes:
        raise IngestionError(f"label {int(labels.max())} outside [0, {classes})")
    return Dataset(images / 255.0, labels.astype(np.int64), classes,
                   {"source": str(img_path)})


def _find_pair(d: Path):
    if not d.is_dir():
        raise IngestionError(f"dataset path not found: {d}")
    imgs = sorted(p for p in d.iterdir() if "images-idx3" in p.name)
    for img in imgs:
        lbl = d / img.name.replace("images-idx3", "labels-idx1")
        if lbl.exists():
            return img, lbl
    raise IngestionError(f"no images/labels IDX pair in {d}")


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    """Standard MNIST train and test splits from ``directory``."""
    d = Path(directory)
    out = []
    for split in ("train", "t10k"):
        pair = None
        for suffix in ("", ".gz"):
            img = d / f"{split}-images-idx3-ubyte{suffix}"
            lbl = d / f"{split}-labels-idx1-ubyte{suffix}"
            if img.exists() and lbl.exists():
                pair = (img, lbl)
                break
        if pair is None:
            raise IngestionError(f"missing MNIST {split} files in {d}")
        out.append(load_dataset(pair))
    return out[0], out[1]


def split(ds: Dataset, fractions, rng: np.random.Generator) -> list[Dataset]:
    """Shuffle once and cut into consecutive parts with the given fractions."""
    order = rng.permutation(len(ds))
    bounds = np.round(np.cumsum([0.0, *fractions]) * len(ds)).astype(int)
    bounds[-1] = min(bounds[-1], len(ds))
    return [ds.subset(order[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def downsample(ds: Dataset, factor: int) -> Dataset:
    """Average-pool images by ``factor`` along both spatial axes."""
    x = ds.images
    n, h, w = x.shape[:3]
    h2, w2 = h // factor, w // factor
    x = x[:, :h2 * factor, :w2 * factor]
    x = x.reshape(n, h2, factor, w2, factor, *x.shape[3:]).mean(axis=(2, 4))
    return Dataset(x, ds.labels, ds.classes, dict(ds.tags))


def mnist_subset() -> Dataset:
    """The 5000-image MNIST sample bundled in the ``mlxtend`` wheel (500 per digit).

    Rows are ``784 pixels, label`` in class order; shuffle before splitting.
    Only the data file is read, mlxtend itself is never imported.
    """
    import importlib.util

    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise IngestionError("MNIST subset needs the mlxtend package (pip install mlxtend)")
    path = Path(list(spec.submodule_search_locations)[0]) / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise IngestionError(f"missing {path}")
    raw = np.loadtxt(path, delimiter=",", dtype=np.float64)
    images = raw[:, :-1].reshape(-1, 28, 28)
    return Dataset(images / 255.0, raw[:, -1].astype(np.int64), 10, {"source": str(path)})


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    """CIFAR-10 binary release: ``data_batch_{1..5}.bin`` and ``test_batch.bin``.

    Each record is one label byte followed by a 3x32x32 channel-major image.
    """
    d = Path(directory)
    rec = 1 + 3 * 32 * 32

    def read(names):
        parts = []
        for name in names:
            p = d / name
            if not p.exists():
                raise IngestionError(f"missing CIFAR-10 file {p}")
            raw = np.frombuffer(p.read_bytes(), dtype=np.uint8)
            if raw.size % rec:
                raise IngestionError(f"{p}: truncated record")
            parts.append(raw.reshape(-1, rec))
        a = np.concatenate(parts)
        images = a[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1) / 255.0
        return Dataset(images, a[:, 0].astype(np.int64), 10, {"source": str(d)})

    return read([f"data_batch_{k}.bin" for k in range(1, 6)]), read(["test_batch.bin"])
