"""Data generation, image rotation and file formats.

File formats (all little-endian unless stated otherwise):

``TSA1`` model file::

    magic   4s   b"TSA1"
    version u16  1
    D, J    u32, u32
    sigma   f64
    W       D*2J f64, row-major
    omega   J i32
    n_torus u32  0 or J, followed by n_torus*2 f64 (von Mises natural params)
    K       u32  0 or K, followed by K*2 f64 (GvM natural params)
    crc32   u32  over every preceding byte

``TSAD`` dataset file::

    magic   4s   b"TSAD"
    version u16  1
    kind    u16  0 = transformation pairs, 1 = labeled images
    N, D    u32, u32
    pairs:  X (N*D f64, item-major), Y (N*D f64), angles (N f64)
    images: X (N*D f64), labels (N i32)
    crc32   u32

IDX files follow the MNIST layout (big-endian header, unsigned bytes).
"""

from __future__ import annotations

import gzip
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circular import TWO_PI, GeneralizedVonMises
from .toral import ToralBasis

TANGENT_DELTA = np.deg2rad(0.1)


class FormatError(ValueError):
    """Malformed IDX, model or dataset file."""


class ChecksumError(FormatError):
    pass


@dataclass
class PairBatch:
    """Columns ``X[:, n]`` and ``Y[:, n]`` form one transformation pair."""

    X: np.ndarray
    Y: np.ndarray
    angles: np.ndarray = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.shape != self.Y.shape or self.X.ndim != 2:
            raise ValueError(f"X and Y must be equal-shape D x N matrices, got {self.X.shape}, {self.Y.shape}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("pair batch contains non-finite entries")

    @property
    def D(self):
        return self.X.shape[0]

    def __len__(self):
        return self.X.shape[1]

    def subset(self, idx):
        angles = None if self.angles is None else self.angles[idx]
        return PairBatch(self.X[:, idx], self.Y[:, idx], angles)


@dataclass
class LabeledImages:
    images: np.ndarray  # (N, side, side)
    labels: np.ndarray  # (N,)
    angles: np.ndarray = None

    @property
    def side(self):
        return self.images.shape[1]

    def columns(self):
        """Images as a D x N matrix."""
        return self.images.reshape(len(self.images), -1).T

    def __len__(self):
        return len(self.images)


# ---------------------------------------------------------------------------
# Image rotation
# ---------------------------------------------------------------------------


def _grid(side):
    c = (side - 1) / 2.0
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return c, (j - c).ravel(), (c - i).ravel()


def disk_mask(side):
    """Pixels whose centers lie in the inscribed disk."""
    _, px, py = _grid(side)
    return (px * px + py * py <= (side / 2.0) ** 2).reshape(side, side)


def _bilinear(imgs, si, sj):
    """Sample images (N, H, W) at fractional rows ``si`` and cols ``sj`` (N, P), zero padded."""
    N, H, W = imgs.shape
    padded = np.zeros((N, H + 2, W + 2))
    padded[:, 1:-1, 1:-1] = imgs
    i0 = np.floor(si)
    j0 = np.floor(sj)
    fi = si - i0
    fj = sj - j0
    i0 = np.clip(i0.astype(np.int64) + 1, 0, H + 1)
    j0 = np.clip(j0.astype(np.int64) + 1, 0, W + 1)
    i1 = np.minimum(i0 + 1, H + 1)
    j1 = np.minimum(j0 + 1, W + 1)
    flat = padded.reshape(N, -1)
    stride = W + 2

    def at(a, b):
        return np.take_along_axis(flat, a * stride + b, axis=1)

    return ((1 - fi) * (1 - fj) * at(i0, j0) + (1 - fi) * fj * at(i0, j1)
            + fi * (1 - fj) * at(i1, j0) + fi * fj * at(i1, j1))


def rotate_image(img, angle):
    """Rotate square image(s) counterclockwise about the center.

    Bilinear interpolation; output pixels outside the inscribed disk are set
    to zero.  ``img`` is (side, side) or (N, side, side) with ``angle`` a
    scalar or an array of N angles.
    """
    img = np.asarray(img, dtype=float)
    single = img.ndim == 2
    imgs = img[None] if single else img
    if imgs.ndim != 3 or imgs.shape[1] != imgs.shape[2]:
        raise ValueError(f"rotate_image needs square images, got shape {img.shape}")
    side = imgs.shape[1]
    angle = np.broadcast_to(np.asarray(angle, dtype=float), (imgs.shape[0],))
    c, px, py = _grid(side)
    cos_a = np.cos(angle)[:, None]
    sin_a = np.sin(angle)[:, None]
    sx = cos_a * px + sin_a * py
    sy = -sin_a * px + cos_a * py
    out = _bilinear(imgs, c - sy, sx + c)
    out *= disk_mask(side).ravel()
    out = out.reshape(imgs.shape)
    return out[0] if single else out


def rotate_columns(X, angle):
    """Rotate vectorized square images stored in the columns of ``X``."""
    X = np.asarray(X, dtype=float)
    side = int(round(np.sqrt(X.shape[0])))
    if side * side != X.shape[0]:
        raise ValueError(f"column length {X.shape[0]} is not a square image")
    imgs = X.T.reshape(-1, side, side)
    return rotate_image(imgs, angle).reshape(X.shape[1], -1).T


def tangent_vector(img, delta=TANGENT_DELTA):
    """Central-difference derivative of the rotated image at angle zero."""
    return (rotate_image(img, delta) - rotate_image(img, -delta)) / (2.0 * delta)


def resize_bilinear(imgs, side):
    """Bilinear resampling of (N, H, H) images to (N, side, side), pixel centers aligned."""
    imgs = np.asarray(imgs, dtype=float)
    N, H, _ = imgs.shape
    coords = (np.arange(side) + 0.5) * (H / side) - 0.5
    si, sj = np.meshgrid(coords, coords, indexing="ij")
    si = np.broadcast_to(si.ravel(), (N, side * side))
    sj = np.broadcast_to(sj.ravel(), (N, side * side))
    return _bilinear(imgs, si, sj).reshape(N, side, side)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


_ROTATE_CHUNK = 4096


def _item_rng(seed, index):
    return np.random.default_rng([seed, index])


def gen_patch_pairs(seed, n, side):
    """Standard-normal patches paired with copies rotated by uniform angles.

    Item ``i`` draws from its own stream keyed by ``(seed, i)``, so any
    subset or partition of the items is reproducible on its own.
    """
    if side < 2:
        raise ValueError("side must be at least 2")
    D = side * side
    X = np.empty((D, n))
    angles = np.empty(n)
    for i in range(n):
        rng = _item_rng(seed, i)
        X[:, i] = rng.standard_normal(D)
        angles[i] = rng.uniform(0.0, TWO_PI)
    Y = np.empty_like(X)
    # chunked to bound the interpolation temporaries
    for start in range(0, n, _ROTATE_CHUNK):
        sl = slice(start, start + _ROTATE_CHUNK)
        Y[:, sl] = rotate_columns(X[:, sl], angles[sl])
    return PairBatch(X, Y, angles)


def build_rotated_mnist(images, labels, seed, side=16):
    """Rotate each digit by its own uniform angle, then downscale to ``side``."""
    images = np.asarray(images, dtype=float)
    angles = np.array([_item_rng(seed, i).uniform(0.0, TWO_PI) for i in range(len(images))])
    small = np.empty((len(images), side, side))
    for start in range(0, len(images), _ROTATE_CHUNK):
        sl = slice(start, start + _ROTATE_CHUNK)
        small[sl] = resize_bilinear(rotate_image(images[sl], angles[sl]), side)
    small = np.clip(small, 0.0, 1.0)
    return LabeledImages(small, np.asarray(labels, dtype=np.int64), angles)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_idx(path):
    """Read an MNIST IDX file.

    Image files (magic 0x00000803) come back as float arrays (N, rows, cols)
    scaled to [0, 1]; label files (magic 0x00000801) as int64 arrays.
    """
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES:
        ndim = 3
    elif magic == IDX_LABELS:
        ndim = 1
    else:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{IDX_IMAGES:08x} or 0x{IDX_LABELS:08x}"
        )
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated payload, expected {size} bytes, found {len(raw) - header}")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)
    if magic == IDX_IMAGES:
        return data.astype(float) / 255.0
    return data.astype(np.int64)


def write_idx(path, array):
    """Write uint8 images (N, rows, cols) or labels (N,) as an IDX file."""
    array = np.asarray(array)
    if array.ndim == 3:
        magic = IDX_IMAGES
    elif array.ndim == 1:
        magic = IDX_LABELS
    else:
        raise ValueError("IDX writer supports (N, rows, cols) images or (N,) labels")
    payload = struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.astype(np.uint8).tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(payload)


# ---------------------------------------------------------------------------
# Model and dataset files
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"TSA1"
DATASET_MAGIC = b"TSAD"
FORMAT_VERSION = 1


@dataclass
class TSAModel:
    basis: ToralBasis
    torus_prior: np.ndarray = None  # (J, 2) von Mises natural parameters
    coupled_prior: GeneralizedVonMises = None


def _with_crc(payload):
    return payload + struct.pack("<I", zlib.crc32(payload))


def _check_crc(raw, path):
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short")
    payload, stored = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    actual = zlib.crc32(payload)
    if actual != stored:
        raise ChecksumError(f"{path}: checksum mismatch (stored {stored:08x}, computed {actual:08x})")
    return payload


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError(f"{self.path}: truncated file")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def array(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.buf):
            raise FormatError(f"{self.path}: truncated file")
        out = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return out


def model_to_bytes(model):
    b = model.basis
    parts = [
        MODEL_MAGIC,
        struct.pack("<HIId", FORMAT_VERSION, b.D, b.J, b.sigma),
        b.W.astype("<f8").tobytes(order="C"),
        b.omega.astype("<i4").tobytes(),
    ]
    if model.torus_prior is None:
        parts.append(struct.pack("<I", 0))
    else:
        tp = np.asarray(model.torus_prior, dtype="<f8").reshape(b.J, 2)
        parts += [struct.pack("<I", b.J), tp.tobytes()]
    if model.coupled_prior is None:
        parts.append(struct.pack("<I", 0))
    else:
        cp = model.coupled_prior.eta_plus.astype("<f8")
        parts += [struct.pack("<I", cp.shape[0]), cp.tobytes()]
    return _with_crc(b"".join(parts))


def model_from_bytes(raw, path="<bytes>"):
    payload = _check_crc(raw, path)
    r = _Reader(payload, path)
    (magic,) = r.take("4s")
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad model magic {magic!r}, expected {MODEL_MAGIC!r}")
    version, D, J, sigma = r.take("<HIId")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}, expected {FORMAT_VERSION}")
    W = r.array("<f8", D * 2 * J).reshape(D, 2 * J)
    omega = r.array("<i4", J).astype(np.int64)
    (n_torus,) = r.take("<I")
    torus = r.array("<f8", 2 * n_torus).reshape(n_torus, 2) if n_torus else None
    (K,) = r.take("<I")
    coupled = GeneralizedVonMises(r.array("<f8", 2 * K).reshape(K, 2)) if K else None
    if r.pos != len(payload):
        raise FormatError(f"{path}: {len(payload) - r.pos} unexpected trailing bytes")
    return TSAModel(ToralBasis(W, omega, sigma), torus, coupled)


def save_model(model, path):
    if isinstance(model, ToralBasis):
        model = TSAModel(model)
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes(), path)


def save_dataset(data, path):
    if isinstance(data, PairBatch):
        D, N = data.X.shape
        angles = np.full(N, np.nan) if data.angles is None else data.angles
        body = [data.X.T.astype("<f8").tobytes(), data.Y.T.astype("<f8").tobytes(),
                np.asarray(angles, "<f8").tobytes()]
        kind = 0
    elif isinstance(data, LabeledImages):
        N = len(data)
        D = data.side * data.side
        body = [data.images.reshape(N, D).astype("<f8").tobytes(),
                np.asarray(data.labels, "<i4").tobytes()]
        kind = 1
    else:
        raise TypeError(f"cannot save {type(data).__name__} as a dataset")
    head = DATASET_MAGIC + struct.pack("<HHII", FORMAT_VERSION, kind, N, D)
    Path(path).write_bytes(_with_crc(head + b"".join(body)))


def load_dataset(path):
    payload = _check_crc(Path(path).read_bytes(), path)
    r = _Reader(payload, path)
    (magic,) = r.take("4s")
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad dataset magic {magic!r}, expected {DATASET_MAGIC!r}")
    version, kind, N, D = r.take("<HHII")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if kind == 0:
        X = r.array("<f8", N * D).reshape(N, D).T
        Y = r.array("<f8", N * D).reshape(N, D).T
        angles = r.array("<f8", N)
        return PairBatch(X, Y, None if np.all(np.isnan(angles)) else angles)
    if kind == 1:
        side = int(round(np.sqrt(D)))
        images = r.array("<f8", N * D).reshape(N, side, side)
        labels = r.array("<i4", N).astype(np.int64)
        return LabeledImages(images, labels)
    raise FormatError(f"{path}: unknown dataset kind {kind}")
