"""IDX datasets, model files and atomic output writes."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .tensor_nn import LayerSpec, Model

# IDX type codes
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}


class FormatError(ValueError):
    pass


@dataclass
class DatasetHandle:
    name: str
    split: str
    x: np.ndarray
    y: np.ndarray
    class_count: int = 10
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.normalization.get("kind") == "byte/255" and len(self.x):
            if self.x.min() < 0 or self.x.max() > 1:
                raise ValueError("image values must lie in [0, 1]")

    def __len__(self):
        return len(self.y)

    def subset(self, n: int | None) -> "DatasetHandle":
        if n is None or n >= len(self):
            return self
        return DatasetHandle(self.name, self.split, self.x[:n], self.y[:n],
                             self.class_count, dict(self.normalization))

    @property
    def pair(self):
        return self.x, self.y


# IDX -----------------------------------------------------------------------

def parse_idx(data: bytes) -> np.ndarray:
    """Decode raw IDX bytes into an array (values as stored, native byte order)."""
    if len(data) < 4:
        raise FormatError(f"truncated header at byte offset {len(data)}: need 4 magic bytes")
    if data[0] != 0 or data[1] != 0:
        raise FormatError(f"bad magic at byte offset 0: {data[:4].hex()}")
    code, ndim = data[2], data[3]
    if code not in _IDX_TYPES:
        raise FormatError(f"bad magic at byte offset 2: unknown type code 0x{code:02x}")
    if ndim == 0:
        raise FormatError("bad magic at byte offset 3: zero dimensions")
    hdr = 4 + 4 * ndim
    if len(data) < hdr:
        raise FormatError(f"truncated header at byte offset {len(data)}: "
                          f"need {hdr} bytes for {ndim} dimensions")
    dims = struct.unpack(f">{ndim}I", data[4:hdr])
    dt = _IDX_TYPES[code]
    need = hdr + int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(data) < need:
        raise FormatError(f"truncated data at byte offset {len(data)}: expected {need} bytes")
    if len(data) > need:
        raise FormatError(f"trailing bytes from offset {need} (file has {len(data)})")
    arr = np.frombuffer(data, dtype=dt, offset=hdr, count=int(np.prod(dims)))
    return arr.reshape(dims).astype(dt.newbyteorder("="))


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return parse_idx(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def encode_idx(arr) -> bytes:
    arr = np.asarray(arr)
    code = _IDX_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"dtype {arr.dtype} has no IDX type code")
    if arr.ndim == 0 or arr.ndim > 255:
        raise ValueError("IDX arrays need 1..255 dimensions")
    head = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + arr.astype(_IDX_TYPES[code]).tobytes()


def write_idx(path, arr):
    atomic_write_bytes(path, encode_idx(arr))


def load_idx(images_path, labels_path, name: str = "mnist", split: str = "train",
             class_count: int = 10) -> DatasetHandle:
    """Load an image (or feature-row) IDX file with its label file.

    Unsigned-byte images of shape (n, H, W) become (n, H, W, 1) floats in
    [0, 1] (byte / 255). Floating-point files are feature rows kept as-is.
    """
    raw = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: label file must be one-dimensional")
    if len(labels) != len(raw):
        raise FormatError(f"label count {len(labels)} does not match input count {len(raw)}")
    if raw.dtype == np.uint8:
        x = raw.astype(np.float64) / 255.0
        if x.ndim == 3:
            x = x[..., None]
        norm = {"kind": "byte/255"}
    else:
        x = raw.astype(np.float64)
        norm = {"kind": "none"}
    return DatasetHandle(name, split, x, labels.astype(np.int64), class_count, norm)


def save_feature_dataset(images_path, labels_path, x, labels):
    """Store float feature rows and integer labels as an IDX pair."""
    write_idx(images_path, np.asarray(x, dtype=np.float64))
    write_idx(labels_path, np.asarray(labels, dtype=np.uint8))


# surrogate digits ----------------------------------------------------------

def _digit_canvas(img8: np.ndarray) -> np.ndarray:
    """8x8 sklearn digit (0..16) -> 28x28 in [0,1] with a 20x20 centred body."""
    from scipy.ndimage import zoom

    big = zoom(img8 / 16.0, 2.5, order=1)
    big = np.clip(big, 0.0, 1.0)
    out = np.zeros((28, 28))
    out[4:24, 4:24] = big
    return out


def surrogate_digits(n_train: int = 10_000, n_test: int = 1_000, seed: int = 0):
    """MNIST-shaped digits built from the scikit-learn 8x8 digit set.

    Base images are upscaled to 28x28 and augmented with small random
    shifts (up to 2 px) and rotations (up to 15 degrees). Train and test
    draw from disjoint base images. Returns byte arrays
    ``(train_x, train_y, test_x, test_y)`` ready for :func:`write_idx`.
    """
    from sklearn.datasets import load_digits

    from .geometry import apply_rotation_translation

    digits = load_digits()
    base = np.stack([_digit_canvas(im) for im in digits.images])
    labels = digits.target.astype(np.uint8)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(base))
    cut = int(0.8 * len(base))

    def make(idx, n, sub_seed):
        r = np.random.default_rng([seed, sub_seed])
        pick = idx[np.arange(n) % len(idx)]
        imgs = np.empty((n, 28, 28))
        for i, j in enumerate(pick):
            if i < len(idx):
                imgs[i] = base[j]
                continue
            dx, dy = r.integers(-2, 3, size=2)
            ang = r.uniform(-15, 15)
            imgs[i] = apply_rotation_translation(base[j][..., None], int(dx), int(dy), ang)[..., 0]
        perm = r.permutation(n)
        xb = np.round(np.clip(imgs[perm], 0, 1) * 255).astype(np.uint8)
        return xb, labels[pick][perm]

    tx, ty = make(order[:cut], n_train, 1)
    vx, vy = make(order[cut:], n_test, 2)
    return tx, ty, vx, vy


IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def write_surrogate_mnist(out_dir, n_train: int = 10_000, n_test: int = 1_000, seed: int = 0):
    os.makedirs(out_dir, exist_ok=True)
    tx, ty, vx, vy = surrogate_digits(n_train, n_test, seed)
    for key, arr in zip(IDX_NAMES, (tx, ty, vx, vy)):
        write_idx(os.path.join(out_dir, IDX_NAMES[key]), arr)
    return {k: os.path.join(out_dir, v) for k, v in IDX_NAMES.items()}


# models --------------------------------------------------------------------

MODEL_MAGIC = b"MRMODEL1"


def model_bytes(model: Model) -> bytes:
    header = json.dumps({
        "input_shape": list(model.input_shape),
        "seed": model.seed,
        "layers": [s.to_dict() for s in model.layers],
        "shapes": [list(p.shape) for p in model.params],
    }, sort_keys=True).encode()
    body = MODEL_MAGIC + struct.pack("<I", len(header)) + header
    body += b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params)
    return body + hashlib.sha256(body).digest()


def model_from_bytes(data: bytes) -> Model:
    if len(data) < len(MODEL_MAGIC) + 4 + 32:
        raise FormatError("model file truncated")
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("model checksum mismatch")
    off = len(MODEL_MAGIC)
    (hlen,) = struct.unpack("<I", body[off:off + 4])
    off += 4
    header = json.loads(body[off:off + hlen])
    off += hlen
    params = []
    for shape in header["shapes"]:
        n = int(np.prod(shape, dtype=np.int64))
        if off + 8 * n > len(body):
            raise FormatError("model file truncated")
        params.append(np.frombuffer(body, dtype="<f8", count=n, offset=off)
                      .reshape(shape).astype(np.float64))
        off += 8 * n
    if off != len(body):
        raise FormatError("model file has trailing bytes")
    layers = [LayerSpec.from_dict(d) for d in header["layers"]]
    return Model(tuple(header["input_shape"]), layers, seed=header["seed"], params=params)


def serialize_model(model: Model, path):
    atomic_write_bytes(path, model_bytes(model))


def load_model(path) -> Model:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return model_from_bytes(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


# atomic writes -------------------------------------------------------------

def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
