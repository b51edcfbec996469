"""Binary file formats: MLNT tensors, MLNW weight bundles, PPM (P6) images.

All integers are little-endian. Formats are versioned so fixtures stay
readable across revisions.
"""

import struct

import numpy as np

from .tensor_ops import check_tensor

TENSOR_MAGIC = b"MLNT"
WEIGHTS_MAGIC = b"MLNW"
FORMAT_VERSION = 1


class FileFormatError(ValueError):
    """Bad magic bytes or unsupported version."""


class TruncatedFileError(ValueError):
    """Stream ended before the declared payload was read."""


class WeightShapeError(ValueError):
    """Stored weight shapes disagree with the owning graph."""


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"truncated while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def write_tensor(path_or_file, tensor):
    """Write a (B,C,H,W) float32 tensor in the MLNT format."""
    tensor = check_tensor(tensor)
    data = np.ascontiguousarray(tensor, dtype=np.float32)
    header = TENSOR_MAGIC + struct.pack("<5I", FORMAT_VERSION, *data.shape)
    if hasattr(path_or_file, "write"):
        path_or_file.write(header)
        path_or_file.write(data.astype("<f4").tobytes())
    else:
        with open(path_or_file, "wb") as f:
            f.write(header)
            f.write(data.astype("<f4").tobytes())


def read_tensor(path_or_file):
    """Read an MLNT tensor; returns a float32 (B,C,H,W) array."""
    if hasattr(path_or_file, "read"):
        return _read_tensor_stream(path_or_file)
    with open(path_or_file, "rb") as f:
        return _read_tensor_stream(f)


def _read_tensor_stream(f):
    magic = _read_exact(f, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise FileFormatError(f"bad tensor magic {magic!r}")
    version, = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported tensor format version {version}")
    shape = struct.unpack("<4I", _read_exact(f, 16, "dims"))
    count = int(np.prod([max(d, 0) for d in shape], dtype=np.int64))
    payload = _read_exact(f, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def save_weights(path_or_file, store):
    """Write a {name: (weights, bias)} store in the MLNW format.

    Per layer: name (u16 length + UTF-8), weight rank u8, weight dims
    u32 each, then float32 payload of the weights followed by the bias
    (bias length equals the leading weight dim).
    """
    names = list(store)
    header = WEIGHTS_MAGIC + struct.pack("<2I", FORMAT_VERSION, len(names))

    def emit(f):
        f.write(header)
        for name in names:
            weights, bias = store[name]
            weights = np.ascontiguousarray(weights, dtype=np.float32)
            bias = np.ascontiguousarray(bias, dtype=np.float32)
            if bias.ndim != 1 or bias.shape[0] != weights.shape[0]:
                raise WeightShapeError(
                    f"layer {name!r}: bias shape {bias.shape} does not match "
                    f"leading weight dim {weights.shape[0]}")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", weights.ndim))
            f.write(struct.pack(f"<{weights.ndim}I", *weights.shape))
            f.write(weights.astype("<f4").tobytes())
            f.write(bias.astype("<f4").tobytes())

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "wb") as f:
            emit(f)


def load_weights(path_or_file):
    """Read an MLNW file; returns {name: (weights, bias)}."""
    if hasattr(path_or_file, "read"):
        return _load_weights_stream(path_or_file)
    with open(path_or_file, "rb") as f:
        return _load_weights_stream(f)


def _load_weights_stream(f):
    magic = _read_exact(f, 4, "magic")
    if magic != WEIGHTS_MAGIC:
        raise FileFormatError(f"bad weights magic {magic!r}")
    version, count = struct.unpack("<2I", _read_exact(f, 8, "header"))
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported weights format version {version}")
    store = {}
    for _ in range(count):
        nlen, = struct.unpack("<H", _read_exact(f, 2, "name length"))
        name = _read_exact(f, nlen, "name").decode("utf-8")
        rank, = struct.unpack("<B", _read_exact(f, 1, "rank"))
        dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
        wcount = int(np.prod(dims, dtype=np.int64)) if rank else 0
        weights = np.frombuffer(
            _read_exact(f, 4 * wcount, f"{name} weights"), dtype="<f4").reshape(dims)
        bias = np.frombuffer(
            _read_exact(f, 4 * dims[0], f"{name} bias"), dtype="<f4")
        store[name] = (weights.astype(np.float32), bias.astype(np.float32))
    return store


def write_ppm(path, image):
    """Write a (3,H,W) or (H,W,3) uint8 image as binary PPM (P6)."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 3 and image.shape[2] != 3:
        image = image.transpose(1, 2, 0)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FileFormatError(f"expected 3-channel image, got shape {image.shape}")
    image = np.clip(image, 0, 255).astype(np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_ppm(path):
    """Read a binary PPM (P6); returns a (H,W,3) uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise FileFormatError("not a P6 PPM file")
    # Header is three whitespace-separated fields after the magic,
    # with optional '#' comment lines.
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError("truncated PPM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FileFormatError(f"only maxval 255 supported, got {maxval}")
    payload = data[pos:pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise TruncatedFileError("truncated PPM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()
