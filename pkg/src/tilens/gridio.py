"""Reader and writer for the TIGRID1 binary grid format.

Layout (little-endian): 8-byte magic ``TIGRID1\\0``, three ``uint32`` dims,
three ``float64`` origin values, three ``float64`` spacings, then the
row-major ``float64`` payload.  Vector fields append a trailing component
axis to the payload; the component count is inferred from the payload size.
"""

import struct

import numpy as np

from .errors import ValidationError

MAGIC = b"TIGRID1\x00"
_HEADER = struct.Struct("<8s3I3d3d")


def write_tigrid(path, data, origin, spacing):
    """Write a scalar ``(n0, n1, n2)`` or vector ``(n0, n1, n2, c)`` array; scalar origin/spacing broadcast."""
    data = np.asarray(data, dtype="<f8")
    if data.ndim not in (3, 4):
        raise ValidationError("grid payload must be 3D or 3D plus a component axis")
    dims = data.shape[:3]
    origin = np.broadcast_to(np.asarray(origin, float), (3,))
    spacing = np.broadcast_to(np.asarray(spacing, float), (3,))
    header = _HEADER.pack(MAGIC, *map(int, dims), *map(float, origin), *map(float, spacing))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data).tobytes(order="C"))


def read_tigrid(path):
    """Return ``(data, origin, spacing)`` from a TIGRID1 file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated TIGRID1 header")
    magic, n0, n1, n2, o0, o1, o2, h0, h1, h2 = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    nnode = n0 * n1 * n2
    if nnode == 0 or payload.size % nnode:
        raise ValidationError(f"{path}: payload size {payload.size} incompatible with dims {(n0, n1, n2)}")
    ncomp = payload.size // nnode
    shape = (n0, n1, n2) if ncomp == 1 else (n0, n1, n2, ncomp)
    data = payload.reshape(shape).astype(float)
    spacing = np.array([h0, h1, h2])
    if np.any(spacing <= 0) or not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: non-positive spacing or non-finite samples")
    return data, np.array([o0, o1, o2]), spacing
