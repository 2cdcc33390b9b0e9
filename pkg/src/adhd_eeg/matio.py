"""Reader and writer for the numeric subset of MAT-File Level 5.

Only real, non-sparse numeric 2-D (or N-D) arrays are supported. Values are
widened to float64 at the API boundary and kept flat in column-major order,
exactly as they are stored on disk.

>>> m = MatMatrix.from_array("a", np.arange(6.0).reshape(2, 3))
>>> parse_mat(write_mat([m])).matrices[0].dims
(2, 3)
"""
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

__all__ = [
    "MatError", "BadMagic", "UnsupportedElement", "Truncated", "ChecksumOrInflate",
    "NameTooLong", "EmptyDims", "NotFound", "DuplicateName",
    "MatMatrix", "MatFile", "parse_mat", "write_mat", "get_matrix",
    "read_mat", "save_mat",
]


class MatError(DataError):
    pass


class BadMagic(MatError):
    pass


class UnsupportedElement(MatError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class Truncated(MatError):
    pass


class ChecksumOrInflate(MatError):
    pass


class NameTooLong(MatError):
    pass


class EmptyDims(MatError):
    pass


class NotFound(MatError, KeyError):
    pass


class DuplicateName(MatError):
    pass


# data element types
miINT8, miUINT8, miINT16, miUINT16, miINT32, miUINT32 = 1, 2, 3, 4, 5, 6
miSINGLE, miDOUBLE, miINT64, miUINT64 = 7, 9, 12, 13
miMATRIX, miCOMPRESSED = 14, 15

_MI_DTYPES = {
    miINT8: "i1", miUINT8: "u1", miINT16: "i2", miUINT16: "u2",
    miINT32: "i4", miUINT32: "u4", miSINGLE: "f4", miDOUBLE: "f8",
    miINT64: "i8", miUINT64: "u8",
}

# array classes; element_class name -> (mx class id, storage type)
_CLASSES = {
    "f64": (6, miDOUBLE), "f32": (7, miSINGLE),
    "i8": (8, miINT8), "u8": (9, miUINT8),
    "i16": (10, miINT16), "u16": (11, miUINT16),
    "i32": (12, miINT32), "u32": (13, miUINT32),
}
_CLASS_BY_ID = {cid: name for name, (cid, _) in _CLASSES.items()}
_UNSUPPORTED_CLASSES = {
    1: "cell", 2: "struct", 3: "object", 4: "char", 5: "sparse",
    14: "int64", 15: "uint64", 16: "function handle", 17: "opaque",
}
_FLAG_COMPLEX = 0x0800
_FLAG_LOGICAL = 0x0200

_HEADER_LEN = 128


@dataclass
class MatMatrix:
    """One named numeric array.

    ``values`` is the flat float64 buffer in column-major order, so element
    ``(r, c)`` of a ``dims=(R, C)`` matrix is ``values[c * R + r]``.
    """

    name: str
    element_class: str
    dims: tuple
    values: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.element_class not in _CLASSES:
            raise ValueError(f"unknown element class {self.element_class!r}")

    @classmethod
    def from_array(cls, name, array, element_class=None):
        array = np.asarray(array)
        if array.ndim < 2:
            array = array.reshape(1, -1) if array.ndim == 1 else array.reshape(1, 1)
        if element_class is None:
            element_class = {
                "float64": "f64", "float32": "f32", "int8": "i8", "uint8": "u8",
                "int16": "i16", "uint16": "u16", "int32": "i32", "uint32": "u32",
            }.get(array.dtype.name, "f64")
        return cls(name, element_class, array.shape, array.ravel(order="F"))

    def to_array(self):
        return self.values.reshape(self.dims, order="F")


@dataclass
class MatFile:
    description_text: str = "MATLAB 5.0 MAT-file"
    version: int = 0x0100
    endianness: str = "little"
    matrices: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def names(self):
        return [m.name for m in self.matrices]


class _Reader:
    def __init__(self, buf, endian, base_offset=0):
        self.buf = buf
        self.e = "<" if endian == "little" else ">"
        self.base = base_offset

    def tag(self, pos, end):
        """Return (type, nbytes, data_start, next_pos) for the element at pos."""
        if pos + 8 > end:
            raise Truncated(f"data element tag at offset {self.base + pos} runs past end of buffer")
        first, second = struct.unpack_from(self.e + "II", self.buf, pos)
        if first >> 16:
            # small data element: size and type packed into the first word
            mtype, nbytes = first & 0xFFFF, first >> 16
            if nbytes > 4:
                raise MatError(f"small data element at offset {self.base + pos} claims {nbytes} bytes")
            return mtype, nbytes, pos + 4, pos + 8
        mtype, nbytes = first, second
        start = pos + 8
        if start + nbytes > end:
            raise Truncated(
                f"data element at offset {self.base + pos} declares {nbytes} bytes, "
                f"only {end - start} available")
        if mtype == miCOMPRESSED:
            return mtype, nbytes, start, start + nbytes
        padded = start + nbytes + (-nbytes % 8)
        return mtype, nbytes, start, min(padded, end)

    def numeric(self, pos, end):
        mtype, nbytes, start, nxt = self.tag(pos, end)
        if mtype not in _MI_DTYPES:
            raise MatError(f"expected numeric data at offset {self.base + pos}, got type {mtype}")
        dtype = np.dtype(_MI_DTYPES[mtype]).newbyteorder(self.e)
        if nbytes % dtype.itemsize:
            raise MatError(f"data length {nbytes} at offset {self.base + pos} "
                           f"is not a multiple of {dtype.itemsize}")
        arr = np.frombuffer(self.buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=start)
        return mtype, arr, nxt


def _parse_matrix(reader, start, end, offset_label):
    flags_arr_type, flags, pos = reader.numeric(start, end)
    if flags_arr_type != miUINT32 or len(flags) < 1:
        raise MatError(f"bad array flags in matrix at offset {offset_label}")
    class_id = int(flags[0]) & 0xFF
    if class_id in _UNSUPPORTED_CLASSES:
        raise UnsupportedElement(
            f"{_UNSUPPORTED_CLASSES[class_id]} array at offset {offset_label} is not supported",
            offset=offset_label)
    if class_id not in _CLASS_BY_ID:
        raise MatError(f"unknown array class {class_id} at offset {offset_label}")
    if int(flags[0]) & _FLAG_COMPLEX:
        raise UnsupportedElement(f"complex array at offset {offset_label} is not supported",
                                 offset=offset_label)
    _, dims, pos = reader.numeric(pos, end)
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 0 for d in dims):
        raise MatError(f"invalid dimensions {dims} at offset {offset_label}")
    name_type, name_bytes, pos = reader.numeric(pos, end)
    if name_type not in (miINT8, miUINT8):
        raise MatError(f"array name at offset {offset_label} has type {name_type}")
    try:
        name = name_bytes.tobytes().decode("ascii")
    except UnicodeDecodeError:
        raise MatError(f"non-ASCII array name at offset {offset_label}") from None
    _, real, pos = reader.numeric(pos, end)
    count = int(np.prod(dims, dtype=np.int64))
    if real.size != count:
        raise MatError(f"matrix {name!r} has {real.size} values but dims {dims} need {count}")
    return MatMatrix(name, _CLASS_BY_ID[class_id], dims, real.astype(np.float64))


def parse_mat(data, skip_unsupported=False):
    """Parse a MAT v5 byte buffer into a :class:`MatFile`.

    Unsupported arrays (cell, struct, char, sparse, complex, ...) raise
    :class:`UnsupportedElement` unless ``skip_unsupported`` is set, in which
    case their byte offsets are collected in ``MatFile.skipped``.
    """
    buf = bytes(data)
    if len(buf) < _HEADER_LEN:
        raise Truncated(f"MAT header needs {_HEADER_LEN} bytes, got {len(buf)}")
    indicator = buf[126:128]
    if indicator == b"IM":
        endian = "little"
    elif indicator == b"MI":
        endian = "big"
    else:
        raise BadMagic(f"endian indicator {indicator!r} is neither 'IM' nor 'MI'")
    (version,) = struct.unpack_from("<H" if endian == "little" else ">H", buf, 124)
    if version != 0x0100:
        raise BadMagic(f"unsupported MAT version 0x{version:04x}")
    text = buf[:116].rstrip(b" \x00").decode("latin-1")

    out = MatFile(description_text=text, version=version, endianness=endian)
    reader = _Reader(buf, endian)
    pos, end = _HEADER_LEN, len(buf)
    while pos < end:
        if pos % 8 and not any(buf[pos:pos + min(-pos % 8, 4)]):
            # some writers pad compressed elements to 8 bytes, most do not
            if pos + 4 > end or struct.unpack_from(reader.e + "I", buf, pos)[0] == 0:
                pos = min(pos + (-pos % 8), end)
                continue
        mtype, nbytes, start, nxt = reader.tag(pos, end)
        try:
            if mtype == miCOMPRESSED:
                try:
                    inner = zlib.decompress(buf[start:start + nbytes])
                except zlib.error as exc:
                    raise ChecksumOrInflate(f"compressed element at offset {pos}: {exc}") from None
                sub = _Reader(inner, endian, base_offset=0)
                itype, inbytes, istart, _ = sub.tag(0, len(inner))
                if itype != miMATRIX:
                    raise UnsupportedElement(f"compressed element at offset {pos} holds type {itype}",
                                             offset=pos)
                out.matrices.append(_parse_matrix(sub, istart, istart + inbytes, pos))
            elif mtype == miMATRIX:
                out.matrices.append(_parse_matrix(reader, start, start + nbytes, pos))
            else:
                raise UnsupportedElement(f"top-level element of type {mtype} at offset {pos}", offset=pos)
        except UnsupportedElement as exc:
            if not skip_unsupported:
                raise
            out.skipped.append((pos, str(exc)))
        pos = nxt
    return out


def _element(mtype, payload, e):
    nbytes = len(payload)
    if 0 < nbytes <= 4:
        word = (nbytes << 16) | mtype
        return struct.pack(e + "I", word) + payload + b"\x00" * (4 - nbytes)
    return struct.pack(e + "II", mtype, nbytes) + payload + b"\x00" * (-nbytes % 8)


def _validate(m):
    if not m.name:
        raise MatError("matrix name must be non-empty")
    if len(m.name) > 63:
        raise NameTooLong(f"matrix name {m.name[:20]!r}... has {len(m.name)} chars (max 63)")
    try:
        m.name.encode("ascii")
    except UnicodeEncodeError:
        raise MatError(f"matrix name {m.name!r} is not ASCII") from None
    if len(m.dims) == 0 or min(m.dims) < 1:
        raise EmptyDims(f"matrix {m.name!r} has empty dimensions {m.dims}")
    if int(np.prod(m.dims)) != m.values.size:
        raise MatError(f"matrix {m.name!r}: dims {m.dims} do not match {m.values.size} values")


def _encode_matrix(m, e):
    _validate(m)
    class_id, storage = _CLASSES[m.element_class]
    dims = m.dims if len(m.dims) >= 2 else (1,) + m.dims
    dtype = np.dtype(_MI_DTYPES[storage]).newbyteorder(e)
    stored = m.values.astype(dtype)
    if not np.array_equal(stored.astype(np.float64), m.values, equal_nan=True):
        raise MatError(f"matrix {m.name!r} has values not representable as {m.element_class}")
    body = (
        _element(miUINT32, struct.pack(e + "II", class_id, 0), e)
        + _element(miINT32, struct.pack(e + f"{len(dims)}i", *dims), e)
        + _element(miINT8, m.name.encode("ascii"), e)
        + _element(storage, stored.tobytes(), e)
    )
    return struct.pack(e + "II", miMATRIX, len(body)) + body


def write_mat(matrices, compress=False, endianness="little",
              description="MATLAB 5.0 MAT-file, written by adhd_eeg"):
    """Serialize matrices to a MAT v5 byte string."""
    e = "<" if endianness == "little" else ">"
    text = description.encode("ascii")[:116].ljust(116, b" ")
    header = text + b"\x00" * 8 + struct.pack(e + "H", 0x0100) + (b"IM" if e == "<" else b"MI")
    parts = [header]
    for m in matrices:
        element = _encode_matrix(m, e)
        if compress:
            payload = zlib.compress(element)
            parts.append(struct.pack(e + "II", miCOMPRESSED, len(payload)) + payload)
        else:
            parts.append(element)
    return b"".join(parts)


def get_matrix(matfile, name):
    hits = [m for m in matfile.matrices if m.name == name]
    if not hits:
        raise NotFound(f"no matrix named {name!r}; available: {matfile.names()}")
    if len(hits) > 1:
        raise DuplicateName(f"{len(hits)} matrices named {name!r}")
    return hits[0]


def read_mat(path, skip_unsupported=False):
    with open(path, "rb") as fh:
        return parse_mat(fh.read(), skip_unsupported=skip_unsupported)


def save_mat(path, matrices, compress=False):
    with open(path, "wb") as fh:
        fh.write(write_mat(matrices, compress=compress))
