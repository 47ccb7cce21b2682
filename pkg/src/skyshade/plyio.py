"""Minimal PLY reader/writer for the vertex element.

Supports ``ascii 1.0`` and ``binary_little_endian 1.0`` with scalar
properties. List properties and other elements are skipped when they come
after the vertex element and rejected when they precede it in a binary file.
"""

from __future__ import annotations

import numpy as np

from .errors import SkyshadeError


class CloudFormatError(SkyshadeError):
    """Base class for point-cloud file errors."""


class UnsupportedFormat(CloudFormatError):
    pass


class CorruptHeader(CloudFormatError):
    pass


class TruncatedPayload(CloudFormatError):
    pass


PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_NUMPY_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
                 "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


def _parse_header(fh):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise CorruptHeader("missing 'ply' magic")
    fmt = None
    elements = []  # [name, count, [(prop, dtype)], has_list]
    comments = []
    while True:
        line = fh.readline()
        if not line:
            raise CorruptHeader("missing end_header")
        try:
            words = line.decode("ascii").split()
        except UnicodeDecodeError as exc:
            raise CorruptHeader("non-ascii header") from exc
        if not words:
            continue
        kind = words[0]
        if kind == "end_header":
            break
        if kind == "format":
            if len(words) != 3:
                raise CorruptHeader(f"bad format line {line!r}")
            fmt = words[1]
        elif kind in ("comment", "obj_info"):
            comments.append(line.decode("ascii").rstrip("\r\n")[len(kind) + 1:])
        elif kind == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise CorruptHeader(f"bad element line {line!r}")
            elements.append([words[1], int(words[2]), [], False])
        elif kind == "property":
            if not elements:
                raise CorruptHeader("property before element")
            if len(words) == 5 and words[1] == "list":
                elements[-1][3] = True
                elements[-1][2].append((words[4], None))
            elif len(words) == 3 and words[1] in PLY_TYPES:
                elements[-1][2].append((words[2], PLY_TYPES[words[1]]))
            else:
                raise CorruptHeader(f"bad property line {line!r}")
        else:
            raise CorruptHeader(f"unknown header keyword {kind!r}")
    if fmt is None:
        raise CorruptHeader("missing format line")
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormat(f"PLY format {fmt!r}")
    return fmt, elements, comments


def read_ply(path) -> tuple[np.ndarray, list[str]]:
    """Vertex element as a structured array, plus header comments."""
    with open(path, "rb") as fh:
        fmt, elements, comments = _parse_header(fh)
        names = [e[0] for e in elements]
        if "vertex" not in names:
            raise CorruptHeader("no vertex element")
        if fmt == "ascii":
            return _read_ascii(fh, elements), comments
        for name, count, props, has_list in elements:
            dtype = None if has_list else np.dtype([(p, "<" + t) for p, t in props])
            if name == "vertex":
                if has_list:
                    raise UnsupportedFormat("list property on vertex element")
                payload = fh.read(count * dtype.itemsize)
                if len(payload) < count * dtype.itemsize:
                    raise TruncatedPayload(
                        f"expected {count} vertices, payload holds {len(payload) // max(dtype.itemsize, 1)}")
                data = np.frombuffer(payload, dtype=dtype, count=count)
                return data.astype(dtype.newbyteorder("="), copy=True), comments
            if has_list:
                raise UnsupportedFormat(f"list element {name!r} before vertex")
            skipped = fh.read(count * dtype.itemsize)
            if len(skipped) < count * dtype.itemsize:
                raise TruncatedPayload(f"element {name!r} truncated")
    raise CorruptHeader("no vertex element")  # pragma: no cover


def _read_ascii(fh, elements) -> np.ndarray:
    for name, count, props, has_list in elements:
        if name != "vertex":
            for _ in range(count):
                if not fh.readline():
                    raise TruncatedPayload(f"element {name!r} truncated")
            continue
        if has_list:
            raise UnsupportedFormat("list property on vertex element")
        dtype = np.dtype([(p, t) for p, t in props])
        out = np.empty(count, dtype=dtype)
        for i in range(count):
            line = fh.readline()
            if not line:
                raise TruncatedPayload(f"expected {count} vertices, got {i}")
            words = line.split()
            if len(words) < len(props):
                raise TruncatedPayload(f"vertex {i} has {len(words)} values, expected {len(props)}")
            try:
                out[i] = tuple(
                    float(w) if np.dtype(t).kind == "f" else int(w)
                    for w, (_, t) in zip(words, props))
            except ValueError as exc:
                raise CorruptHeader(f"vertex {i}: {exc}") from exc
        return out
    raise CorruptHeader("no vertex element")  # pragma: no cover


def write_ply(path, data: np.ndarray, binary=True, comments=()):
    """Write a structured array as the vertex element."""
    dtype = data.dtype
    lines = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {len(data)}")
    for name in dtype.names:
        code = dtype[name].str[1:]
        if code not in _NUMPY_TO_PLY:
            raise UnsupportedFormat(f"cannot store dtype {dtype[name]} in PLY")
        lines.append(f"property {_NUMPY_TO_PLY[code]} {name}")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            le = np.dtype([(n, "<" + dtype[n].str[1:]) for n in dtype.names])
            fh.write(data.astype(le).tobytes())
        else:
            for row in data:
                fh.write((" ".join(_ascii_value(v) for v in row) + "\n").encode("ascii"))


def _ascii_value(v) -> str:
    # numpy's str() is the shortest repr that round-trips at the scalar's precision
    if isinstance(v, np.floating):
        return str(v)
    return str(int(v))
