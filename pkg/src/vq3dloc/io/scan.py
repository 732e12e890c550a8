"""Scan vertices from polygon-format (PLY) or plain XYZ text files.

Only vertex positions are read; faces and other elements are skipped.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import EmptyScan, ParseError
from ..registration import ScanGeometry

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}  # fmt: skip


def _header(data: bytes, path: str):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')", path)
    nl = data.find(b"\n", end)
    if nl < 0:
        raise ParseError("header not terminated by a newline", path)
    try:
        head = data[:end].decode("ascii")
    except UnicodeDecodeError:
        raise ParseError("header is not ASCII", path) from None
    fmt = None
    elements: list[dict] = []
    for ln, line in enumerate(head.splitlines(), start=1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"unsupported format line {line!r}", path, ln)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"bad element line {line!r}", path, ln)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count {tok[2]!r}", path, ln) from None
            if count < 0:
                raise ParseError("negative element count", path, ln)
            elements.append({"name": tok[1], "count": count, "props": []})
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", path, ln)
            if len(tok) == 5 and tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise ParseError(f"unknown list type in {line!r}", path, ln)
                elements[-1]["props"].append((tok[4], "list", tok[2], tok[3]))
            elif len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1]["props"].append((tok[2], tok[1]))
            else:
                raise ParseError(f"bad property line {line!r}", path, ln)
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", path, ln)
    if fmt is None:
        raise ParseError("missing format line", path)
    return fmt, elements, nl + 1


def _vertex_columns(el: dict, path: str) -> list[int]:
    names = [p[0] for p in el["props"]]
    try:
        return [names.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise ParseError("vertex element lacks x/y/z properties", path) from None


def _read_ascii(body: bytes, elements: list[dict], path: str, line0: int) -> np.ndarray:
    try:
        lines = body.decode("ascii").splitlines()
    except UnicodeDecodeError:
        raise ParseError("ASCII body holds non-ASCII bytes", path) from None
    pos = 0
    for el in elements:
        if el["name"] != "vertex":
            pos += el["count"]
            continue
        cols = _vertex_columns(el, path)
        if any(p[1] == "list" for p in el["props"]):
            raise ParseError("list properties on vertices are not supported", path)
        if pos + el["count"] > len(lines):
            raise ParseError("file ends before all vertices were read", path)
        out = np.empty((el["count"], 3))
        for i in range(el["count"]):
            tok = lines[pos + i].split()
            if len(tok) != len(el["props"]):
                raise ParseError(
                    f"expected {len(el['props'])} values, got {len(tok)}", path, line0 + pos + i
                )
            try:
                out[i] = [float(tok[c]) for c in cols]
            except ValueError:
                raise ParseError("non-numeric vertex value", path, line0 + pos + i) from None
        return out
    raise ParseError("no vertex element", path)


def _read_binary(body: bytes, elements: list[dict], path: str, endian: str) -> np.ndarray:
    offset = 0
    for el in elements:
        has_list = any(p[1] == "list" for p in el["props"])
        if el["name"] == "vertex":
            if has_list:
                raise ParseError("list properties on vertices are not supported", path)
            dtype = np.dtype([(p[0], endian + _PLY_TYPES[p[1]]) for p in el["props"]])
            need = dtype.itemsize * el["count"]
            if offset + need > len(body):
                raise ParseError("file ends before all vertices were read", path)
            _vertex_columns(el, path)
            arr = np.frombuffer(body, dtype=dtype, count=el["count"], offset=offset)
            return np.column_stack([arr["x"], arr["y"], arr["z"]]).astype(np.float64)
        if not el["props"]:
            continue
        if not has_list:
            dtype = np.dtype([(p[0], endian + _PLY_TYPES[p[1]]) for p in el["props"]])
            offset += dtype.itemsize * el["count"]
            continue
        # Elements with list properties must be walked row by row.
        for _ in range(el["count"]):
            for p in el["props"]:
                if p[1] == "list":
                    cdt = np.dtype(endian + _PLY_TYPES[p[2]])
                    if offset + cdt.itemsize > len(body):
                        raise ParseError("truncated list property", path)
                    n = int(np.frombuffer(body, cdt, 1, offset)[0])
                    if n < 0:
                        raise ParseError("negative list length", path)
                    offset += cdt.itemsize + n * np.dtype(_PLY_TYPES[p[3]]).itemsize
                else:
                    offset += np.dtype(_PLY_TYPES[p[1]]).itemsize
            if offset > len(body):
                raise ParseError("truncated element data", path)
    raise ParseError("no vertex element", path)


def read_ply(path: str | Path) -> np.ndarray:
    p = str(path)
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc}", p) from None
    fmt, elements, start = _header(data, p)
    body = data[start:]
    try:
        if fmt == "ascii":
            header_lines = data[:start].count(b"\n")
            return _read_ascii(body, elements, p, header_lines + 1)
        return _read_binary(body, elements, p, "<" if fmt == "binary_little_endian" else ">")
    except (ValueError, TypeError, OverflowError) as exc:
        # e.g. duplicate property names rejected by numpy's structured dtype
        raise ParseError(f"malformed PLY body: {exc}", p) from None


def read_xyz(path: str | Path) -> np.ndarray:
    p = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ParseError("not UTF-8 text", p) from None
    except OSError as exc:
        raise ParseError(f"cannot read: {exc}", p) from None
    rows = []
    for ln, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        tok = s.replace(",", " ").split()
        if len(tok) < 3:
            raise ParseError(f"expected at least 3 values, got {len(tok)}", p, ln)
        try:
            rows.append([float(t) for t in tok[:3]])
        except ValueError:
            raise ParseError("non-numeric coordinate", p, ln) from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def load_scan(path: str | Path, scan_id: str | None = None) -> ScanGeometry:
    """Load scan vertices; the format is chosen by the ``ply`` magic bytes.

    Raises:
        ParseError: malformed file.
        EmptyScan: no vertices, or only non-finite ones.
    """
    path = Path(path)
    try:
        with path.open("rb") as fh:
            magic = fh.read(3)
    except OSError as exc:
        raise ParseError(f"cannot read: {exc}", str(path)) from None
    verts = read_ply(path) if magic == b"ply" else read_xyz(path)
    if len(verts) == 0:
        raise EmptyScan("scan has no vertices", str(path))
    if not np.all(np.isfinite(verts)):
        raise ParseError("non-finite vertex coordinates", str(path))
    return ScanGeometry(scan_id or path.stem, verts, require_volume=False)


def write_ply(scan: ScanGeometry, path: str | Path, binary: bool = True) -> None:
    """Vertex-only PLY with double-precision coordinates."""
    v = np.ascontiguousarray(scan.vertices, dtype="<f8")
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\ncomment scan {scan.scan_id}\n"
        f"element vertex {len(v)}\nproperty double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    )
    with Path(path).open("wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(v.tobytes())
        else:
            fh.write("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in v.tolist()).encode("ascii"))


def write_xyz(scan: ScanGeometry, path: str | Path) -> None:
    Path(path).write_text(
        "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in scan.vertices.tolist()), encoding="utf-8"
    )
