"""Depth, sparse-depth and point-cloud file formats.

* PFM: little-endian float32 (scale header ``-1``), rows stored bottom-up,
  invalid pixels written as NaN.
* PGM16: binary P5, big-endian 16-bit; 0 marks invalid pixels and
  ``depth = value * scale + offset``.
* CSV: dense grid, ``nan`` for invalid pixels.

Every depth file gets a JSON sidecar ``<path>.json`` carrying the unit tag
(and, for PGM16, the scale and offset).  Parse failures raise
:class:`DepthFormatError` with the byte offset of the problem.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .camera import UNITS, DepthMap, PointCloud
from .completion import SparseDepth
from .errors import DataError, DepthFormatError, ParameterError

PathLike = Union[str, os.PathLike]
FORMATS = ("pfm", "pgm16", "csv")


def sidecar_path(path: PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def _write_sidecar(path: PathLike, meta: dict) -> None:
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def _read_sidecar(path: PathLike) -> dict:
    sc = sidecar_path(path)
    if not sc.exists():
        return {}
    try:
        meta = json.loads(sc.read_text())
    except json.JSONDecodeError as exc:
        raise DepthFormatError(f"malformed sidecar {sc.name}: {exc.msg}", exc.pos) from None
    if not isinstance(meta, dict):
        raise DepthFormatError(f"sidecar {sc.name} is not an object", 0)
    return meta


def infer_format(path: PathLike) -> str:
    ext = Path(path).suffix.lower().lstrip(".")
    if ext == "pfm":
        return "pfm"
    if ext in ("pgm", "pgm16"):
        return "pgm16"
    if ext == "csv":
        return "csv"
    raise ParameterError(f"cannot infer depth format from {Path(path).name!r}")


def _check_unit(meta_unit: Optional[str], expect: Optional[str], offset: int = 0) -> str:
    unit = meta_unit or "metric"
    if unit not in UNITS:
        raise DepthFormatError(f"unknown unit tag {unit!r}", offset)
    if expect is not None and unit != expect:
        raise DepthFormatError(f"unit mismatch: file holds {unit!r}, expected {expect!r}", offset)
    return unit


class _Header:
    """Whitespace-token reader over a bytes header that tracks offsets."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def token(self, what: str) -> tuple[bytes, int]:
        d = self.data
        while self.pos < len(d) and d[self.pos:self.pos + 1].isspace():
            self.pos += 1
        if self.pos < len(d) and d[self.pos:self.pos + 1] == b"#":
            while self.pos < len(d) and d[self.pos:self.pos + 1] not in (b"\n", b"\r"):
                self.pos += 1
            return self.token(what)
        start = self.pos
        while self.pos < len(d) and not d[self.pos:self.pos + 1].isspace():
            self.pos += 1
        if start == self.pos:
            raise DepthFormatError(f"missing {what}", start)
        return d[start:self.pos], start

    def integer(self, what: str) -> int:
        tok, at = self.token(what)
        try:
            v = int(tok)
        except ValueError:
            raise DepthFormatError(f"bad {what} {tok!r}", at) from None
        if v <= 0:
            raise DepthFormatError(f"{what} must be positive", at)
        return v

    def end_of_header(self) -> int:
        """Skip the single whitespace byte that ends a PNM/PFM header."""
        if self.pos >= len(self.data):
            raise DepthFormatError("header not terminated", self.pos)
        self.pos += 1
        return self.pos


def write_pfm(depth: DepthMap, path: PathLike) -> None:
    h, w = depth.shape
    vals = np.where(depth.mask, depth.values, np.nan).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(vals[::-1]).tobytes())
    _write_sidecar(path, {"format": "pfm", "unit": depth.unit})


def read_pfm(path: PathLike, expect_unit: Optional[str] = None) -> DepthMap:
    data = Path(path).read_bytes()
    hdr = _Header(data)
    magic, at = hdr.token("magic")
    if magic != b"Pf":
        raise DepthFormatError(f"not a single-channel PFM (magic {magic!r})", at)
    w = hdr.integer("width")
    h = hdr.integer("height")
    tok, at = hdr.token("scale")
    try:
        scale = float(tok)
    except ValueError:
        raise DepthFormatError(f"bad scale {tok!r}", at) from None
    if scale == 0 or not math.isfinite(scale):
        raise DepthFormatError("scale must be finite and nonzero", at)
    start = hdr.end_of_header()
    need = 4 * w * h
    if len(data) - start < need:
        raise DepthFormatError(f"truncated payload: need {need} bytes, have {len(data) - start}",
                               len(data))
    dtype = "<f4" if scale < 0 else ">f4"
    vals = np.frombuffer(data, dtype=dtype, count=w * h, offset=start).reshape(h, w)[::-1]
    vals = vals.astype(np.float64)
    unit = _check_unit(_read_sidecar(path).get("unit"), expect_unit)
    return DepthMap(vals, np.isfinite(vals), unit)


def quantize_pgm16(depth: DepthMap, scale: float, offset: float) -> np.ndarray:
    q = np.round((depth.values - offset) / scale)
    ok = depth.mask & (q >= 1) & (q <= 65535)
    n_bad = int((depth.mask & ~ok).sum())
    if n_bad:
        raise DataError(f"{n_bad} pixels fall outside the 16-bit range for scale {scale:g}, "
                        f"offset {offset:g}")
    return np.where(ok, q, 0).astype(">u2")


def write_pgm16(depth: DepthMap, path: PathLike, scale: float = 1e-3,
                offset: float = 0.0) -> None:
    if not scale > 0:
        raise ParameterError("PGM16 scale must be positive")
    q = quantize_pgm16(depth, scale, offset)
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())
    _write_sidecar(path, {"format": "pgm16", "unit": depth.unit, "scale": repr(float(scale)),
                          "offset": repr(float(offset))})


def read_pgm16(path: PathLike, expect_unit: Optional[str] = None,
               scale: Optional[float] = None, offset: Optional[float] = None) -> DepthMap:
    data = Path(path).read_bytes()
    hdr = _Header(data)
    magic, at = hdr.token("magic")
    if magic != b"P5":
        raise DepthFormatError(f"not a binary PGM (magic {magic!r})", at)
    w = hdr.integer("width")
    h = hdr.integer("height")
    maxval_at = hdr.pos
    maxval = hdr.integer("maxval")
    if maxval < 256 or maxval > 65535:
        raise DepthFormatError(f"expected a 16-bit PGM, maxval is {maxval}", maxval_at)
    start = hdr.end_of_header()
    need = 2 * w * h
    if len(data) - start < need:
        raise DepthFormatError(f"truncated payload: need {need} bytes, have {len(data) - start}",
                               len(data))
    q = np.frombuffer(data, dtype=">u2", count=w * h, offset=start).reshape(h, w)
    meta = _read_sidecar(path)
    s = float(meta.get("scale", 1e-3)) if scale is None else scale
    o = float(meta.get("offset", 0.0)) if offset is None else offset
    unit = _check_unit(meta.get("unit"), expect_unit)
    mask = q > 0
    return DepthMap(np.where(mask, q * s + o, 0.0), mask, unit)


def write_depth_csv(depth: DepthMap, path: PathLike) -> None:
    h, w = depth.shape
    with open(path, "w", newline="") as fh:
        fh.write(f"# unit={depth.unit} height={h} width={w}\n")
        wr = csv.writer(fh, lineterminator="\n")
        for r in range(h):
            wr.writerow([format(v, ".17g") if ok else "nan"
                         for v, ok in zip(depth.values[r], depth.mask[r])])
    _write_sidecar(path, {"format": "csv", "unit": depth.unit})


def _parse_meta_line(line: str, offset: int) -> dict:
    if not line.startswith("#"):
        raise DepthFormatError("missing '# unit=... height=... width=...' header line", offset)
    meta = {}
    for item in line[1:].split():
        key, sep, val = item.partition("=")
        if not sep:
            raise DepthFormatError(f"bad header field {item!r}", offset)
        meta[key] = val
    return meta


def read_depth_csv(path: PathLike, expect_unit: Optional[str] = None) -> DepthMap:
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8")
    lines = text.splitlines(keepends=True)
    if not lines:
        raise DepthFormatError("empty file", 0)
    meta = _parse_meta_line(lines[0].strip(), 0)
    unit = _check_unit(meta.get("unit"), expect_unit)
    offset = len(lines[0].encode())
    rows = []
    for line in lines[1:]:
        s = line.strip()
        if s:
            try:
                rows.append([float(x) for x in s.split(",")])
            except ValueError:
                raise DepthFormatError("non-numeric value", offset) from None
            if rows and len(rows[-1]) != len(rows[0]):
                raise DepthFormatError("ragged row", offset)
        offset += len(line.encode())
    if not rows:
        raise DepthFormatError("no data rows", offset)
    vals = np.array(rows, dtype=np.float64)
    try:
        h, w = int(meta.get("height", vals.shape[0])), int(meta.get("width", vals.shape[1]))
    except ValueError:
        raise DepthFormatError("bad height/width in header", 0) from None
    if vals.shape != (h, w):
        raise DepthFormatError(f"header says {h}x{w} but found {vals.shape[0]}x{vals.shape[1]}",
                               len(raw))
    return DepthMap(vals, np.isfinite(vals), unit)


def write_depth(depth: DepthMap, path: PathLike, fmt: Optional[str] = None, **kw) -> None:
    fmt = fmt or infer_format(path)
    if fmt == "pfm":
        write_pfm(depth, path)
    elif fmt == "pgm16":
        write_pgm16(depth, path, **kw)
    elif fmt == "csv":
        write_depth_csv(depth, path)
    else:
        raise ParameterError(f"unknown depth format {fmt!r}")


def read_depth(path: PathLike, fmt: Optional[str] = None,
               expect_unit: Optional[str] = None) -> DepthMap:
    if not Path(path).exists():
        raise DataError(f"no such file: {path}")
    fmt = fmt or infer_format(path)
    if fmt == "pfm":
        return read_pfm(path, expect_unit)
    if fmt == "pgm16":
        return read_pgm16(path, expect_unit)
    if fmt == "csv":
        return read_depth_csv(path, expect_unit)
    raise ParameterError(f"unknown depth format {fmt!r}")


# sparse depth: (row, col, depth) triples

def write_sparse_csv(sparse: SparseDepth, path: PathLike) -> None:
    h, w = sparse.shape
    rows, cols = np.nonzero(sparse.mask)
    with open(path, "w", newline="") as fh:
        fh.write(f"# unit={sparse.unit} height={h} width={w}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["row", "col", "depth"])
        for r, c in zip(rows, cols):
            wr.writerow([int(r), int(c), format(sparse.values[r, c], ".17g")])


def read_sparse_csv(path: PathLike, expect_unit: Optional[str] = None) -> SparseDepth:
    raw = Path(path).read_bytes()
    lines = raw.decode("utf-8").splitlines(keepends=True)
    if len(lines) < 2:
        raise DepthFormatError("sparse CSV needs a metadata line and a column header",
                               len(raw))
    meta = _parse_meta_line(lines[0].strip(), 0)
    unit = _check_unit(meta.get("unit"), expect_unit)
    try:
        h, w = int(meta["height"]), int(meta["width"])
    except (KeyError, ValueError):
        raise DepthFormatError("header must give integer height and width", 0) from None
    offset = len(lines[0].encode())
    if [x.strip() for x in lines[1].split(",")] != ["row", "col", "depth"]:
        raise DepthFormatError("expected column header 'row,col,depth'", offset)
    offset += len(lines[1].encode())
    values = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    for line in lines[2:]:
        s = line.strip()
        if s:
            parts = s.split(",")
            try:
                r, c, d = int(parts[0]), int(parts[1]), float(parts[2])
            except (ValueError, IndexError):
                raise DepthFormatError(f"bad sparse record {s!r}", offset) from None
            if len(parts) != 3 or not (0 <= r < h and 0 <= c < w):
                raise DepthFormatError(f"record outside the {h}x{w} image", offset)
            values[r, c] = d
            mask[r, c] = True
        offset += len(line.encode())
    return SparseDepth(values, mask, unit=unit)


# PLY point clouds

def _colors(cloud: PointCloud, color_by: str, labels: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if color_by == "none":
        return None
    if color_by == "depth":
        z = cloud.points[:, 2]
        lo, hi = float(z.min()), float(z.max())
        t = (z - lo) / (hi - lo) if hi > lo else np.zeros_like(z)
        # near = warm, far = cool
        rgb = np.stack([1.0 - t, 0.5 * np.ones_like(t), t], axis=1)
        return np.round(rgb * 255).astype(np.uint8)
    if color_by == "segment":
        if labels is None or len(labels) != len(cloud):
            raise ParameterError("segment colouring needs one label per point")
        lab = np.asarray(labels, dtype=np.int64)
        # fixed integer hash so colours are stable across runs
        hsh = (lab * 2654435761) & 0xFFFFFF
        rgb = np.stack([(hsh >> 16) & 255, (hsh >> 8) & 255, hsh & 255], axis=1)
        rgb[lab < 0] = 128
        return rgb.astype(np.uint8)
    raise ParameterError(f"color_by must be depth, segment or none, got {color_by!r}")


def write_ply(cloud: PointCloud, path: PathLike, color_by: str = "none", binary: bool = False,
              labels: Optional[np.ndarray] = None, provenance: bool = True) -> None:
    """Write x, y, z doubles plus optional u, v (column, row) and rgb."""
    if len(cloud) == 0:
        raise DataError("refusing to write an empty point cloud")
    rgb = _colors(cloud, color_by, labels)
    prov = provenance and cloud.pixels is not None
    props = [("x", "double"), ("y", "double"), ("z", "double")]
    dt = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if prov:
        props += [("u", "int"), ("v", "int")]
        dt += [("u", "<i4"), ("v", "<i4")]
    if rgb is not None:
        props += [("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
        dt += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.zeros(len(cloud), dtype=dt)
    rec["x"], rec["y"], rec["z"] = cloud.points.T
    if prov:
        rec["u"] = cloud.pixels[:, 1]
        rec["v"] = cloud.pixels[:, 0]
    if rgb is not None:
        rec["red"], rec["green"], rec["blue"] = rgb.T
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"comment unit {cloud.unit}",
              f"element vertex {len(cloud)}"]
    header += [f"property {t} {n}" for n, t in props]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            buf = io.StringIO()
            for row in rec:
                parts = []
                for (name, typ) in props:
                    v = row[name]
                    parts.append(format(float(v), ".17g") if typ == "double" else str(int(v)))
                buf.write(" ".join(parts) + "\n")
            fh.write(buf.getvalue().encode("ascii"))


_PLY_TYPES = {"double": "<f8", "float": "<f4", "int": "<i4", "uint": "<u4", "uchar": "u1",
              "char": "i1", "short": "<i2", "ushort": "<u2"}


def read_ply(path: PathLike) -> dict:
    """Read a vertex-only PLY written by :func:`write_ply` (or compatible)."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise DepthFormatError("not a PLY file or header not terminated", 0)
    start = end + len(b"end_header\n")
    lines = data[:end].decode("ascii").splitlines()
    fmt, n, props, unit = None, None, [], "metric"
    pos = 0
    for line in lines:
        parts = line.split()
        if parts[:1] == ["format"]:
            fmt = parts[1]
        elif parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[:1] == ["property"]:
            if parts[1] not in _PLY_TYPES:
                raise DepthFormatError(f"unsupported property type {parts[1]}", pos)
            props.append((parts[2], _PLY_TYPES[parts[1]]))
        elif parts[:2] == ["comment", "unit"]:
            unit = parts[2]
        pos += len(line) + 1
    if n is None or fmt not in ("ascii", "binary_little_endian"):
        raise DepthFormatError("missing vertex count or unsupported format", 0)
    dt = np.dtype(props)
    if fmt == "binary_little_endian":
        if len(data) - start < n * dt.itemsize:
            raise DepthFormatError("truncated vertex payload", len(data))
        rec = np.frombuffer(data, dtype=dt, count=n, offset=start)
    else:
        body = data[start:].decode("ascii").split("\n")
        body = [b for b in body if b.strip()]
        if len(body) < n:
            raise DepthFormatError("truncated vertex payload", len(data))
        rec = np.zeros(n, dtype=dt)
        for i in range(n):
            vals = body[i].split()
            for (name, _), v in zip(props, vals):
                rec[name][i] = float(v) if rec.dtype[name].kind == "f" else int(v)
    names = rec.dtype.names
    out = {"points": np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64),
           "unit": unit, "count": n}
    if "u" in names:
        out["pixels"] = np.stack([rec["v"], rec["u"]], axis=1).astype(np.int64)
    if "red" in names:
        out["colors"] = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
    return out


# JSON with fixed float formatting

def _json_value(v, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    close = "\n" + " " * (indent * level)
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if not math.isfinite(f):
            return "null"
        txt = format(f, ".17g")
        return txt if any(ch in txt for ch in ".en") else txt + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, np.ndarray):
        return _json_value(v.tolist(), indent, level)
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f"{json.dumps(str(k))}: {_json_value(x, indent, level + 1)}"
                 for k, x in v.items()]
        return "{" + pad + ("," + pad).join(items) + close + "}"
    if isinstance(v, (list, tuple)):
        if not v:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple, np.ndarray)) for x in v):
            return "[" + ", ".join(_json_value(x, indent, level + 1) for x in v) + "]"
        return "[" + pad + ("," + pad).join(_json_value(x, indent, level + 1) for x in v) \
            + close + "]"
    raise TypeError(f"cannot serialise {type(v).__name__}")


def dumps_json(obj, indent: int = 1) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _json_value(obj, indent, 0) + "\n"


def write_json(obj, path: PathLike) -> None:
    Path(path).write_text(dumps_json(obj))
