"""On-disk formats: PFM images, PGM previews, event streams, small tensors.

Everything here is little-endian. PFM follows the usual convention of a
negative scale meaning little-endian and rows stored bottom-up; only the
grayscale "Pf" variant is supported. Event streams exist in two flavours,
a line-oriented text form and a fixed-record binary form, both carrying
the sensor geometry and contrast threshold so a stream file is
self-describing. Tensors use a minimal named-chunk container so parameter
checkpoints can be dumped and restored without pickle.
"""

from __future__ import annotations

import struct

import numpy as np

from evsve.sve import SvePattern

_EVT_MAGIC = b"EVT0"
_EVT_RECORD = struct.Struct("<dHHb")
_TNSR_MAGIC = b"TNSR"


class FormatError(ValueError):
    """Raised when a file does not match its declared format."""


# ---------------------------------------------------------------------------
# PFM / PGM


def write_pfm(path, image: np.ndarray) -> None:
    """Write a 2-d float array as grayscale PFM (little-endian, bottom-up)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("PFM writer expects a 2-d array")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(image[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM file into a float64 array."""
    with open(path, "rb") as f:
        def token():
            # whitespace-delimited header tokens, '#' comments allowed
            chars = []
            while True:
                c = f.read(1)
                if not c:
                    raise FormatError("truncated PFM header")
                if c == b"#":
                    while c not in (b"\n", b""):
                        c = f.read(1)
                    continue
                if c.isspace():
                    if chars:
                        return b"".join(chars)
                    continue
                chars.append(c)

        magic = token()
        if magic != b"Pf":
            raise FormatError("not a grayscale PFM file")
        try:
            w = int(token())
            h = int(token())
            scale = float(token())
        except ValueError as exc:
            raise FormatError("malformed PFM header") from exc
        if w <= 0 or h <= 0 or scale == 0:
            raise FormatError("malformed PFM header")
        endian = "<" if scale < 0 else ">"
        raw = f.read(4 * w * h)
        if len(raw) != 4 * w * h:
            raise FormatError("truncated PFM payload")
        data = np.frombuffer(raw, dtype=endian + "f4").reshape(h, w)
        return data[::-1].astype(np.float64)


def write_pgm(path, image: np.ndarray) -> None:
    """Write values in [0, 1] as an 8-bit binary PGM preview."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM writer expects a 2-d array")
    q = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a float64 array scaled to [0, 1]."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"P5":
            raise FormatError("not a binary PGM file")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        try:
            w, h = (int(t) for t in line.split())
            maxval = int(f.readline())
        except ValueError as exc:
            raise FormatError("malformed PGM header") from exc
        if maxval != 255:
            raise FormatError("only 8-bit PGM supported")
        raw = f.read(w * h)
        if len(raw) != w * h:
            raise FormatError("truncated PGM payload")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w) / 255.0


# ---------------------------------------------------------------------------
# SVE pattern sidecar


def write_pattern_sidecar(path, pattern: SvePattern) -> None:
    """Persist attenuation factors and exposure time next to a mosaic PFM."""
    with open(path, "w", encoding="ascii") as f:
        f.write("taus " + " ".join(repr(float(t)) for t in pattern.taus) + "\n")
        f.write(f"t_exp {float(pattern.t_exp)!r}\n")


def read_pattern_sidecar(path) -> SvePattern:
    fields = {}
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            parts = line.split()
            if parts:
                fields[parts[0]] = parts[1:]
    try:
        taus = tuple(float(t) for t in fields["taus"])
        t_exp = float(fields["t_exp"][0])
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError("malformed pattern sidecar") from exc
    return SvePattern(taus=taus, t_exp=t_exp)


# ---------------------------------------------------------------------------
# Event streams

# Both writers take parallel arrays (t float seconds, x/y integer pixel
# coordinates, p in {1, -1}) plus sensor geometry and the contrast
# threshold; readers hand the same tuple back.


def _check_event_arrays(t, x, y, p, width, height):
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    p = np.asarray(p, dtype=np.int64)
    n = t.shape[0]
    if not (x.shape[0] == y.shape[0] == p.shape[0] == n):
        raise ValueError("event arrays must have equal length")
    if n:
        if not np.all(np.isfinite(t)):
            raise ValueError("event times must be finite")
        if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
            raise ValueError("event coordinates out of sensor bounds")
        if not np.all(np.abs(p) == 1):
            raise ValueError("event polarity must be +1 or -1")
    return t, x, y, p


def write_events_text(path, t, x, y, p, width: int, height: int, c: float) -> None:
    t, x, y, p = _check_event_arrays(t, x, y, p, width, height)
    with open(path, "w", encoding="ascii") as f:
        f.write(f"# {width} {height} {float(c)!r}\n")
        # plain Python scalars: numpy 2.x reprs carry a type prefix
        for ti, xi, yi, pi in zip(t, x, y, p):
            f.write(f"{float(ti)!r} {int(xi)} {int(yi)} {int(pi)}\n")


def read_events_text(path):
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().split()
        if len(header) != 4 or header[0] != "#":
            raise FormatError("missing event stream header")
        try:
            width, height, c = int(header[1]), int(header[2]), float(header[3])
        except ValueError as exc:
            raise FormatError("malformed event stream header") from exc
        rows = []
        for lineno, line in enumerate(f, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(f"malformed event record at line {lineno}")
            try:
                rows.append(
                    (float(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]))
                )
            except ValueError as exc:
                raise FormatError(
                    f"malformed event record at line {lineno}"
                ) from exc
    if rows:
        t = np.array([r[0] for r in rows])
        x = np.array([r[1] for r in rows], dtype=np.int64)
        y = np.array([r[2] for r in rows], dtype=np.int64)
        p = np.array([r[3] for r in rows], dtype=np.int64)
    else:
        t = np.empty(0)
        x = np.empty(0, dtype=np.int64)
        y = np.empty(0, dtype=np.int64)
        p = np.empty(0, dtype=np.int64)
    t, x, y, p = _check_event_arrays(t, x, y, p, width, height)
    return t, x, y, p, width, height, c


def write_events_binary(path, t, x, y, p, width: int, height: int, c: float) -> None:
    """Fixed 16-byte header (magic, geometry, threshold) then packed records."""
    t, x, y, p = _check_event_arrays(t, x, y, p, width, height)
    if width >= 1 << 16 or height >= 1 << 16:
        raise ValueError("binary event format caps geometry at 16 bits")
    header = _EVT_MAGIC + struct.pack("<HHf", width, height, c) + b"\x00" * 4
    rec = np.empty(
        t.shape[0],
        dtype=np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")]),
    )
    rec["t"] = t
    rec["x"] = x
    rec["y"] = y
    rec["p"] = p
    with open(path, "wb") as f:
        f.write(header)
        f.write(rec.tobytes())


def read_events_binary(path):
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != _EVT_MAGIC:
            raise FormatError("not a binary event stream")
        width, height, c = struct.unpack("<HHf", header[4:12])
        payload = f.read()
    if len(payload) % _EVT_RECORD.size:
        raise FormatError("truncated binary event stream")
    rec = np.frombuffer(
        payload,
        dtype=np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")]),
    )
    t = rec["t"].astype(np.float64)
    x = rec["x"].astype(np.int64)
    y = rec["y"].astype(np.int64)
    p = rec["p"].astype(np.int64)
    t, x, y, p = _check_event_arrays(t, x, y, p, width, height)
    return t, x, y, p, int(width), int(height), float(c)


# ---------------------------------------------------------------------------
# Trigger tables


def write_triggers(path, times) -> None:
    times = np.asarray(times, dtype=np.float64)
    with open(path, "w", encoding="ascii") as f:
        for t in times:
            f.write(f"{float(t)!r}\n")


def read_triggers(path) -> np.ndarray:
    vals = []
    with open(path, "r", encoding="ascii") as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                vals.append(float(s))
            except ValueError as exc:
                raise FormatError(f"malformed trigger time at line {lineno}") from exc
    return np.asarray(vals, dtype=np.float64)


# ---------------------------------------------------------------------------
# Homographies and correspondences


def write_homography(path, h: np.ndarray) -> None:
    """Write a 3x3 matrix as nine decimal numbers, row-major, one per line."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ValueError("homography must be 3x3")
    with open(path, "w", encoding="ascii") as f:
        for v in h.ravel():
            f.write(f"{float(v)!r}\n")


def read_homography(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as f:
        tokens = f.read().split()
    if len(tokens) != 9:
        raise FormatError("homography file must hold exactly nine numbers")
    try:
        vals = [float(v) for v in tokens]
    except ValueError as exc:
        raise FormatError("malformed homography file") from exc
    return np.array(vals, dtype=np.float64).reshape(3, 3)


def write_correspondences(path, pts_a: np.ndarray, pts_b: np.ndarray) -> None:
    """Write matched point pairs as lines "xa ya xb yb"."""
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    if pts_a.shape != pts_b.shape or pts_a.ndim != 2 or pts_a.shape[1] != 2:
        raise ValueError("correspondences must be matching (N, 2) arrays")
    with open(path, "w", encoding="ascii") as f:
        for (xa, ya), (xb, yb) in zip(pts_a, pts_b):
            f.write(f"{float(xa)!r} {float(ya)!r} {float(xb)!r} {float(yb)!r}\n")


def read_correspondences(path):
    rows = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 4:
                raise FormatError("correspondence lines need four numbers")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise FormatError("malformed correspondence line") from exc
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return arr[:, :2].copy(), arr[:, 2:].copy()


# ---------------------------------------------------------------------------
# Named tensor chunks

# Layout: magic, u32 entry count, then per entry a u16 name length, the
# utf-8 name, u8 rank, u32 extents, and the row-major f32 payload.


def save_tensors(path, tensors: dict) -> None:
    with open(path, "wb") as f:
        f.write(_TNSR_MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
            enc = name.encode("utf-8")
            if len(enc) >= 1 << 16:
                raise ValueError("tensor name too long")
            if arr.ndim > 255:
                raise ValueError("tensor rank too large")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_tensors(path) -> dict:
    def need(f, n):
        raw = f.read(n)
        if len(raw) != n:
            raise FormatError("truncated tensor file")
        return raw

    out = {}
    with open(path, "rb") as f:
        if need(f, 4) != _TNSR_MAGIC:
            raise FormatError("not a tensor chunk file")
        (count,) = struct.unpack("<I", need(f, 4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", need(f, 2))
            name = need(f, nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", need(f, 1))
            shape = struct.unpack(f"<{rank}I", need(f, 4 * rank))
            numel = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(need(f, 4 * numel), dtype="<f4")
            out[name] = data.reshape(shape).astype(np.float64)
    return out
