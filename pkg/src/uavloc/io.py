"""Readers and writers for the on-disk formats: binary PGM, TUM trajectories, JSON lines."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from uavloc.geometry import Pose6


def write_pgm(path, image):
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, each separated by whitespace; '#' starts a comment
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def format_tum_line(timestamp, pose: Pose6):
    tx, ty, tz = pose.translation
    qx, qy, qz, qw = pose.rotation
    return " ".join(f"{v:.9g}" for v in (timestamp, tx, ty, tz, qx, qy, qz, qw))


def write_tum(path, timestamps, poses, header=None):
    with open(path, "w") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for ts, pose in zip(timestamps, poses):
            fh.write(format_tum_line(ts, pose) + "\n")


def read_tum(path):
    """Return (timestamps, positions (N,3), quaternions (N,4) as x y z w)."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 8:
            raise ValueError(f"{path}: malformed TUM line {line!r}")
        rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(-1, 8)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:8]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def append_jsonl(path, obj):
    with open(path, "a") as fh:
        fh.write(json.dumps(obj, sort_keys=True, default=_json_default) + "\n")


def read_jsonl(path):
    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
