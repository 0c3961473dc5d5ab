"""Grayscale image files: PGM (P2 ASCII / P5 binary) and ``.f32grid``.

``.f32grid`` is a one-line ASCII header ``"<width> <height>\\n"`` followed by
width*height little-endian float32 values, row-major.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import BundleIOError, ValidationError

MIN_SIDE = 8


def _check(img, path):
    if img.ndim != 2 or min(img.shape) < MIN_SIDE:
        raise ValidationError(f"{path}: images must be 2-D and at least {MIN_SIDE}x{MIN_SIDE}",
                              shape=list(img.shape))
    if not np.all(np.isfinite(img)):
        raise ValidationError(f"{path}: non-finite intensities")
    return img


def _pgm_tokens(data, count, start=0):
    """First ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], start
    pat = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)")
    while len(tokens) < count:
        m = pat.match(data, pos)
        if not m:
            raise BundleIOError("truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    return tokens, pos


def read_pgm(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}") from exc
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise BundleIOError(f"{path}: not a P2/P5 PGM file")
    (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise BundleIOError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 65536:
        raise BundleIOError(f"{path}: PGM maxval out of range")
    n = w * h
    if magic == b"P2":
        vals = data[pos:].split()
        if len(vals) < n:
            raise BundleIOError(f"{path}: PGM payload truncated")
        img = np.array(vals[:n], dtype=float)
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = data[pos + 1:pos + 1 + n * dtype.itemsize]
        if len(payload) < n * dtype.itemsize:
            raise BundleIOError(f"{path}: PGM payload truncated")
        img = np.frombuffer(payload, dtype=dtype).astype(float)
    return _check(img.reshape(h, w), path)


def write_pgm(path, img, binary=True, maxval=255):
    """Write an image already scaled to [0, maxval]; values are rounded and clipped."""
    a = np.clip(np.rint(np.asarray(img, dtype=float)), 0, maxval).astype(int)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxval}\n".encode("ascii"))
        if binary:
            fh.write(a.astype(">u2" if maxval > 255 else "u1").tobytes())
        else:
            for row in a:
                fh.write((" ".join(map(str, row)) + "\n").encode("ascii"))


def read_f32grid(path):
    try:
        with open(path, "rb") as fh:
            header = fh.readline()
            payload = fh.read()
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}") from exc
    try:
        w, h = (int(v) for v in header.split())
    except ValueError as exc:
        raise BundleIOError(f"{path}: bad .f32grid header") from exc
    if len(payload) != 4 * w * h:
        raise BundleIOError(f"{path}: expected {4 * w * h} payload bytes, got {len(payload)}")
    img = np.frombuffer(payload, dtype="<f4").astype(float).reshape(h, w)
    return _check(img, path)


def write_f32grid(path, img):
    a = np.asarray(img, dtype="<f4")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(a.tobytes())


def read_image(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".f32grid":
        return read_f32grid(path)
    raise BundleIOError(f"unsupported image format: {path}")


def read_sequence(directory):
    """All .pgm/.f32grid files of a directory, sorted by file name."""
    try:
        names = sorted(n for n in os.listdir(directory)
                       if os.path.splitext(n)[1].lower() in (".pgm", ".f32grid"))
    except OSError as exc:
        raise BundleIOError(f"cannot list {directory}: {exc}") from exc
    if len(names) < 2:
        raise ValidationError(f"{directory}: need at least two frames")
    imgs = [read_image(os.path.join(directory, n)) for n in names]
    if len({i.shape for i in imgs}) != 1:
        raise ValidationError(f"{directory}: frames differ in size")
    return imgs
