"""Legacy ASCII VTK 3.0 unstructured grids (read and write).

Floats are written with their shortest round-trip repr so output is
bit-reproducible and re-reading recovers the exact doubles.
"""

import numpy as np

from .errors import BundleIOError, ValidationError

VTK_TRIANGLE = 5
VTK_TETRA = 10
_CELL_SIZES = {1: 1, 3: 2, 5: 3, 8: 4, 9: 4, 10: 4, 12: 8, 13: 6, 14: 5}


def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


def write_vtk(path, nodes, cells, point_data=None, cell_data=None, title="strainforge",
              cell_type=VTK_TETRA):
    """Write points + homogeneous cells. Data arrays of shape (n,) become
    SCALARS, (n, 3) become VECTORS. Insertion order of the dicts is kept."""
    nodes = np.asarray(nodes, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(nodes)} double"]
    lines += [_fmt(p) for p in nodes]
    k = cells.shape[1]
    lines.append(f"CELLS {len(cells)} {len(cells) * (k + 1)}")
    lines += [f"{k} " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(cell_type)] * len(cells)
    for header, count, data in (("POINT_DATA", len(nodes), point_data),
                                ("CELL_DATA", len(cells), cell_data)):
        if not data:
            continue
        lines.append(f"{header} {count}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != count:
                raise ValidationError(f"{header} array {name!r} has {arr.shape[0]} entries, "
                                      f"expected {count}")
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [repr(float(v)) for v in arr]
            elif arr.ndim == 2 and arr.shape[1] == 3:
                lines.append(f"VECTORS {name} double")
                lines += [_fmt(v) for v in arr]
            else:
                raise ValidationError(f"unsupported data shape {arr.shape} for {name!r}")
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines))
            fh.write("\n")
    except OSError as exc:
        raise BundleIOError(f"cannot write {path}: {exc}", path=str(path)) from None


def read_vtk(path):
    """Parse a legacy ASCII unstructured grid.

    Returns ``(nodes, cells, cell_types, point_data, cell_data)`` where
    ``cells`` is a list of index tuples (cells may be mixed).
    """
    try:
        with open(path, encoding="ascii") as fh:
            text = fh.read()
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}", path=str(path)) from None
    lines = text.splitlines()
    if len(lines) < 4 or not lines[0].startswith("# vtk DataFile"):
        raise ValidationError(f"{path}: not a legacy VTK file")
    if lines[2].strip().upper() != "ASCII":
        raise ValidationError(f"{path}: only ASCII VTK is supported")
    if lines[3].split()[-1].upper() != "UNSTRUCTURED_GRID":
        raise ValidationError(f"{path}: dataset must be UNSTRUCTURED_GRID")
    tokens = " ".join(lines[4:]).split()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise ValidationError(f"{path}: truncated file")
        out = tokens[pos:pos + n]
        pos += n
        return out

    nodes = cells = types = None
    point_data, cell_data = {}, {}
    current, count = None, 0
    while pos < len(tokens):
        key = take(1)[0].upper()
        if key == "POINTS":
            n, _ = take(2)
            nodes = np.array(take(3 * int(n)), dtype=float).reshape(-1, 3)
        elif key == "CELLS":
            n, size = (int(x) for x in take(2))
            raw = np.array(take(size), dtype=np.int64)
            cells, i = [], 0
            for _ in range(n):
                k = int(raw[i])
                cells.append(tuple(int(x) for x in raw[i + 1:i + 1 + k]))
                i += k + 1
        elif key == "CELL_TYPES":
            n = int(take(1)[0])
            types = np.array(take(n), dtype=int)
        elif key in ("POINT_DATA", "CELL_DATA"):
            count = int(take(1)[0])
            current = point_data if key == "POINT_DATA" else cell_data
        elif key == "SCALARS":
            name, _dtype, *rest = take(2)
            ncomp = 1
            if pos < len(tokens) and tokens[pos].isdigit():
                ncomp = int(take(1)[0])
            if tokens[pos].upper() == "LOOKUP_TABLE":
                take(2)
            arr = np.array(take(count * ncomp), dtype=float)
            current[name] = arr if ncomp == 1 else arr.reshape(count, ncomp)
        elif key == "VECTORS":
            name, _dtype = take(2)
            current[name] = np.array(take(3 * count), dtype=float).reshape(count, 3)
        else:
            raise ValidationError(f"{path}: unsupported section {key!r}")
    if nodes is None or cells is None or types is None:
        raise ValidationError(f"{path}: missing POINTS, CELLS or CELL_TYPES")
    for c, t in zip(cells, types):
        if _CELL_SIZES.get(int(t), len(c)) != len(c):
            raise ValidationError(f"{path}: cell type {t} with {len(c)} nodes")
    return nodes, cells, types, point_data, cell_data
