"""Structured myocardial meshing from stacked endo/epi rings.

Nodes live on a lattice indexed by (level k, shell l, angle j): levels run
base -> apex, shells endo (l=0) -> epi (l=layers), angles wrap around. Every
lattice hexahedron is cut into the six Kuhn tetrahedra along its (0,0,0) ->
(1,1,1) diagonal; the split is translation invariant in index space, so
neighbouring cells (including across the angular seam) share face diagonals.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import MeshingError, ValidationError
from .vtkio import VTK_TETRA, read_vtk, write_vtk

log = logging.getLogger(__name__)

MIN_TET_VOLUME = 1e-6

INTERIOR, ENDO, EPI, EXTERNAL = 0, 1, 2, 3
SURFACE_NAMES = {INTERIOR: "interior", ENDO: "endo_surface", EPI: "epi_surface",
                 EXTERNAL: "external"}
REGIONS = ("endo", "epi", "base_cap", "apex_cap")

_KUHN = [tuple(p) for p in itertools.permutations(range(3))]


def _parity(perm):
    return sum(1 for a, b in itertools.combinations(perm, 2) if a > b) % 2


@dataclass(frozen=True)
class LvMesh:
    nodes: np.ndarray        # (N, 3) mm, LV space
    tets: np.ndarray         # (M, 4) positively oriented
    surface: np.ndarray      # (N,) INTERIOR / ENDO / EPI / EXTERNAL
    ring: np.ndarray         # (N,) lattice level, -1 for apex or external nodes
    layer: np.ndarray        # (N,) transmural shell, -1 for external nodes

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_tets(self):
        return len(self.tets)

    def volumes(self, nodes=None):
        return tet_volumes(self.nodes if nodes is None else nodes, self.tets)

    def centroids(self, nodes=None):
        x = self.nodes if nodes is None else nodes
        return x[self.tets].mean(axis=1)


@dataclass(frozen=True)
class TriSurface:
    vertices: np.ndarray
    triangles: np.ndarray    # (F, 3) outward oriented
    regions: np.ndarray      # (F,) index into REGIONS

    def area(self):
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1).sum()

    def enclosed_volume(self):
        p = self.vertices[self.triangles]
        return np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0

    def edge_use_counts(self):
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self):
        return bool(np.all(self.edge_use_counts() == 2))

    def euler_characteristic(self):
        used = np.unique(self.triangles)
        e = np.unique(np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1), axis=0)
        return len(used) - len(e) + len(self.triangles)


def tet_volumes(nodes, tets):
    p = nodes[tets]
    a, b, c = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


def _check_rings(endo_rings, epi_rings):
    endo = [np.asarray(r, dtype=float) for r in endo_rings]
    epi = [np.asarray(r, dtype=float) for r in epi_rings]
    if len(endo) < 2 or len(endo) != len(epi):
        raise ValidationError("need >= 2 endo rings and the same number of epi rings")
    n = {len(r) for r in endo + epi}
    if len(n) != 1:
        raise ValidationError(f"all rings must have the same sample count, got {sorted(n)}")
    if next(iter(n)) < 3:
        raise ValidationError("rings need at least 3 samples")
    return np.stack(endo), np.stack(epi)


def _check_base_stitch(endo0, epi0):
    # endo ring must sit strictly inside the epi ring in the basal plane
    c = epi0.mean(axis=0)
    normal = np.cross(epi0[1] - c, epi0[0] - c)
    for i in range(len(epi0)):
        n_i = np.cross(epi0[i] - c, epi0[(i + 1) % len(epi0)] - c)
        normal = normal + n_i
    normal /= np.linalg.norm(normal)
    e1 = epi0[0] - c - ((epi0[0] - c) @ normal) * normal
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    poly = np.c_[(epi0 - c) @ e1, (epi0 - c) @ e2]
    q = np.c_[(endo0 - c) @ e1, (endo0 - c) @ e2]
    inside = _points_in_polygon(q, poly)
    if not np.all(inside):
        raise MeshingError("basal stitch self-intersects: endo ring not inside epi ring",
                           samples=np.flatnonzero(~inside).tolist())


def _points_in_polygon(q, poly):
    x, y = q[:, 0:1], q[:, 1:2]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cond = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    crossings = np.sum(cond & (x < xint), axis=1)
    return crossings % 2 == 1


def _lattice(endo, epi, layers, apex_closure):
    K, n, _ = endo.shape
    L = layers
    w = (np.arange(L + 1) / L)[None, :, None, None]
    grid = (1.0 - w) * endo[:, None] + w * epi[:, None]          # (K, L+1, n, 3)
    nodes = grid.reshape(-1, 3)
    lvl, shell, _ = np.meshgrid(np.arange(K), np.arange(L + 1), np.arange(n), indexing="ij")
    ring = lvl.ravel()
    layer = shell.ravel()

    def idx(k, l, j):
        return (k * (L + 1) + l) * n + (j % n)

    apex_ids = None
    if apex_closure == "fan":
        centroids = grid.mean(axis=2)                                # (K, L+1, 3)
        axis = centroids[-1].mean(axis=0) - centroids[-2].mean(axis=0)
        spacing = np.linalg.norm(axis)
        axis /= spacing
        offsets = 0.5 * spacing * (1.0 + np.arange(L + 1) / L)
        apex = centroids[-1] + offsets[:, None] * axis
        apex_ids = len(nodes) + np.arange(L + 1)
        nodes = np.vstack([nodes, apex])
        ring = np.concatenate([ring, np.full(L + 1, -1)])
        layer = np.concatenate([layer, np.arange(L + 1)])

    tets, cells = [], []
    for perm in _KUHN:
        corners = [(0, 0, 0)]
        cur = [0, 0, 0]
        for ax in perm:
            cur[ax] = 1
            corners.append(tuple(cur))
        k0, l0, j0 = np.meshgrid(np.arange(K - 1), np.arange(L), np.arange(n), indexing="ij")
        if _parity(perm):
            corners[1], corners[2] = corners[2], corners[1]
        verts = np.stack([idx(k0 + dk, l0 + dl, j0 + dj) for dk, dl, dj in corners], axis=-1)
        tets.append(verts.reshape(-1, 4))
        cells.append(np.stack([k0, l0, j0], axis=-1).reshape(-1, 3))
        if apex_ids is not None:
            l0c, j0c = np.meshgrid(np.arange(L), np.arange(n), indexing="ij")
            vc = []
            for dk, dl, dj in corners:
                vc.append(apex_ids[l0c + dl] if dk else idx(K - 1, l0c + dl, j0c + dj))
            vc = np.stack(vc, axis=-1).reshape(-1, 4)
            keep = np.array([len(set(t)) == 4 for t in vc.tolist()])
            if keep.any():
                tets.append(vc[keep])
                kc = np.full(l0c.shape, K - 1)
                cells.append(np.stack([kc, l0c, j0c], axis=-1).reshape(-1, 3)[keep])
    tets = np.vstack(tets)
    cells = np.vstack(cells)
    vols = tet_volumes(nodes, tets)
    # one handedness for the whole lattice: flip by the dominant sign
    if np.sum(vols) < 0:
        tets = tets[:, [0, 2, 1, 3]]
        vols = -vols
    bad = vols < MIN_TET_VOLUME
    if np.any(bad):
        raise MeshingError(f"{int(bad.sum())} tetrahedra with volume < {MIN_TET_VOLUME} mm^3",
                           cells=cells[bad][:20].tolist())
    surface = np.full(len(nodes), INTERIOR)
    surface[layer == 0] = ENDO
    surface[layer == L] = EPI
    return LvMesh(nodes=nodes, tets=tets, surface=surface, ring=ring, layer=layer)


def tetrahedralize(endo_rings, epi_rings, layers=3, apex_closure="fan"):
    """Transmural tet mesh between endo and epi rings ordered base -> apex.

    ``apex_closure='fan'`` caps the apex with per-shell apex nodes offset
    apically by half the last ring spacing (endo) to a full spacing (epi);
    ``'flat'`` leaves a tube whose apical face is a flat annular strip.
    """
    if layers < 1:
        raise ValidationError("layers must be >= 1")
    if apex_closure not in ("fan", "flat"):
        raise ValidationError(f"unknown apex closure {apex_closure!r}")
    endo, epi = _check_rings(endo_rings, epi_rings)
    _check_base_stitch(endo[0], epi[0])
    return _lattice(endo, epi, layers, apex_closure)


def boundary_faces(tets, nodes):
    """Faces used by exactly one tet, oriented outward."""
    faces = np.concatenate([tets[:, [1, 2, 3]], tets[:, [0, 3, 2]],
                            tets[:, [0, 1, 3]], tets[:, [0, 2, 1]]])
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    faces = faces[counts[inv.ravel()] == 1]
    return faces


def extract_surface(mesh):
    faces = boundary_faces(mesh.tets, mesh.nodes)
    s = mesh.surface[faces]
    ring = mesh.ring[faces]
    regions = np.full(len(faces), REGIONS.index("epi"))
    regions[np.all(s == ENDO, axis=1)] = REGIONS.index("endo")
    if np.any(mesh.ring >= 0):
        last = mesh.ring.max()
        regions[np.all(ring == 0, axis=1)] = REGIONS.index("base_cap")
        regions[np.any(ring == -1, axis=1) | np.all(ring == last, axis=1)] = REGIONS.index("apex_cap")
    return TriSurface(vertices=mesh.nodes, triangles=faces, regions=regions)


def loft_surface(endo_rings, epi_rings, apex_closure="fan"):
    """Closed triangulated surface through the rings: endo and epi quad strips,
    a basal annular stitch and the apical closure. Same face diagonals as
    :func:`tetrahedralize`, so the volume mesh boundary lies on it exactly."""
    return extract_surface(tetrahedralize(endo_rings, epi_rings, layers=1,
                                          apex_closure=apex_closure))


def dihedral_angles(nodes, tets):
    """(M, 6) interior dihedral angles in degrees."""
    p = nodes[tets]
    normals = []
    for a in range(4):
        o = [i for i in range(4) if i != a]
        n = np.cross(p[:, o[1]] - p[:, o[0]], p[:, o[2]] - p[:, o[0]])
        # point away from the opposite vertex
        sign = np.sign(np.einsum("ij,ij->i", n, p[:, o[0]] - p[:, a]))
        n = n * sign[:, None]
        normals.append(n / np.linalg.norm(n, axis=1, keepdims=True))
    ang = []
    for a, b in itertools.combinations(range(4), 2):
        c = np.clip(np.einsum("ij,ij->i", normals[a], normals[b]), -1.0, 1.0)
        ang.append(180.0 - np.degrees(np.arccos(c)))
    return np.stack(ang, axis=1)


ASPECT_BINS = (1.0, 1.5, 2.0, 3.0, 5.0, 10.0, np.inf)


def aspect_ratios(nodes, tets):
    # longest edge over the regular-tet value 2*sqrt(6)*inradius; 1 for a regular tet
    p = nodes[tets]
    edges = [np.linalg.norm(p[:, a] - p[:, b], axis=1) for a, b in itertools.combinations(range(4), 2)]
    lmax = np.max(edges, axis=0)
    area = 0.0
    for a in range(4):
        o = [i for i in range(4) if i != a]
        area = area + 0.5 * np.linalg.norm(np.cross(p[:, o[1]] - p[:, o[0]], p[:, o[2]] - p[:, o[0]]), axis=1)
    r_in = 3.0 * np.abs(tet_volumes(nodes, tets)) / area
    return lmax / (2.0 * np.sqrt(6.0) * r_in)


def mesh_quality(mesh):
    vols = mesh.volumes()
    dih = dihedral_angles(mesh.nodes, mesh.tets)
    ar = aspect_ratios(mesh.nodes, mesh.tets)
    hist, _ = np.histogram(ar, bins=ASPECT_BINS)
    return {
        "n_nodes": int(mesh.n_nodes),
        "n_tets": int(mesh.n_tets),
        "min_volume": float(vols.min()),
        "mean_volume": float(vols.mean()),
        "total_volume": float(vols.sum()),
        "min_dihedral_deg": float(dih.min()),
        "max_dihedral_deg": float(dih.max()),
        "aspect_ratio_bins": [float(b) if np.isfinite(b) else "inf" for b in ASPECT_BINS],
        "aspect_ratio_hist": hist.astype(int).tolist(),
    }


def write_mesh(path, mesh, point_data=None, cell_data=None):
    pd = {"surface": mesh.surface.astype(float), "ring": mesh.ring.astype(float),
          "layer": mesh.layer.astype(float)}
    pd.update(point_data or {})
    write_vtk(path, mesh.nodes, mesh.tets, point_data=pd, cell_data=cell_data)


def load_external_mesh(path):
    """Read a tet-only VTK grid; inverted tets are reordered. Ring/shell tags
    are restored when present, otherwise nodes are tagged external."""
    nodes, cells, types, pdata, _ = read_vtk(path)
    if np.any(types != VTK_TETRA):
        bad = sorted({int(t) for t in types if t != VTK_TETRA})
        raise ValidationError(f"unsupported cell type(s) {bad}; only VTK_TETRA (10) is accepted")
    tets = np.array(cells, dtype=np.int64).reshape(-1, 4)
    vols = tet_volumes(nodes, tets)
    flipped = vols < 0
    if np.any(flipped):
        log.warning("reordered %d inverted tetrahedra in %s", int(flipped.sum()), path)
        tets[flipped] = tets[flipped][:, [0, 2, 1, 3]]
        vols = np.abs(vols)
    if np.any(vols < MIN_TET_VOLUME):
        raise MeshingError(f"{int((vols < MIN_TET_VOLUME).sum())} degenerate tetrahedra in {path}",
                           cells=np.flatnonzero(vols < MIN_TET_VOLUME)[:20].tolist())
    n = len(nodes)
    if {"surface", "ring", "layer"} <= set(pdata):
        surface = pdata["surface"].astype(int)
        ring = pdata["ring"].astype(int)
        layer = pdata["layer"].astype(int)
    else:
        surface = np.full(n, EXTERNAL)
        ring = np.full(n, -1)
        layer = np.full(n, -1)
    return LvMesh(nodes=nodes, tets=tets, surface=surface, ring=ring, layer=layer)
