"""Tagged tetrahedral meshes of the pressurized tube benchmark.

The generated mesh keeps separate vertex sets for the fluid and the
structure.  Interface vertices therefore exist twice (once per side) with
identical coordinates, and every INTERFACE triangle is listed once with
fluid vertex ids and once with structure vertex ids.

Units are mm throughout.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Region(enum.IntEnum):
    FLUID = 0
    MEDIA = 1
    ADVENTITIA = 2


class BoundaryTag(enum.IntEnum):
    INLET = 0
    OUTLET = 1
    INTERFACE = 2
    SOLID_ENDS = 3
    OUTER_WALL = 4


STRUCTURE_REGIONS = (Region.MEDIA, Region.ADVENTITIA)

# outward faces of a positively oriented tet
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])

COORD_TOL = 1e-12


class MeshError(ValueError):
    """Raised when a mesh fails to parse or violates an invariant."""


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    tets: np.ndarray
    regions: np.ndarray
    btris: np.ndarray
    btri_tags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "tets", np.ascontiguousarray(self.tets, dtype=np.int64).reshape(-1, 4))
        object.__setattr__(self, "regions", np.ascontiguousarray(self.regions, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "btris", np.ascontiguousarray(self.btris, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "btri_tags", np.ascontiguousarray(self.btri_tags, dtype=np.int64).reshape(-1))
        for name in ("vertices", "tets", "regions", "btris", "btri_tags"):
            getattr(self, name).flags.writeable = False

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("vertices", "tets", "regions", "btris", "btri_tags")
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def signed_volumes(self, vertices=None) -> np.ndarray:
        x = self.vertices if vertices is None else vertices
        return tet_volumes(x, self.tets)

    def region_volume(self, region) -> float:
        return float(self.signed_volumes()[self.regions == int(region)].sum())

    def moved(self, displacement) -> "Mesh":
        """Same connectivity, vertices shifted by a nodal displacement field."""
        return Mesh(self.vertices + np.asarray(displacement).reshape(-1, 3),
                    self.tets, self.regions, self.btris, self.btri_tags)

    def submesh(self, regions) -> "SubMesh":
        regions = [int(r) for r in np.atleast_1d(regions)]
        tet_mask = np.isin(self.regions, regions)
        used = np.unique(self.tets[tet_mask])
        local = -np.ones(self.n_vertices, dtype=np.int64)
        local[used] = np.arange(len(used))
        tri_mask = np.all(local[self.btris] >= 0, axis=1)
        sub = Mesh(self.vertices[used], local[self.tets[tet_mask]], self.regions[tet_mask],
                   local[self.btris[tri_mask]], self.btri_tags[tri_mask])
        return SubMesh(sub, used, np.flatnonzero(tet_mask))

    def tagged_vertices(self, tag) -> np.ndarray:
        return np.unique(self.btris[self.btri_tags == int(tag)])


@dataclass(frozen=True, eq=False)
class SubMesh:
    """Region-restricted view with local numbering and the local-to-global maps."""
    mesh: Mesh
    global_vertices: np.ndarray
    global_tets: np.ndarray


@dataclass(frozen=True)
class InterfaceMap:
    pairs: np.ndarray = field(repr=False)  # (n, 2): fluid vertex id, structure vertex id

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def fluid(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def structure(self) -> np.ndarray:
        return self.pairs[:, 1]

    def inverse(self) -> "InterfaceMap":
        p = self.pairs[:, ::-1]
        return InterfaceMap(p[np.argsort(p[:, 0], kind="stable")])


def tet_volumes(x: np.ndarray, tets: np.ndarray) -> np.ndarray:
    e = x[tets[:, 1:]] - x[tets[:, :1]]
    return np.linalg.det(e) / 6.0


def equal_area_factor(n_circ: int) -> float:
    """Radius scale making a regular n-gon enclose the area of the unit circle."""
    return float(np.sqrt(2.0 * np.pi / (n_circ * np.sin(2.0 * np.pi / n_circ))))


# Vertex permutations of a prism (bottom 0,1,2; top 3,4,5 above them) that move
# vertex i to slot 0 while keeping the prism structure.
_PRISM_ROT = np.array([
    [0, 1, 2, 3, 4, 5],
    [1, 2, 0, 4, 5, 3],
    [2, 0, 1, 5, 3, 4],
    [3, 5, 4, 0, 2, 1],
    [4, 3, 5, 1, 0, 2],
    [5, 4, 3, 2, 1, 0],
])


def split_prisms(prisms: np.ndarray) -> np.ndarray:
    """Split prisms into 3 tets each, choosing every quad diagonal through the
    face's smallest global vertex id so neighbouring prisms stay conforming."""
    prisms = np.asarray(prisms)
    rot = _PRISM_ROT[np.argmin(prisms, axis=1)]
    v = np.take_along_axis(prisms, rot, axis=1)
    first = np.minimum(v[:, 1], v[:, 5]) < np.minimum(v[:, 2], v[:, 4])
    t = np.empty((len(v), 3, 4), dtype=np.int64)
    a = v[first]
    t[first] = np.stack([a[:, [0, 1, 2, 5]], a[:, [0, 1, 5, 4]], a[:, [0, 4, 5, 3]]], axis=1)
    b = v[~first]
    t[~first] = np.stack([b[:, [0, 1, 2, 4]], b[:, [0, 4, 2, 5]], b[:, [0, 4, 5, 3]]], axis=1)
    return t.reshape(-1, 4)


def _orient(x, tets):
    tets = tets.copy()
    neg = tet_volumes(x, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def _ring_tris(inner, outer):
    """Triangulate the band between two rings of equal length (closed loop)."""
    n = len(inner)
    k = np.arange(n)
    kp = (k + 1) % n
    t1 = np.stack([inner[k], outer[k], outer[kp]], axis=1)
    t2 = np.stack([inner[k], outer[kp], inner[kp]], axis=1)
    return np.concatenate([t1, t2])


def generate_tube_mesh(radius=1.43, length=18.0, media_thickness=0.26, adventitia_thickness=0.13,
                       n_axial=36, n_circ=24, n_radial_fluid=2, n_radial_layer=2) -> Mesh:
    """Structured cylinder (fluid) inside a two-layer annulus (media, adventitia).

    Every cross-section triangle is extruded to a prism per axial interval and
    split into three tets.  Rings are placed on equal-area polygons so that the
    discrete region volumes match the analytic cylinder/annulus volumes.
    """
    if min(radius, length, media_thickness, adventitia_thickness) <= 0:
        raise MeshError("all tube dimensions must be positive")
    if n_circ < 8 or n_axial < 4 or n_radial_fluid < 1 or n_radial_layer < 1:
        raise MeshError("need n_circ >= 8, n_axial >= 4 and at least one radial layer per region")

    scale = equal_area_factor(n_circ)
    theta = 2.0 * np.pi * np.arange(n_circ) / n_circ
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1) * scale

    # fluid cross-section: centre + n_radial_fluid rings
    f_pts = [np.zeros((1, 2))]
    f_pts += [ring * radius * j / n_radial_fluid for j in range(1, n_radial_fluid + 1)]
    f_pts = np.concatenate(f_pts)
    f_ring = [np.array([0])] + [1 + (j - 1) * n_circ + np.arange(n_circ) for j in range(1, n_radial_fluid + 1)]
    k = np.arange(n_circ)
    f_tris = [np.stack([np.zeros(n_circ, dtype=int), f_ring[1][k], f_ring[1][(k + 1) % n_circ]], axis=1)]
    f_tris += [_ring_tris(f_ring[j], f_ring[j + 1]) for j in range(1, n_radial_fluid)]
    f_tris = np.concatenate(f_tris)

    # structure cross-section: 2*n_radial_layer bands, media first
    radii = [radius + media_thickness * i / n_radial_layer for i in range(n_radial_layer + 1)]
    radii += [radius + media_thickness + adventitia_thickness * i / n_radial_layer
              for i in range(1, n_radial_layer + 1)]
    s_pts = np.concatenate([ring * r for r in radii])
    s_ring = [i * n_circ + np.arange(n_circ) for i in range(len(radii))]
    s_tris, s_reg = [], []
    for i in range(len(radii) - 1):
        t = _ring_tris(s_ring[i], s_ring[i + 1])
        s_tris.append(t)
        s_reg.append(np.full(len(t), Region.MEDIA if i < n_radial_layer else Region.ADVENTITIA))
    s_tris = np.concatenate(s_tris)
    s_reg = np.concatenate(s_reg)

    z = length * np.arange(n_axial + 1) / n_axial
    nf2, ns2 = len(f_pts), len(s_pts)
    n_fluid = nf2 * (n_axial + 1)
    verts = np.concatenate([
        np.concatenate([np.column_stack([f_pts, np.full(nf2, zl)]) for zl in z]),
        np.concatenate([np.column_stack([s_pts, np.full(ns2, zl)]) for zl in z]),
    ])

    def extrude(tris, n2, offset):
        lay = np.arange(n_axial)[:, None, None] * n2 + offset
        bot = tris[None] + lay
        return np.concatenate([bot, bot + n2], axis=2).reshape(-1, 6)

    f_tets = split_prisms(extrude(f_tris, nf2, 0))
    s_tets = split_prisms(extrude(s_tris, ns2, n_fluid))
    s_tet_reg = np.repeat(np.tile(s_reg, n_axial), 3)
    tets = _orient(verts, np.concatenate([f_tets, s_tets]))
    regions = np.concatenate([np.full(len(f_tets), Region.FLUID), s_tet_reg])

    vol = tet_volumes(verts, tets)
    if np.any(vol <= 1e-14 * length * radius ** 2):
        raise MeshError("parameters produce degenerate (zero-volume) tets")

    outer = (radius + media_thickness + adventitia_thickness) * scale
    btris, tags = _classify_boundary(verts, tets, regions, length, radius * scale, outer)
    return Mesh(verts, tets, regions, btris, tags)


def _boundary_faces(tets):
    """Faces (outward oriented) that belong to exactly one of the given tets."""
    faces = tets[:, TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[cnt[inv.ravel()] == 1]


def _classify_boundary(x, tets, regions, length, r_int, r_out):
    out_t, out_g = [], []
    h = 1e-9 * max(length, r_out)
    for is_fluid in (True, False):
        mask = regions == Region.FLUID if is_fluid else regions != Region.FLUID
        faces = _boundary_faces(tets[mask])
        pz = x[faces][:, :, 2]
        pr = np.hypot(x[faces][:, :, 0], x[faces][:, :, 1])
        at0 = np.all(np.abs(pz) < h, axis=1)
        atL = np.all(np.abs(pz - length) < h, axis=1)
        tag = np.full(len(faces), -1)
        if is_fluid:
            tag[at0] = BoundaryTag.INLET
            tag[atL] = BoundaryTag.OUTLET
            tag[~(at0 | atL)] = BoundaryTag.INTERFACE
        else:
            tag[at0 | atL] = BoundaryTag.SOLID_ENDS
            lateral = ~(at0 | atL)
            inner = lateral & (np.max(np.abs(pr - r_int), axis=1) < 1e-9 * r_out)
            tag[inner] = BoundaryTag.INTERFACE
            tag[lateral & ~inner] = BoundaryTag.OUTER_WALL
        out_t.append(faces)
        out_g.append(tag)
    return np.concatenate(out_t), np.concatenate(out_g)


# ---------------------------------------------------------------------------
# validation

def check_mesh(mesh: Mesh) -> None:
    """Raise MeshError naming the first failing invariant."""
    n = mesh.n_vertices
    if mesh.tets.size and (mesh.tets.min() < 0 or mesh.tets.max() >= n):
        raise MeshError("tet vertex ids: out of range")
    if mesh.btris.size and (mesh.btris.min() < 0 or mesh.btris.max() >= n):
        raise MeshError("boundary triangle vertex ids: out of range")
    if not np.all(np.isin(mesh.regions, [r.value for r in Region])):
        raise MeshError("region tags: unknown region")
    if not np.all(np.isin(mesh.btri_tags, [t.value for t in BoundaryTag])):
        raise MeshError("boundary tags: unknown tag")
    vol = mesh.signed_volumes()
    if np.any(vol <= 0):
        raise MeshError(f"orientation: tet {int(np.argmin(vol))} has non-positive volume")

    faces = np.sort(mesh.tets[:, TET_FACES].reshape(-1, 3), axis=1)
    face_tet = np.repeat(np.arange(mesh.n_tets), 4)
    order = np.lexsort(faces.T[::-1])
    faces, face_tet = faces[order], face_tet[order]
    keys = np.sort(mesh.btris, axis=1)
    lo = _searchsorted_rows(faces, keys, "left")
    hi = _searchsorted_rows(faces, keys, "right")
    count = hi - lo
    if np.any(count != 1):
        i = int(np.flatnonzero(count != 1)[0])
        raise MeshError(f"boundary faces: triangle {i} is a face of {int(count[i])} tets (expected 1)")

    owner = mesh.regions[face_tet[lo]]
    itf = mesh.btri_tags == BoundaryTag.INTERFACE
    if np.any(itf):
        nf = int(np.sum(itf & (owner == Region.FLUID)))
        ns = int(np.sum(itf & (owner != Region.FLUID)))
        if nf != ns:
            raise MeshError(f"interface: {nf} fluid-side vs {ns} structure-side triangles")
        build_interface_map(mesh)
        present = set(np.unique(mesh.regions).tolist())
        if Region.MEDIA in present and not np.any(itf & (owner == Region.MEDIA)):
            raise MeshError("region adjacency: no MEDIA tet touches the interface")
    wall = mesh.btri_tags == BoundaryTag.OUTER_WALL
    if np.any(wall) and Region.ADVENTITIA in set(np.unique(mesh.regions).tolist()):
        if not np.any(wall & (owner == Region.ADVENTITIA)):
            raise MeshError("region adjacency: no ADVENTITIA tet touches the outer wall")


def _searchsorted_rows(sorted_rows, keys, side):
    a = sorted_rows.astype(np.int64)
    m = int(max(a.max(initial=0), keys.max(initial=0))) + 1
    code = (a[:, 0] * m + a[:, 1]) * m + a[:, 2]
    kc = (keys[:, 0] * m + keys[:, 1]) * m + keys[:, 2]
    return np.searchsorted(code, kc, side=side)


def interface_vertices(mesh: Mesh):
    """Fluid-side and structure-side vertex ids on INTERFACE triangles."""
    tris = mesh.btris[mesh.btri_tags == BoundaryTag.INTERFACE]
    fluid_v = np.zeros(mesh.n_vertices, dtype=bool)
    fluid_v[mesh.tets[mesh.regions == Region.FLUID].ravel()] = True
    v = np.unique(tris)
    return v[fluid_v[v]], v[~fluid_v[v]]


def build_interface_map(mesh: Mesh, tol: float = COORD_TOL) -> InterfaceMap:
    """Pair fluid and structure interface vertices with coincident coordinates."""
    fv, sv = interface_vertices(mesh)
    xf, xs = mesh.vertices[fv], mesh.vertices[sv]
    from scipy.spatial import cKDTree

    tree = cKDTree(xs)
    dist, idx = tree.query(xf, k=1) if len(xs) else (np.full(len(xf), np.inf), np.zeros(len(xf), int))
    bad = dist > tol
    if np.any(bad) or len(fv) != len(sv):
        missing_f = xf[bad]
        matched = np.zeros(len(sv), dtype=bool)
        matched[idx[~bad]] = True
        missing_s = xs[~matched]
        pts = "; ".join(f"({p[0]:.9g}, {p[1]:.9g}, {p[2]:.9g})" for p in np.concatenate([missing_f, missing_s])[:5])
        raise MeshError(f"interface: {int(bad.sum()) + int((~matched).sum())} unmatched vertices, e.g. {pts}")
    if len(np.unique(idx)) != len(idx):
        raise MeshError("interface: fluid vertices map to the same structure vertex")
    return InterfaceMap(np.column_stack([fv, sv[idx]]))


def min_quality(mesh: Mesh) -> float:
    """Smallest normalized radius ratio 3*r_in/r_circ (1 for a regular tet)."""
    x = mesh.vertices[mesh.tets]
    vol = np.abs(tet_volumes(mesh.vertices, mesh.tets))
    area = np.zeros(mesh.n_tets)
    for f in TET_FACES:
        a, b, c = x[:, f[0]], x[:, f[1]], x[:, f[2]]
        area += 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    r_in = 3.0 * vol / area
    # circumcentre from |x - c|^2 equal for the four vertices
    e = x[:, 1:] - x[:, :1]
    rhs = 0.5 * np.sum(e * e, axis=2)
    cc = np.linalg.solve(e, rhs[..., None])[..., 0]
    r_circ = np.linalg.norm(cc, axis=1)
    return float(np.min(3.0 * r_in / r_circ))


# ---------------------------------------------------------------------------
# file format

_REGION_NAMES = {r: r.name.lower() for r in Region}
_TAG_NAMES = {t: t.name.lower() for t in BoundaryTag}
_REGION_BY_NAME = {v: k for k, v in _REGION_NAMES.items()}
_TAG_BY_NAME = {v: k for k, v in _TAG_NAMES.items()}


def save_mesh(mesh: Mesh, path) -> None:
    lines = ["fsimesh 1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines.append(f"tets {mesh.n_tets}")
    lines += [f"{a} {b} {c} {d} {_REGION_NAMES[Region(r)]}"
              for (a, b, c, d), r in zip(mesh.tets.tolist(), mesh.regions.tolist())]
    lines.append(f"btris {len(mesh.btris)}")
    lines += [f"{a} {b} {c} {_TAG_NAMES[BoundaryTag(t)]}"
              for (a, b, c), t in zip(mesh.btris.tolist(), mesh.btri_tags.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, validate: bool = True) -> Mesh:
    text = Path(path).read_text().splitlines()
    pos = 0

    def fail(msg):
        raise MeshError(f"{path}:{pos + 1}: {msg}")

    def next_line():
        nonlocal pos
        while pos < len(text) and not text[pos].strip():
            pos += 1
        if pos >= len(text):
            fail("unexpected end of file")
        line = text[pos].split()
        return line

    def section(name):
        nonlocal pos
        words = next_line()
        if len(words) != 2 or words[0] != name or not words[1].isdigit():
            fail(f"expected '{name} <count>'")
        pos += 1
        return int(words[1])

    words = next_line()
    if words != ["fsimesh", "1"]:
        fail("expected header 'fsimesh 1'")
    pos += 1

    nv = section("vertices")
    verts = np.empty((nv, 3))
    for i in range(nv):
        words = next_line()
        try:
            if len(words) != 3:
                raise ValueError
            verts[i] = [float(w) for w in words]
        except ValueError:
            fail("expected three coordinates")
        pos += 1

    def ids(words, count):
        try:
            v = [int(w) for w in words[:count]]
        except ValueError:
            fail("vertex ids must be integers")
        if min(v) < 0 or max(v) >= nv:
            fail(f"vertex id out of range (have {nv} vertices)")
        return v

    nt = section("tets")
    tets = np.empty((nt, 4), dtype=np.int64)
    regions = np.empty(nt, dtype=np.int64)
    for i in range(nt):
        words = next_line()
        if len(words) != 5:
            fail("expected 'v0 v1 v2 v3 region'")
        tets[i] = ids(words, 4)
        if words[4] not in _REGION_BY_NAME:
            fail(f"unknown region '{words[4]}'")
        regions[i] = _REGION_BY_NAME[words[4]]
        pos += 1

    nb = section("btris")
    btris = np.empty((nb, 3), dtype=np.int64)
    tags = np.empty(nb, dtype=np.int64)
    for i in range(nb):
        words = next_line()
        if len(words) != 4:
            fail("expected 'v0 v1 v2 tag'")
        btris[i] = ids(words, 3)
        if words[3] not in _TAG_BY_NAME:
            fail(f"unknown boundary tag '{words[3]}'")
        tags[i] = _TAG_BY_NAME[words[3]]
        pos += 1

    mesh = Mesh(verts, tets, regions, btris, tags)
    if validate:
        check_mesh(mesh)
    return mesh
