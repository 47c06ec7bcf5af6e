"""
CylinderLab Domain Module
==========================
Simplicial meshes of the cylinder (-ell, ell) x omega2, of the cross-section
omega2 and of 1-D intervals, and piecewise-linear fields on them.

Meshes are tensor grids split into simplices by Kuhn subdivision (two
triangles per rectangle, six tetrahedra per box). Nodes are numbered
plane-major: node index = plane * plane_size + cross-section index, so the
x1 planes of a cylinder mesh are contiguous blocks.
"""

import itertools
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh

from .integrand import evaluate_many
from .schemas import (
    BoundaryClass,
    ConstraintTag,
    CrossSection,
    CylinderSpec,
    IntegrandSpec,
    MeshError,
    Region,
    RegionKind,
    SliceSpec,
    SourceForm,
    SourceTerm,
)

logger = logging.getLogger(__name__)

# Relative distance below which a region bound counts as lying on a grid plane
SNAP_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Conforming simplicial mesh.

    nodes: (N, d) coordinates; elements: (m, d+1) vertex indices;
    boundary_class: (N,) BoundaryClass codes; lateral_mask: (N,) nodes on the
    lateral boundary (ell*omega1 x boundary of omega2, or the whole boundary of
    a cross-section mesh). planes / plane_size describe the x1 planes of
    cylinder and interval meshes; cross_section is the omega2 mesh every plane
    of a cylinder mesh copies.
    """
    nodes: np.ndarray
    elements: np.ndarray
    boundary_class: np.ndarray
    lateral_mask: np.ndarray
    h: float
    planes: Optional[np.ndarray] = None
    plane_size: int = 0
    cross_section: Optional["Mesh"] = None
    ell: Optional[float] = None

    def __post_init__(self):
        for name in ("nodes", "elements", "boundary_class", "lateral_mask"):
            getattr(self, name).setflags(write=False)
        if np.any(self.volumes <= 0):
            raise MeshError("mesh has degenerate elements")

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_planes(self) -> int:
        return 0 if self.planes is None else len(self.planes)

    @cached_property
    def _local_gradients(self) -> Tuple[np.ndarray, np.ndarray]:
        X = self.nodes[self.elements]
        edges = X[:, 1:, :] - X[:, :1, :]
        # grad u = edges^{-1} (u_k - u_0)
        inverse = np.linalg.inv(edges)
        d = self.dim
        diff = np.hstack([-np.ones((d, 1)), np.eye(d)])
        volumes = np.abs(np.linalg.det(edges)) / math.factorial(d)
        return inverse @ diff, volumes

    @cached_property
    def volumes(self) -> np.ndarray:
        vol = self._local_gradients[1]
        vol.setflags(write=False)
        return vol

    @cached_property
    def gradient_operator(self) -> sp.csr_matrix:
        """Sparse (m*d, N) operator mapping nodal values to stacked element gradients."""
        local = self._local_gradients[0]
        m, d = self.n_elements, self.dim
        rows = np.repeat(np.arange(m * d), d + 1)
        cols = np.repeat(self.elements, d, axis=0).ravel()
        data = local.reshape(m * d, d + 1).ravel()
        return sp.coo_matrix((data, (rows, cols)), shape=(m * d, self.n_nodes)).tocsr()

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def lumped_weights(self) -> np.ndarray:
        """Vertex quadrature weights sum_{T containing i} |T|/(d+1)."""
        w = np.zeros(self.n_nodes)
        share = self.volumes / (self.dim + 1)
        for j in range(self.dim + 1):
            np.add.at(w, self.elements[:, j], share)
        return w

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Laplacian stiffness matrix G^T diag(|T|) G."""
        G = self.gradient_operator
        W = sp.diags(np.repeat(self.volumes, self.dim))
        return (G.T @ W @ G).tocsr()

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """Consistent P1 mass matrix."""
        d = self.dim
        coeff = self.volumes / ((d + 1) * (d + 2))
        rows, cols, data = [], [], []
        for a in range(d + 1):
            for b in range(d + 1):
                rows.append(self.elements[:, a])
                cols.append(self.elements[:, b])
                data.append(coeff * (2.0 if a == b else 1.0))
        return sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_nodes, self.n_nodes),
        ).tocsr()

    def element_gradients(self, values: np.ndarray) -> np.ndarray:
        """(m, d) gradients of the P1 interpolant of nodal values."""
        return (self.gradient_operator @ values).reshape(self.n_elements, self.dim)

    def cross_coordinates(self) -> np.ndarray:
        """X2 coordinates of every node (the whole node array for omega2 meshes)."""
        if self.cross_section is not None:
            return self.nodes[:, 1:]
        return self.nodes

    def plane_nodes(self, i: int) -> np.ndarray:
        if self.planes is None:
            raise MeshError("mesh has no x1 planes")
        if not -self.n_planes <= i < self.n_planes:
            raise IndexError(f"plane {i} out of range for {self.n_planes} planes")
        i %= self.n_planes
        return np.arange(i * self.plane_size, (i + 1) * self.plane_size)


def _kuhn_templates(dim: int) -> np.ndarray:
    """(dim!, dim+1, dim) corner offsets of the Kuhn simplices of the unit box."""
    templates = []
    for perm in itertools.permutations(range(dim)):
        corner = np.zeros(dim, dtype=int)
        path = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            path.append(corner.copy())
        templates.append(path)
    return np.array(templates)


def _tensor_grid(axes: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes (first axis slowest) and Kuhn elements of a tensor grid."""
    shape = tuple(len(a) for a in axes)
    dim = len(axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in mesh], axis=1)
    lower = np.indices(tuple(s - 1 for s in shape)).reshape(dim, -1).T
    elements = []
    for template in _kuhn_templates(dim):
        corners = lower[:, None, :] + template[None, :, :]
        elements.append(np.ravel_multi_index(tuple(corners.transpose(2, 0, 1)), shape))
    # cell-major element order
    elements = np.stack(elements, axis=1).reshape(-1, dim + 1)
    return nodes, elements


def _cell_count(length: float, h: float) -> int:
    return max(1, math.ceil(length / h - 1e-9))


def _check_h(h: float) -> None:
    if not (h > 0 and math.isfinite(h)):
        raise MeshError(f"h must be a positive finite number, got {h}")


def _cross_axes(omega2: CrossSection, h: float):
    return [np.linspace(a, b, _cell_count(b - a, h) + 1) for a, b in omega2.bounds]


def _on_axis_boundary(index_grid: np.ndarray, counts: Sequence[int]) -> np.ndarray:
    mask = np.zeros(index_grid.shape[1], dtype=bool)
    for axis, n in enumerate(counts):
        mask |= (index_grid[axis] == 0) | (index_grid[axis] == n - 1)
    return mask


def build_cross_section_mesh(omega2: CrossSection, h: float) -> Mesh:
    """Mesh of omega2; every boundary node is Dirichlet (class lateral)."""
    _check_h(h)
    axes = _cross_axes(omega2, h)
    nodes, elements = _tensor_grid(axes)
    counts = [len(a) for a in axes]
    lateral = _on_axis_boundary(np.indices(counts).reshape(len(counts), -1), counts)
    classes = np.where(lateral, BoundaryClass.LATERAL, BoundaryClass.INTERIOR).astype(np.int8)
    return Mesh(nodes=nodes, elements=elements, boundary_class=classes, lateral_mask=lateral, h=h)


def x1_planes(ell: float, h: float) -> np.ndarray:
    """Grid planes of (-ell, ell); the cell count is a multiple of 4 so +-ell/2 are planes."""
    _check_h(h)
    cells = 4 * max(1, math.ceil(ell / (2.0 * h) - 1e-9))
    planes = np.linspace(-ell, ell, cells + 1)
    planes[cells // 4] = -ell / 2.0
    planes[cells // 2] = 0.0
    planes[3 * cells // 4] = ell / 2.0
    return planes


def build_cylinder_mesh(spec: CylinderSpec, h: float) -> Mesh:
    """
    Mesh of (-ell, ell) x omega2 at target edge length h.

    Boundary classes: nodes on the end faces x1 = +-ell are END (including the
    edges they share with the lateral boundary), remaining nodes on
    ell*omega1 x boundary(omega2) are LATERAL.
    """
    cross = build_cross_section_mesh(spec.omega2, h)
    planes = x1_planes(spec.ell, h)
    axes = [planes, *_cross_axes(spec.omega2, h)]
    nodes, elements = _tensor_grid(axes)

    n_planes, P = len(planes), cross.n_nodes
    plane_index = np.repeat(np.arange(n_planes), P)
    end = (plane_index == 0) | (plane_index == n_planes - 1)
    lateral = np.tile(cross.lateral_mask, n_planes)
    classes = np.full(nodes.shape[0], BoundaryClass.INTERIOR, dtype=np.int8)
    classes[lateral] = BoundaryClass.LATERAL
    classes[end] = BoundaryClass.END

    mesh = Mesh(
        nodes=nodes,
        elements=elements,
        boundary_class=classes,
        lateral_mask=lateral,
        h=h,
        planes=planes,
        plane_size=P,
        cross_section=cross,
        ell=spec.ell,
    )
    logger.debug(f"Cylinder mesh ell={spec.ell} h={h}: {mesh.n_nodes} nodes, {mesh.n_elements} elements")
    return mesh


def build_interval_mesh(ell: float, h: float) -> Mesh:
    """1-D mesh of (-ell, ell); endpoints are class END."""
    if not ell > 0:
        raise MeshError(f"ell must be > 0, got {ell}")
    planes = x1_planes(ell, h)
    nodes, elements = _tensor_grid([planes])
    classes = np.full(len(planes), BoundaryClass.INTERIOR, dtype=np.int8)
    classes[[0, -1]] = BoundaryClass.END
    return Mesh(
        nodes=nodes,
        elements=elements,
        boundary_class=classes,
        lateral_mask=np.zeros(len(planes), dtype=bool),
        h=h,
        planes=planes,
        plane_size=1,
        ell=ell,
    )


@dataclass(frozen=True, eq=False)
class Field:
    """
    Nodal values of a P1 function with the constraint they satisfy.

    Constrained nodes satisfy their constraint exactly: zero on Dirichlet nodes,
    equal values across the end-face bijection for tied ends.
    """
    mesh: Mesh
    values: np.ndarray
    constraint: ConstraintTag = ConstraintTag.NONE

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.mesh.n_nodes,):
            raise MeshError(f"expected {self.mesh.n_nodes} nodal values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "constraint", ConstraintTag(self.constraint))
        self._check_constraint()

    def _check_constraint(self) -> None:
        tag, mesh, v = self.constraint, self.mesh, self.values
        if tag == ConstraintTag.DIRICHLET_ALL:
            if np.any(v[mesh.boundary_class != BoundaryClass.INTERIOR] != 0):
                raise ValueError("dirichlet-all field is nonzero on the boundary")
        elif tag in (ConstraintTag.LATERAL_ONLY, ConstraintTag.TIED_ENDS):
            if np.any(v[mesh.lateral_mask] != 0):
                raise ValueError(f"{tag.value} field is nonzero on the lateral boundary")
            if tag == ConstraintTag.TIED_ENDS:
                if mesh.planes is None:
                    raise ValueError("tied-ends requires a mesh with x1 planes")
                if np.any(v[mesh.plane_nodes(0)] != v[mesh.plane_nodes(-1)]):
                    raise ValueError("tied-ends field differs across the end faces")

    def with_values(self, values: np.ndarray, constraint: Optional[ConstraintTag] = None) -> "Field":
        return Field(self.mesh, values, self.constraint if constraint is None else constraint)

    def scaled(self, c: float) -> "Field":
        return Field(self.mesh, c * self.values, self.constraint)

    def difference(self, other: "Field") -> "Field":
        """Unconstrained field self - other on the same mesh."""
        if other.mesh is not self.mesh and other.mesh.n_nodes != self.mesh.n_nodes:
            raise MeshError("fields live on different meshes")
        return Field(self.mesh, self.values - other.values, ConstraintTag.NONE)


def zero_field(mesh: Mesh, constraint: ConstraintTag = ConstraintTag.NONE) -> Field:
    return Field(mesh, np.zeros(mesh.n_nodes), constraint)


def interpolate(mesh: Mesh, func, constraint: ConstraintTag = ConstraintTag.NONE) -> Field:
    """Nodal interpolant of func(coordinates (N, d)) -> (N,)."""
    return Field(mesh, np.asarray(func(mesh.nodes), dtype=float), constraint)


def _snap(mesh: Mesh, x: float) -> float:
    planes = mesh.planes
    snapped = float(planes[np.argmin(np.abs(planes - x))])
    if abs(snapped - x) > SNAP_RTOL * max(1.0, abs(x)):
        logger.warning(f"Region bound {x} is not on a grid plane; snapped to {snapped} (distance {abs(snapped - x):.3g})")
    return snapped


def element_mask(mesh: Mesh, region: Region = RegionKind.WHOLE) -> np.ndarray:
    """Elements lying inside a region of the x1 axis."""
    if region == RegionKind.WHOLE:
        return np.ones(mesh.n_elements, dtype=bool)
    if mesh.planes is None:
        raise MeshError("regions other than the whole domain need a mesh with x1 planes")
    c = mesh.centroids[:, 0]
    if region == RegionKind.HALF:
        half = mesh.ell / 2.0
        return (c > -half) & (c < half)
    if not isinstance(region, SliceSpec):
        raise ValueError(f"unknown region {region!r}")

    lo, hi = float(mesh.planes[0]), float(mesh.planes[-1])
    s, t = _snap(mesh, region.s), _snap(mesh, region.t)
    if not region.collar:
        return (c > s) & (c < t)
    left = _snap(mesh, max(region.s - 1.0, lo))
    right = _snap(mesh, min(region.t + 1.0, hi))
    return ((c > left) & (c < s)) | ((c > t) & (c < right))


def region_volume(mesh: Mesh, region: Region = RegionKind.WHOLE) -> float:
    return float(np.sum(mesh.volumes[element_mask(mesh, region)]))


def grad_q_norm(u: Field, q: float, region: Region = RegionKind.WHOLE) -> float:
    """Sum over elements in region of |T| |grad u|**q."""
    mesh = u.mesh
    mask = element_mask(mesh, region)
    grads = mesh.element_gradients(u.values)[mask]
    return float(np.sum(mesh.volumes[mask] * np.linalg.norm(grads, axis=1) ** q))


def source_values(mesh: Mesh, f: SourceTerm) -> np.ndarray:
    """Nodal values of f(X2) on any mesh (cylinder, cross-section or interval)."""
    if f.form == SourceForm.NODAL and mesh.cross_section is not None:
        return np.tile(f.evaluate(mesh.cross_section.nodes), mesh.n_planes)
    if mesh.cross_section is None and mesh.planes is not None:
        # interval meshes carry no cross-section variable
        return f.evaluate(np.zeros((mesh.n_nodes, 1)))
    return f.evaluate(mesh.cross_coordinates())



def _simplex_rule(d: int) -> np.ndarray:
    """Barycentric points of the symmetric d+1 point rule, exact for quadratics."""
    s = (d + 2 - math.sqrt(d + 2)) / ((d + 1) * (d + 2))
    bary = np.full((d + 1, d + 1), s)
    np.fill_diagonal(bary, 1.0 - d * s)
    return bary


def source_dual_norm(cross: Mesh, f: SourceTerm, q: float) -> float:
    """
    |f|_{q'} on the cross-section, (integral of |f|**q')**(1/q') with
    q' = q/(q-1). Nodal sources are integrated as their P1 interpolant.
    """
    if cross.planes is not None:
        raise MeshError("source norms are taken on a cross-section mesh")
    q_dual = q / (q - 1.0)
    bary = _simplex_rule(cross.dim)
    if f.form == SourceForm.NODAL:
        values = f.evaluate(cross.nodes)[cross.elements] @ bary.T
    else:
        points = np.einsum("kj,ejd->ekd", bary, cross.nodes[cross.elements])
        values = f.evaluate(points.reshape(-1, cross.dim)).reshape(cross.n_elements, -1)
    integral = float(np.sum(cross.volumes * np.mean(np.abs(values) ** q_dual, axis=1)))
    return integral ** (1.0 / q_dual)


def with_dual_norm(f: SourceTerm, cross: Mesh, q: float) -> SourceTerm:
    """Copy of f carrying its q'-norm on the cross-section."""
    return replace(f, q_dual_norm=source_dual_norm(cross, f, q))


def load_vector(mesh: Mesh, f_nodal: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    b with b . u = integral of f u for P1 f and u, element formula
    |T|/((d+1)(d+2)) (sum f * sum u + sum f_i u_i).
    """
    d = mesh.dim
    elements = mesh.elements if mask is None else mesh.elements[mask]
    vol = mesh.volumes if mask is None else mesh.volumes[mask]
    coeff = vol / ((d + 1) * (d + 2))
    fe = f_nodal[elements]
    total = fe.sum(axis=1)
    b = np.zeros(mesh.n_nodes)
    for j in range(d + 1):
        np.add.at(b, elements[:, j], coeff * (total + fe[:, j]))
    return b


def integrate_fu(u: Field, f: SourceTerm, region: Region = RegionKind.WHOLE) -> float:
    """Integral of f(X2) u(X) over region, exact for P1 u and P1 f."""
    if f.is_zero():
        return 0.0
    mesh = u.mesh
    b = load_vector(mesh, source_values(mesh, f), element_mask(mesh, region))
    return float(b @ u.values)


def region_energy(u: Field, F: IntegrandSpec, f: SourceTerm, region: Region = RegionKind.WHOLE) -> float:
    """Local energy sum_{T in R} |T| F(grad u) - integral over R of f u."""
    mesh = u.mesh
    mask = element_mask(mesh, region)
    grads = mesh.element_gradients(u.values)[mask]
    pad = F.dim - mesh.dim
    if pad < 0:
        raise ValueError(f"integrand dimension {F.dim} is smaller than mesh dimension {mesh.dim}")
    if pad:
        grads = np.hstack([np.zeros((grads.shape[0], pad)), grads])
    return float(np.sum(mesh.volumes[mask] * evaluate_many(F, grads))) - integrate_fu(u, f, region)


def _check_compatible(cross: Mesh, cyl_mesh: Mesh) -> None:
    if cyl_mesh.cross_section is None:
        raise MeshError("target mesh is not a cylinder mesh")
    ref = cyl_mesh.cross_section.nodes
    if ref.shape != cross.nodes.shape or not np.allclose(ref, cross.nodes, rtol=0.0, atol=1e-12):
        raise MeshError("cross-section grids are incompatible")


def extend_in_x1(u_cross: Field, cyl_mesh: Mesh) -> Field:
    """Copy a cross-section field onto every x1 plane of a cylinder mesh."""
    _check_compatible(u_cross.mesh, cyl_mesh)
    tag = ConstraintTag.TIED_ENDS if u_cross.constraint == ConstraintTag.DIRICHLET_ALL else ConstraintTag.NONE
    return Field(cyl_mesh, np.tile(u_cross.values, cyl_mesh.n_planes), tag)


def restrict_to_plane(u: Field, i: int) -> Field:
    """Values of a cylinder field on the i-th x1 plane, on the cross-section mesh."""
    mesh = u.mesh
    if mesh.cross_section is None:
        raise MeshError("restriction needs a cylinder mesh")
    values = u.values[mesh.plane_nodes(i)]
    laterally_zero = u.constraint in (
        ConstraintTag.DIRICHLET_ALL,
        ConstraintTag.TIED_ENDS,
        ConstraintTag.LATERAL_ONLY,
    )
    tag = ConstraintTag.DIRICHLET_ALL if laterally_zero else ConstraintTag.NONE
    return Field(mesh.cross_section, values, tag)


def embed_by_zero(u: Field, target: Mesh) -> Field:
    """Extend a cylinder field by 0 onto a longer cylinder mesh with the same spacing."""
    src = u.mesh
    if src.planes is None or target.planes is None:
        raise MeshError("embedding needs meshes with x1 planes")
    if src.plane_size != target.plane_size:
        raise MeshError("cross-section grids are incompatible")
    offset = int(np.argmin(np.abs(target.planes - src.planes[0])))
    stop = offset + src.n_planes
    if stop > target.n_planes or not np.allclose(
        target.planes[offset:stop], src.planes, rtol=0.0, atol=1e-9 * max(1.0, target.ell or 1.0)
    ):
        raise MeshError("x1 grids are incompatible")
    values = np.zeros(target.n_nodes)
    P = src.plane_size
    values[offset * P: stop * P] = u.values
    return Field(target, values, ConstraintTag.NONE)


@dataclass(frozen=True)
class PoincareEstimate:
    value: float
    q: float
    exact: bool
    note: str = ""


def poincare_constant(omega2: CrossSection, h: float, q: float = 2.0) -> PoincareEstimate:
    """
    Smallest lambda1 with |u|_q <= lambda1 |grad u|_q on the omega2 mesh.

    For q = 2 this is 1/sqrt(mu1) with mu1 the first Dirichlet eigenvalue of the
    discrete Laplacian. Otherwise the first eigenfunction's quotient is a lower
    estimate.
    """
    mesh = build_cross_section_mesh(omega2, h)
    free = np.flatnonzero(mesh.boundary_class == BoundaryClass.INTERIOR)
    if free.size == 0:
        raise MeshError("cross-section mesh has no interior nodes; refine h")
    K = mesh.stiffness[free][:, free]
    M = mesh.mass[free][:, free]
    if free.size <= 200:
        vals, vecs = eigh(K.toarray(), M.toarray())
    else:
        vals, vecs = eigsh(K.tocsc(), k=1, M=M.tocsc(), sigma=0.0, which="LM")
    mu1 = float(vals[0])
    if q == 2:
        return PoincareEstimate(value=1.0 / math.sqrt(mu1), q=q, exact=True)

    phi = np.zeros(mesh.n_nodes)
    phi[free] = vecs[:, 0]
    u = Field(mesh, phi)
    lq = float(np.sum(mesh.lumped_weights * np.abs(phi) ** q)) ** (1.0 / q)
    grad = grad_q_norm(u, q) ** (1.0 / q)
    return PoincareEstimate(
        value=lq / grad, q=q, exact=False, note="lower estimate from the first q = 2 eigenfunction"
    )
