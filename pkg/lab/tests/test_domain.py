"""
CylinderLab Domain Tests
=========================
Meshes, boundary classes, P1 fields, region integrals and the transfers
between cross-section and cylinder meshes.
"""

import math

import pytest
import numpy as np
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.schemas import (
    BoundaryClass,
    ConstraintTag,
    CrossSection,
    CylinderSpec,
    IntegrandKind,
    MeshError,
    RegionKind,
    SliceSpec,
    SourceForm,
    SourceTerm,
)
from src.integrand import builtin_integrand
from src import domain


# ============================================================
# TEST FIXTURES
# ============================================================

@pytest.fixture
def strip_mesh():
    """(-2, 2) x (0, 1) at h = 0.5: 9 planes of 3 nodes."""
    return domain.build_cylinder_mesh(CylinderSpec(ell=2.0, omega2=CrossSection.interval()), 0.5)


@pytest.fixture
def box_mesh():
    """(-2, 2) x (0, 1)^2 at h = 0.5."""
    omega2 = CrossSection.rectangle(0.0, 1.0, 0.0, 1.0)
    return domain.build_cylinder_mesh(CylinderSpec(ell=2.0, omega2=omega2), 0.5)


# ============================================================
# SCHEMA VALIDATION TESTS
# ============================================================

class TestGeometryValidation:

    def test_degenerate_cross_section(self):
        """Intervals without positive length should fail."""
        with pytest.raises(MeshError, match="no positive length"):
            CrossSection.interval(1.0, 1.0)

    def test_cylinder_needs_ell_above_one(self):
        """Cylinders need ell > 1."""
        with pytest.raises(ValueError, match="ell must be > 1"):
            CylinderSpec(ell=1.0, omega2=CrossSection.interval())

    def test_slab_needs_increasing_bounds(self):
        """Slabs need s < t."""
        with pytest.raises(ValueError, match="s < t"):
            SliceSpec(1.0, 1.0)

    def test_collar_allows_centre_plane(self):
        """Collar at the centre plane is allowed."""
        collar = SliceSpec.collar_of(0.0)
        assert collar.s == collar.t == 0.0

    def test_nonpositive_h(self):
        """Mesh size must be positive."""
        with pytest.raises(MeshError, match="h must be"):
            domain.x1_planes(2.0, 0.0)


# ============================================================
# MESH TESTS
# ============================================================

class TestMeshes:

    def test_planes_contain_half_and_centre(self):
        """Grid planes include x1 = 0 and x1 = +-ell/2."""
        planes = domain.x1_planes(3.0, 0.4)
        assert len(planes) == 17
        assert planes[0] == -3.0 and planes[-1] == 3.0
        assert -1.5 in planes and 0.0 in planes and 1.5 in planes

    def test_strip_counts(self, strip_mesh):
        """Node and element counts on a strip."""
        assert strip_mesh.dim == 2
        assert strip_mesh.n_planes == 9
        assert strip_mesh.n_nodes == 27
        assert strip_mesh.n_elements == 8 * 2 * 2
        assert strip_mesh.volumes.sum() == pytest.approx(4.0)

    def test_box_counts(self, box_mesh):
        """Node and element counts on a box."""
        assert box_mesh.dim == 3
        assert box_mesh.n_nodes == 81
        assert box_mesh.n_elements == 8 * 2 * 2 * 6
        assert box_mesh.volumes.sum() == pytest.approx(4.0)

    def test_boundary_classes(self, strip_mesh):
        """Nodes are classified interior, lateral or end."""
        classes = strip_mesh.boundary_class
        assert np.sum(classes == BoundaryClass.END) == 6
        assert np.sum(classes == BoundaryClass.LATERAL) == 14
        assert np.sum(classes == BoundaryClass.INTERIOR) == 7
        # end faces win over the lateral boundary at the corners
        assert classes[0] == BoundaryClass.END

    def test_plane_major_numbering(self, strip_mesh):
        """Nodes are numbered plane by plane in x1."""
        nodes = strip_mesh.plane_nodes(-1)
        np.testing.assert_array_equal(nodes, [24, 25, 26])
        assert np.all(strip_mesh.nodes[nodes, 0] == 2.0)

    def test_gradient_of_linear_function_is_exact(self, box_mesh):
        """P1 gradient reproduces linear functions."""
        u = domain.interpolate(box_mesh, lambda X: 2 * X[:, 0] + 3 * X[:, 1] - X[:, 2])
        grads = box_mesh.element_gradients(u.values)
        np.testing.assert_allclose(grads, np.tile([2.0, 3.0, -1.0], (box_mesh.n_elements, 1)), atol=1e-12)

    def test_quadrature_weights(self, box_mesh):
        """Lumped and consistent mass weights add up to the volume."""
        assert box_mesh.lumped_weights.sum() == pytest.approx(4.0)
        assert box_mesh.mass.sum() == pytest.approx(4.0)
        np.testing.assert_allclose(box_mesh.stiffness @ np.ones(box_mesh.n_nodes), 0.0, atol=1e-12)

    def test_interval_mesh(self):
        """Interval mesh has end nodes and no lateral boundary."""
        mesh = domain.build_interval_mesh(1.0, 0.5)
        assert mesh.n_nodes == 5
        assert mesh.boundary_class[0] == BoundaryClass.END
        assert mesh.boundary_class[-1] == BoundaryClass.END
        assert not mesh.lateral_mask.any()


# ============================================================
# FIELD TESTS
# ============================================================

class TestFields:

    def test_dirichlet_violation_rejected(self, strip_mesh):
        """Nonzero boundary values should fail for Dirichlet fields."""
        with pytest.raises(ValueError, match="nonzero on the boundary"):
            domain.Field(strip_mesh, np.ones(strip_mesh.n_nodes), ConstraintTag.DIRICHLET_ALL)

    def test_tied_ends_violation_rejected(self, strip_mesh):
        """Unequal end faces should fail for tied fields."""
        values = np.zeros(strip_mesh.n_nodes)
        values[strip_mesh.plane_nodes(0)[1]] = 1.0
        with pytest.raises(ValueError, match="differs across the end faces"):
            domain.Field(strip_mesh, values, ConstraintTag.TIED_ENDS)

    def test_values_are_read_only(self, strip_mesh):
        """Field values cannot be modified in place."""
        u = domain.zero_field(strip_mesh)
        with pytest.raises(ValueError):
            u.values[0] = 1.0

    def test_wrong_length_rejected(self, strip_mesh):
        """Value arrays must match the node count."""
        with pytest.raises(MeshError, match="nodal values"):
            domain.Field(strip_mesh, np.zeros(3))


# ============================================================
# INTEGRAL TESTS
# ============================================================

class TestIntegrals:

    def test_integrate_constant_source(self, strip_mesh):
        """Constant source integrates to value times volume."""
        u = domain.interpolate(strip_mesh, lambda X: X[:, 1])
        assert domain.integrate_fu(u, SourceTerm.constant(1.0)) == pytest.approx(2.0)

    def test_integrate_polynomial_source_exact(self, strip_mesh):
        """Linear source against a linear field is integrated exactly."""
        u = domain.interpolate(strip_mesh, lambda X: X[:, 1])
        f = SourceTerm(SourceForm.POLYNOMIAL, coefficients=(0.0, 1.0))
        # integral of x2 * x2 over (-2, 2) x (0, 1)
        assert domain.integrate_fu(u, f) == pytest.approx(4.0 / 3.0)

    def test_grad_norm_regions(self, strip_mesh):
        """Gradient norms restricted to regions."""
        u = domain.interpolate(strip_mesh, lambda X: X[:, 0])
        assert domain.grad_q_norm(u, 2.0) == pytest.approx(4.0)
        assert domain.grad_q_norm(u, 3.0, RegionKind.HALF) == pytest.approx(2.0)
        assert domain.grad_q_norm(u, 2.0, SliceSpec(-1.0, 0.5)) == pytest.approx(1.5)

    def test_collar_volumes(self, strip_mesh):
        """Collars have unit length times the cross-section."""
        assert domain.region_volume(strip_mesh, SliceSpec.collar_of(0.0)) == pytest.approx(2.0)
        assert domain.region_volume(strip_mesh, SliceSpec.collar_of(1.0)) == pytest.approx(2.0)

    def test_region_energy_adds_up(self, strip_mesh):
        """Slab energies add up to the total energy."""
        F = builtin_integrand(IntegrandKind.POWER, q=2, dim=2)
        f = SourceTerm.constant(1.0)
        u = domain.interpolate(strip_mesh, lambda X: (4 - X[:, 0] ** 2) * X[:, 1] * (1 - X[:, 1]))
        left = domain.region_energy(u, F, f, SliceSpec(-2.0, 0.0))
        right = domain.region_energy(u, F, f, SliceSpec(0.0, 2.0))
        assert left + right == pytest.approx(domain.region_energy(u, F, f))

    def test_nodal_source_length_checked(self, strip_mesh):
        """Nodal sources must match the cross-section mesh."""
        f = SourceTerm(SourceForm.NODAL, samples=(1.0, 2.0))
        with pytest.raises(MeshError, match="samples"):
            domain.source_values(strip_mesh, f)

    def test_grad_norm_homogeneous(self, strip_mesh):
        """Scaling a field by 2 scales its gradient norm by 2**q."""
        u = domain.interpolate(strip_mesh, lambda X: np.sin(X[:, 0]) * X[:, 1] * (1 - X[:, 1]))
        for q in (2.0, 3.0, 4.0):
            assert domain.grad_q_norm(u.scaled(2.0), q) == pytest.approx(2.0 ** q * domain.grad_q_norm(u, q))

    def test_grad_norm_refinement_consistent(self):
        """Affine fields give the same gradient norm on every mesh."""
        spec = CylinderSpec(ell=2.0, omega2=CrossSection.interval())
        values = []
        for h in (0.5, 0.25, 0.125):
            mesh = domain.build_cylinder_mesh(spec, h)
            u = domain.interpolate(mesh, lambda X: X[:, 0] + 2.0 * X[:, 1])
            values.append(domain.grad_q_norm(u, 4.0, RegionKind.HALF))
        # |grad u|**4 = 25 on a half cylinder of volume 2
        np.testing.assert_allclose(values, 50.0, rtol=1e-12)

    def test_volumes_sum_to_domain(self, strip_mesh, box_mesh):
        """Element volumes add up to the cylinder volume."""
        assert strip_mesh.volumes.sum() == pytest.approx(4.0)
        assert box_mesh.volumes.sum() == pytest.approx(4.0)
        assert domain.region_volume(strip_mesh, RegionKind.HALF) == pytest.approx(2.0)

    def test_source_dual_norm_constant(self):
        """Constant f has norm |c| |omega2|**(1/q')."""
        cross = domain.build_cross_section_mesh(CrossSection.rectangle(0.0, 1.0, 0.0, 2.0), 0.5)
        # q = 4 gives q' = 4/3
        expected = 2.0 * 2.0 ** 0.75
        assert domain.source_dual_norm(cross, SourceTerm.constant(-2.0), 4.0) == pytest.approx(expected)
        nodal = SourceTerm(SourceForm.NODAL, samples=tuple([2.0] * cross.n_nodes))
        assert domain.source_dual_norm(cross, nodal, 4.0) == pytest.approx(expected)

    def test_source_dual_norm_linear(self):
        """Linear f with q = 2 is integrated exactly."""
        cross = domain.build_cross_section_mesh(CrossSection.interval(), 0.25)
        f = SourceTerm(SourceForm.POLYNOMIAL, coefficients=(0.0, 1.0))
        assert domain.source_dual_norm(cross, f, 2.0) == pytest.approx(math.sqrt(1.0 / 3.0), rel=1e-12)
        filled = domain.with_dual_norm(f, cross, 2.0)
        assert filled.q_dual_norm == pytest.approx(math.sqrt(1.0 / 3.0), rel=1e-12)
        assert filled.to_dict()["q_dual_norm"] == filled.q_dual_norm

    def test_source_dual_norm_needs_cross_section(self, strip_mesh):
        """Source norms are taken on the cross-section mesh only."""
        with pytest.raises(MeshError, match="cross-section"):
            domain.source_dual_norm(strip_mesh, SourceTerm.constant(1.0), 2.0)


# ============================================================
# TRANSFER TESTS
# ============================================================

class TestTransfers:

    def test_extension_is_tied(self, strip_mesh):
        """Extension in x1 gives a tied-ends field."""
        cross = strip_mesh.cross_section
        u = domain.Field(cross, np.array([0.0, 1.0, 0.0]), ConstraintTag.DIRICHLET_ALL)
        ext = domain.extend_in_x1(u, strip_mesh)
        assert ext.constraint == ConstraintTag.TIED_ENDS
        np.testing.assert_array_equal(domain.restrict_to_plane(ext, 4).values, u.values)

    def test_extension_needs_matching_grid(self, strip_mesh):
        """Extension onto a different cross-section grid should fail."""
        other = domain.build_cross_section_mesh(CrossSection.interval(), 0.25)
        with pytest.raises(MeshError, match="incompatible"):
            domain.extend_in_x1(domain.zero_field(other), strip_mesh)

    def test_embed_by_zero(self, strip_mesh):
        """Embedding by zero keeps values and pads with zeros."""
        longer = domain.build_cylinder_mesh(CylinderSpec(ell=3.0, omega2=CrossSection.interval()), 0.5)
        u = domain.interpolate(strip_mesh, lambda X: (4 - X[:, 0] ** 2) * X[:, 1] * (1 - X[:, 1]))
        embedded = domain.embed_by_zero(u, longer)
        assert embedded.values.sum() == pytest.approx(u.values.sum())
        assert np.all(embedded.values[longer.nodes[:, 0] < -2.0] == 0.0)

    def test_poincare_constant_interval(self):
        """Poincare constant on the unit interval is close to 1/pi."""
        estimate = domain.poincare_constant(CrossSection.interval(), 1.0 / 32.0)
        assert estimate.exact
        assert estimate.value == pytest.approx(1.0 / math.pi, rel=1e-2)
