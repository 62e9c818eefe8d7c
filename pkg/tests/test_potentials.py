import numpy as np
import pytest

from langevin_coupling.errors import InputError
from langevin_coupling.landscape.potentials import (
    AnnLoss,
    DoubleWell1D,
    InteractingParticles,
    LehmerQuadratic,
    Rosenbrock,
    build_ann_training_set,
    gradient,
    lehmer_matrix,
    least_eigenvalue,
    potential_from_dict,
    potential_kinds,
    potential_to_dict,
    value,
)


def _fd_gradient(spec, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = h
        g[j] = (spec.value(x + dx) - spec.value(x - dx)) / (2 * h)
    return g


class TestShapes:
    def test_single_point_gives_scalar_and_vector(self):
        dw = DoubleWell1D()
        assert value(dw, [0.0]) == 0.0
        assert gradient(dw, [0.0]).shape == (1,)
        assert gradient(dw, [0.0])[0] == pytest.approx(0.2)

    def test_stack_of_points(self):
        spec = InteractingParticles()
        pts = np.zeros((5, 3))
        assert spec.value(pts).shape == (5,)
        assert spec.gradient(pts).shape == (5, 3)

    def test_wrong_dimension(self):
        with pytest.raises(InputError):
            LehmerQuadratic(size=3).value(np.zeros(2))


class TestGradients:
    @pytest.mark.parametrize(
        "spec",
        [
            LehmerQuadratic(size=4),
            DoubleWell1D(),
            InteractingParticles(sigma_int=0.1),
            Rosenbrock(n=4),
        ],
        ids=lambda s: s.kind,
    )
    def test_matches_finite_differences(self, spec):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1.2, 1.2, spec.dimension)
        np.testing.assert_allclose(spec.gradient(x), _fd_gradient(spec, x), rtol=1e-5, atol=1e-6)

    def test_ann_matches_finite_differences(self):
        spec = AnnLoss(n1=4, n2=3, seed=0, m=20)
        x = np.random.default_rng(11).normal(0.0, 0.7, spec.dimension)
        np.testing.assert_allclose(spec.gradient(x), _fd_gradient(spec, x), rtol=1e-4, atol=1e-5)

    def test_ann_relu_derivative_at_zero_is_zero(self):
        spec = AnnLoss(n1=4, n2=3, seed=0, m=20)
        g = spec.gradient(np.zeros(spec.dimension))
        assert np.all(g[:-1] == 0.0)
        assert g[-1] == pytest.approx(-2.0 * spec.data.targets.sum())


class TestLehmer:
    def test_entries(self):
        a = lehmer_matrix(3)
        assert a[0, 2] == pytest.approx(1 / 3)
        assert a[1, 2] == pytest.approx(2 / 3)
        np.testing.assert_allclose(a, a.T)
        assert np.all(np.diag(a) == 1.0)

    @pytest.mark.parametrize("k", [2, 4, 6, 8])
    def test_least_eigenvalue(self, k):
        a = lehmer_matrix(k)
        assert least_eigenvalue(a) == pytest.approx(np.linalg.eigvalsh(a)[0], abs=1e-8)

    def test_least_eigenvalue_of_indefinite_matrix(self):
        assert least_eigenvalue(np.diag([-1.0, 2.0])) == pytest.approx(-1.0, abs=1e-8)

    def test_rejects_non_symmetric(self):
        with pytest.raises(InputError):
            least_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_value_is_half_quadratic_form(self):
        spec = LehmerQuadratic(size=2)
        x = np.array([1.0, -2.0])
        assert spec.value(x) == pytest.approx(0.5 * x @ lehmer_matrix(2) @ x)

    @pytest.mark.parametrize("k", [2, 5])
    def test_gradient_is_strongly_monotone(self, k):
        spec = LehmerQuadratic(size=k)
        lam = least_eigenvalue(lehmer_matrix(k))
        rng = np.random.default_rng(k)
        x = rng.normal(size=(200, k)) * 3.0
        y = rng.normal(size=(200, k)) * 3.0
        inner = np.sum((spec.gradient(x) - spec.gradient(y)) * (x - y), axis=1)
        sq = np.sum((x - y) ** 2, axis=1)
        assert np.all(inner >= lam * sq * (1.0 - 1e-9))
        assert lam > 0


class TestInteractingParticles:
    def test_pair_term(self):
        spec = InteractingParticles(particles=3, sigma_int=0.1)
        x = np.array([0.3, -0.7, 1.1])
        wells = np.sum(x**4 - 2 * x**2 + 0.2 * x)
        pairs = sum((x[i] - x[j]) ** 2 for i in range(3) for j in range(i + 1, 3))
        assert spec.value(x) == pytest.approx(wells + 0.1 * pairs)

    def test_rejects_negative_coupling(self):
        with pytest.raises(InputError):
            InteractingParticles(sigma_int=-0.1)


class TestAnn:
    def test_dimension(self):
        assert AnnLoss(n1=4, n2=3).dimension == 31
        assert AnnLoss(n1=10, n2=10).dimension == 151

    def test_training_set_is_reproducible(self):
        a = build_ann_training_set(0, 100)
        b = build_ann_training_set(0, 100)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        assert len(a) == 100
        assert np.all(np.abs(a.inputs) <= 1.0)
        np.testing.assert_allclose(a.targets, (a.inputs**2).sum(axis=1))


class TestSerialization:
    def test_kinds(self):
        assert set(potential_kinds()) == {
            "lehmer_quadratic",
            "double_well_1d",
            "interacting_particles",
            "rosenbrock",
            "ann_loss",
        }

    def test_from_dict(self):
        spec = potential_from_dict({"kind": "interacting_particles", "particles": 3, "sigma_int": 0.1})
        assert spec == InteractingParticles(particles=3, sigma_int=0.1)
        assert potential_from_dict(potential_to_dict(spec)) == spec

    def test_unknown_kind(self):
        with pytest.raises(InputError, match="kind"):
            potential_from_dict({"kind": "triple_well"})

    def test_unknown_key(self):
        with pytest.raises(InputError, match="sigma"):
            potential_from_dict({"kind": "double_well_1d", "sigma": 1.0})
