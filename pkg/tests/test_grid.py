import numpy as np
import pytest

from langevin_coupling.errors import InputError
from langevin_coupling.landscape.basins import CriticalPoint, CriticalPointSet, find_critical_points_1d, reference_minima
from langevin_coupling.landscape.grid import (
    GridGraph,
    build_grid,
    communication_height_grid,
    essential_barrier_height_forms,
    essential_barrier_height_grid,
    minima_nodes,
)
from langevin_coupling.landscape.potentials import DoubleWell1D, InteractingParticles


def _points(*pairs):
    return CriticalPointSet(minima=tuple(CriticalPoint(np.array([x]), v) for x, v in pairs))


@pytest.fixture
def ridge():
    # nodes at x = 0..4
    return GridGraph(bounds=((0.0, 4.0),), resolution=5, values=np.array([0.0, 5.0, 1.0, 2.0, 0.5]))


class TestGraph:
    def test_neighbors_2d(self):
        grid = GridGraph(bounds=((0.0, 1.0), (0.0, 1.0)), resolution=3, values=np.zeros((3, 3)))
        assert sorted(grid.neighbors(4)) == [1, 3, 5, 7]
        assert sorted(grid.neighbors(0)) == [1, 3]

    def test_neighbors_with_diagonals(self):
        grid = GridGraph(bounds=((0.0, 1.0), (0.0, 1.0)), resolution=3, values=np.zeros((3, 3)), diagonal=True)
        assert sorted(grid.neighbors(4)) == [0, 1, 2, 3, 5, 6, 7, 8]
        assert sorted(grid.neighbors(0)) == [1, 3, 4]

    def test_nearest_node_and_position(self):
        grid = build_grid(DoubleWell1D(), [(-2.0, 2.0)], 41)
        node = grid.nearest_node([0.97])
        assert grid.position(node)[0] == pytest.approx(1.0)

    def test_rejects_bad_shapes(self):
        with pytest.raises(InputError):
            GridGraph(bounds=((0.0, 1.0),), resolution=3, values=np.zeros(4))
        with pytest.raises(InputError):
            build_grid(DoubleWell1D(), [(-1.0, 1.0), (-1.0, 1.0)], 5)
        with pytest.raises(InputError):
            GridGraph(bounds=((0.0, 1.0),), resolution=3, values=np.array([0.0, np.inf, 1.0]))


class TestCommunicationHeight:
    def test_path_must_cross_the_ridge(self, ridge):
        assert communication_height_grid(ridge, [0], [4]) == 5.0
        assert communication_height_grid(ridge, [4], [2]) == 2.0

    def test_sets_must_be_disjoint(self, ridge):
        with pytest.raises(InputError, match="disjoint"):
            communication_height_grid(ridge, [0, 2], [2])
        with pytest.raises(InputError):
            communication_height_grid(ridge, [], [2])
        with pytest.raises(InputError):
            communication_height_grid(ridge, [0], [9])


class TestEssentialBarrier:
    def test_hand_grid(self, ridge):
        minima = _points((0.0, 0.0), (4.0, 0.5), (2.0, 1.0))
        assert essential_barrier_height_forms(ridge, minima) == (4.5, 4.5)
        assert essential_barrier_height_grid(ridge, minima) == 4.5

    def test_single_minimum(self, ridge):
        assert essential_barrier_height_grid(ridge, _points((0.0, 0.0))) == 0.0

    def test_minima_must_be_ordered(self, ridge):
        with pytest.raises(InputError):
            essential_barrier_height_grid(ridge, _points((4.0, 0.5), (0.0, 0.0)))

    def test_minima_on_one_node(self, ridge):
        with pytest.raises(InputError, match="same grid node"):
            minima_nodes(ridge, _points((0.0, 0.0), (0.1, 0.2)))

    def test_double_well(self):
        grid = build_grid(DoubleWell1D(), [(-2.0, 2.0)], 4001)
        crit = find_critical_points_1d(DoubleWell1D())
        assert essential_barrier_height_grid(grid, crit) == pytest.approx(0.8076, abs=1e-3)
        left, right = minima_nodes(grid, crit)
        peak = communication_height_grid(grid, [right], [left])
        assert peak == pytest.approx(DoubleWell1D().value(np.array([0.05129])), abs=1e-3)

    @pytest.mark.slow
    def test_interacting_particles_coarse_grid(self):
        spec = InteractingParticles(sigma_int=0.05)
        grid = build_grid(spec, [(-1.6, 1.6)] * 3, 61)
        assert essential_barrier_height_grid(grid, reference_minima(spec)) == pytest.approx(0.8961, rel=0.05)
