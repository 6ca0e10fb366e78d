import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermikac.errors import AdmissibilityError
from fermikac.grid import (
    CellGrid,
    build_occupancy,
    cell_keys,
    cell_of,
    is_admissible,
    occupation_numbers,
    pack_cells,
    unpack_cells,
)


def grid_with_delta(delta, n=2):
    return CellGrid(delta=delta, alpha=n * delta**3, n_particles=n)


class TestCellOf:
    def test_examples(self):
        g = grid_with_delta(0.5)
        assert cell_of(g, np.array([0.7, -0.2, 0.0])) == (1, -1, 0)
        assert cell_of(g, np.zeros(3)) == (0, 0, 0)
        # half-open boxes: the boundary belongs to the upper cell
        assert cell_of(g, np.array([0.5, 0.0, 0.0])) == (1, 0, 0)

    @settings(max_examples=300, deadline=None)
    @given(st.tuples(*[st.floats(-100, 100) for _ in range(3)]),
           st.floats(0.01, 0.6))
    def test_partition(self, v, delta):
        g = grid_with_delta(delta)
        v = np.array(v)
        c = np.array(cell_of(g, v))
        assert np.all(c * delta <= v + 1e-12)
        assert np.all(v < (c + 1) * delta + 1e-12)

    def test_batch(self):
        g = grid_with_delta(0.5)
        vs = np.array([[0.7, -0.2, 0.0], [0.0, 0.0, 0.0]])
        idx = cell_of(g, vs)
        assert idx.shape == (2, 3)
        assert tuple(idx[0]) == (1, -1, 0)


class TestGridInvariants:
    def test_scaling_constraint(self):
        g = CellGrid.from_alpha(1000, 0.2)
        assert abs(g.n_particles * g.delta**3 - g.alpha) < 1e-12 * g.alpha

    def test_alpha_range_validated(self):
        with pytest.raises(ValueError):
            CellGrid(delta=1.0, alpha=2.0, n_particles=2)
        with pytest.raises(ValueError):
            CellGrid(delta=0.5, alpha=0.2, n_particles=3)  # inconsistent


class TestAdmissibility:
    def test_same_cell_rejected(self):
        g = grid_with_delta(0.5)
        assert not is_admissible(g, [[0.1, 0, 0], [0.2, 0, 0]])

    def test_empty_is_admissible(self):
        assert is_admissible(grid_with_delta(0.5), np.zeros((0, 3)))

    def test_distinct_cells_ok(self):
        g = grid_with_delta(0.5, n=4)
        vs = np.array([[0.1, 0, 0], [0.6, 0, 0], [0.1, 0.6, 0], [0.1, 0, 0.6]])
        assert is_admissible(g, vs)

    def test_occupancy_build(self):
        g = grid_with_delta(0.5)
        occ = build_occupancy(g, [[0.1, 0, 0], [0.9, 0, 0]])
        assert occ == {(0, 0, 0): 0, (1, 0, 0): 1}
        assert build_occupancy(g, np.zeros((0, 3))) == {}
        with pytest.raises(AdmissibilityError):
            build_occupancy(g, [[0.1, 0, 0], [0.2, 0, 0]])

    def test_occupancy_equivalences(self):
        g = grid_with_delta(0.25, n=50)
        rng = np.random.default_rng(0)
        vs = rng.normal(size=(50, 3))
        adm = is_admissible(g, vs)
        counts = occupation_numbers(g, vs)
        assert sum(counts.values()) == 50
        assert adm == (max(counts.values()) == 1)
        if adm:
            assert len(build_occupancy(g, vs)) == 50
        else:
            with pytest.raises(AdmissibilityError):
                build_occupancy(g, vs)


class TestPacking:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(-10**5, 10**5),
                              st.integers(-10**5, 10**5),
                              st.integers(-10**5, 10**5)),
                    min_size=1, max_size=20))
    def test_roundtrip(self, cells):
        idx = np.array(cells, dtype=np.int64)
        keys = pack_cells(idx)
        assert np.array_equal(unpack_cells(keys), idx)

    def test_matches_cell_of(self):
        g = grid_with_delta(0.37, n=10)
        rng = np.random.default_rng(5)
        vs = rng.normal(size=(10, 3)) * 4
        keys = cell_keys(g, vs)
        for i in range(10):
            assert tuple(unpack_cells(keys[i : i + 1])[0]) == cell_of(g, vs[i])
