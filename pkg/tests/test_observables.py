import numpy as np
import pytest

from fermikac.errors import ConfigError
from fermikac.grid import CellGrid, pack_cells
from fermikac.kernel import CrossSectionSpec
from fermikac.observables import (
    CompactBox,
    MarginalEstimate,
    chaos_defect,
    delta_norm,
    estimate_marginal,
    fermi_entropy,
    field_cell_averages,
    l1_between,
    l1_distance,
    merge_estimates,
)
from fermikac.process import ParticleEnsemble
from fermikac.uu import field_from_function


def two_particle_snapshot(v1=(0.1, 0, 0), v2=(0.9, 0, 0)):
    grid = CellGrid(delta=0.5, alpha=0.25, n_particles=2)
    return ParticleEnsemble(np.array([v1, v2], dtype=float), grid,
                            kernel=CrossSectionSpec())


class TestEstimates:
    def test_k1_single_snapshot_value(self):
        # delta^3 = 0.125, N = 2: occupied cell carries 1 / (2 * 0.125)
        ens = two_particle_snapshot()
        est = estimate_marginal([ens], 1)
        assert est.value_at((0, 0, 0)) == pytest.approx(4.0)
        assert est.value_at((1, 0, 0)) == pytest.approx(4.0)
        assert est.value_at((5, 5, 5)) == 0.0

    def test_k2_single_snapshot_value(self):
        # 1 / (2 * 1 * 0.125^2) = 32 on both orderings of the occupied pair
        ens = two_particle_snapshot()
        est = estimate_marginal([ens], 2)
        assert est.value_at(((0, 0, 0), (1, 0, 0))) == pytest.approx(32.0)
        assert est.value_at(((1, 0, 0), (0, 0, 0))) == pytest.approx(32.0)
        assert est.cells.shape == (2, 2)

    def test_k2_symmetry_exact(self):
        rng = np.random.default_rng(0)
        grid = CellGrid.from_alpha(20, 0.2)
        snaps = []
        for _ in range(5):
            vel = rng.normal(size=(20, 3)) * 2
            from fermikac.grid import cell_keys

            seen = set()
            for i in range(20):
                while int(cell_keys(grid, vel[i : i + 1])[0]) in seen:
                    vel[i] = rng.normal(size=3) * 2
                seen.add(int(cell_keys(grid, vel[i : i + 1])[0]))
            snaps.append(ParticleEnsemble(vel, grid))
        est2 = estimate_marginal(snaps, 2)
        for m in range(0, est2.cells.shape[0], 7):
            a, b = est2.cells[m]
            pos = np.nonzero((est2.cells[:, 0] == b) & (est2.cells[:, 1] == a))[0]
            assert pos.size == 1
            assert est2.values[pos[0]] == est2.values[m]

    def test_normalization(self):
        ens = two_particle_snapshot()
        est = estimate_marginal([ens], 1)
        assert abs(est.total_mass() - 1.0) < 1e-12

    def test_mixed_grids_rejected(self):
        a = two_particle_snapshot()
        grid_b = CellGrid(delta=0.4, alpha=2 * 0.4**3, n_particles=2)
        b = ParticleEnsemble(np.array([[0.1, 0, 0], [0.9, 0, 0]]), grid_b)
        with pytest.raises(ConfigError):
            estimate_marginal([a, b], 1)

    def test_bounds(self):
        # every k=1 value <= 1/alpha; k=2 delta-norm <= T_{2,N} / alpha^2
        ens = two_particle_snapshot()
        est1 = estimate_marginal([ens], 1)
        alpha = ens.grid.alpha
        assert np.all(est1.values <= 1.0 / alpha + 1e-12)
        est2 = estimate_marginal([ens], 2)
        assert delta_norm(est2) <= est2.t_correction / alpha**2 + 1e-12
        assert delta_norm(est2) <= np.exp(4.0) / alpha**2

    def test_delta_norm_empty(self):
        est = MarginalEstimate(
            k=1, delta=0.5, n_particles=2, alpha=0.25, n_samples=1,
            cells=np.empty(0, dtype=np.int64), values=np.empty(0),
            counts=np.empty(0, dtype=np.int64),
        )
        assert delta_norm(est) == 0.0


class TestMerge:
    def test_associativity(self):
        rng = np.random.default_rng(4)
        grid = CellGrid.from_alpha(30, 0.2)
        groups = []
        for _ in range(3):
            snaps = []
            for _ in range(3):
                vel = rng.normal(size=(30, 3)) * 2
                from fermikac.grid import cell_keys

                seen = set()
                for i in range(30):
                    while int(cell_keys(grid, vel[i : i + 1])[0]) in seen:
                        vel[i] = rng.normal(size=3) * 2
                    seen.add(int(cell_keys(grid, vel[i : i + 1])[0]))
                snaps.append(ParticleEnsemble(vel, grid))
            groups.append(estimate_marginal(snaps, 1))
        a = merge_estimates([merge_estimates(groups[:2]), groups[2]])
        b = merge_estimates([groups[0], merge_estimates(groups[1:])])
        assert np.array_equal(a.cells, b.cells)
        assert np.max(np.abs(a.values - b.values)) <= 1e-12
        assert a.n_samples == b.n_samples == 9


class TestL1Distance:
    def test_zero_when_estimate_matches_averages(self):
        fld = field_from_function(
            lambda p: np.exp(-np.sum(p * p, axis=1)), 15, 3.0, 0.25
        )
        box = CompactBox.cube(1.0)
        delta = 0.5
        imin, imax = box.cell_range(delta)
        cells = np.array(
            [
                (i, j, k)
                for i in range(imin[0], imax[0] + 1)
                for j in range(imin[1], imax[1] + 1)
                for k in range(imin[2], imax[2] + 1)
            ],
            dtype=np.int64,
        )
        avg = field_cell_averages(fld, cells, delta)
        est = MarginalEstimate(
            k=1, delta=delta, n_particles=2, alpha=0.25, n_samples=1,
            cells=np.sort(pack_cells(cells)),
            values=avg[np.argsort(pack_cells(cells))],
            counts=np.ones(len(cells), dtype=np.int64),
        )
        assert l1_distance(est, fld, box) < 1e-12

    def test_disjoint_supports(self):
        # unit point mass in one cell vs a well-resolved unit bump away
        # from it: the L1 distance over a box covering both is 2
        fld = field_from_function(
            lambda p: np.exp(-np.sum((p - 1.2) ** 2, axis=1) / 0.4),
            25, 3.0, 0.25,
        )
        delta = 0.5
        cell = np.array([[-3, -3, -3]], dtype=np.int64)
        est = MarginalEstimate(
            k=1, delta=delta, n_particles=2, alpha=0.25, n_samples=1,
            cells=pack_cells(cell), values=np.array([1.0 / delta**3]),
            counts=np.ones(1, dtype=np.int64),
        )
        box = CompactBox((-2.0, -2.0, -2.0), (2.9, 2.9, 2.9))
        d = l1_distance(est, fld, box)
        assert abs(d - 2.0) < 1e-6

    def test_noise_shrinks_with_replicas(self):
        from fermikac.initdata import UniformBox, sample_conditioned_product
        from fermikac.process import SimConfig

        prof = UniformBox()
        fld = field_from_function(prof, 15, 1.5, 0.2)
        box = CompactBox((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        cfg = SimConfig(n_particles=100, alpha=0.2, t_final=0.0, seed=0)
        rng = np.random.default_rng(12)

        def dist(n_rep):
            snaps = [
                sample_conditioned_product(prof, cfg, rng) for _ in range(n_rep)
            ]
            return l1_distance(estimate_marginal(snaps, 1), fld, box)

        d_small = dist(6)
        d_big = dist(24)
        assert d_big <= d_small * 1.05

    def test_k2_rejected(self):
        ens = two_particle_snapshot()
        est2 = estimate_marginal([ens], 2)
        fld = field_from_function(lambda p: np.ones(p.shape[0]), 5, 2.0, 0.25)
        with pytest.raises(ConfigError):
            l1_distance(est2, fld, CompactBox.cube(1.0))


class TestChaosDefect:
    def test_exact_product_gives_zero(self):
        # synthetic est2 equal to the off-diagonal product of est1
        delta = 0.5
        cells = np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0)], dtype=np.int64)
        keys = pack_cells(cells)
        order = np.argsort(keys)
        keys = keys[order]
        vals = np.array([2.0, 1.0, 0.5])[order]
        est1 = MarginalEstimate(
            k=1, delta=delta, n_particles=10, alpha=0.2, n_samples=4,
            cells=keys, values=vals, counts=np.ones(3, dtype=np.int64),
        )
        pairs = []
        pvals = []
        for a in range(3):
            for b in range(3):
                if a != b:
                    pairs.append((keys[a], keys[b]))
                    pvals.append(vals[a] * vals[b])
        est2 = MarginalEstimate(
            k=2, delta=delta, n_particles=10, alpha=0.2, n_samples=4,
            cells=np.array(pairs, dtype=np.int64), values=np.array(pvals),
            counts=np.ones(len(pairs), dtype=np.int64),
        )
        box = CompactBox.cube(5.0)
        assert abs(chaos_defect(est2, est1, box)) < 1e-12

    def test_single_two_particle_snapshot_positive(self):
        ens = two_particle_snapshot()
        est1 = estimate_marginal([ens], 1)
        est2 = estimate_marginal([ens], 2)
        box = CompactBox.cube(2.0)
        assert chaos_defect(est2, est1, box) > 0.1


class TestHelpers:
    def test_l1_between(self):
        ens = two_particle_snapshot()
        est = estimate_marginal([ens], 1)
        box = CompactBox.cube(2.0)
        assert l1_between(est, est, box) == 0.0
        other = estimate_marginal([two_particle_snapshot(v2=(1.6, 0, 0))], 1)
        # one shared occupied cell, one moved: total variation = 2 * (1/2) = 1
        assert l1_between(est, other, box) == pytest.approx(1.0)

    def test_entropy_diagnostic(self):
        s = fermi_entropy(np.array([5.0]), 0.2, 1.0)
        # f = 1/alpha saturates the exclusion term
        assert np.isfinite(s)
        assert fermi_entropy(np.zeros(4), 0.2, 1.0) == 0.0

    def test_box_validation(self):
        with pytest.raises(ConfigError):
            CompactBox((0, 0, 0), (0, 1, 1))
