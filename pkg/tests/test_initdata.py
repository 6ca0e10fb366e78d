from itertools import combinations

import numpy as np
import pytest

from fermikac.errors import ConfigError, SaturationError
from fermikac.grid import CellGrid, cell_keys
from fermikac.initdata import (
    DoubleBump,
    TruncatedMaxwellian,
    UniformBox,
    builtin_profiles,
    chain_cell_states,
    largest_remainder,
    rejection_acceptance,
    sample_conditioned_product,
    sample_two_scale,
    solve_a,
    two_scale_ratio,
)
from fermikac.kernel import CrossSectionSpec
from fermikac.process import SimConfig


def simcfg(n, alpha, seed=0):
    return SimConfig(n_particles=n, alpha=alpha, t_final=1.0, seed=seed,
                     kernel=CrossSectionSpec())


class TestProfiles:
    def test_builtins_certified(self):
        for prof in builtin_profiles():
            # construction already certifies mass = 1 to 1e-9
            assert abs(prof.mass - 1.0) < 1e-9
            assert prof.G > 0
            rng = np.random.default_rng(0)
            pts = prof.sample(rng, 20000)
            r = np.linalg.norm(pts - prof.center, axis=1)
            assert np.all(r <= prof.support_radius + 1e-12)
            assert np.all(prof(pts) <= prof.G * (1 + 1e-12))

    def test_uniform_box_facts(self):
        prof = UniformBox()
        assert prof.G == 1.0
        assert abs(prof.support_radius - np.sqrt(3) / 2) < 1e-15

    def test_maxwellian_sampler_distribution(self):
        prof = TruncatedMaxwellian(sigma=0.7, cutoff=2.1)
        rng = np.random.default_rng(1)
        pts = prof.sample(rng, 200000)
        # componentwise mean ~ 0, reduced variance from the truncation
        assert np.max(np.abs(pts.mean(axis=0))) < 4 * 0.7 / np.sqrt(200000)
        assert np.all(pts.var(axis=0) < 0.7**2)

    def test_double_bump_bound_on_dense_scan(self):
        prof = DoubleBump(sigma=0.3, cutoff=0.95, separation=2.0)
        rng = np.random.default_rng(2)
        pts = rng.uniform(-2.0, 2.0, size=(10**6, 3))
        assert np.all(prof(pts) <= prof.G * (1 + 1e-12))

    def test_double_bump_requires_disjoint_supports(self):
        with pytest.raises(ConfigError):
            DoubleBump(sigma=0.3, cutoff=1.2, separation=2.0)


class TestSolveA:
    def test_alpha_zero(self):
        prof = TruncatedMaxwellian()
        lm = solve_a(prof, 0.0)
        assert lm.a_coeff == 0.0
        pts = np.random.default_rng(0).normal(size=(100, 3))
        assert np.allclose(lm(pts), prof(pts))

    def test_uniform_closed_form(self):
        # integral of (1/V)/(exp(-a) + alpha/V) = 1 forces
        # a = -log(1 - alpha / V); here V = 1
        for alpha in (0.1, 0.25, 0.5):
            lm = solve_a(UniformBox(), alpha)
            assert abs(lm.a_coeff - (-np.log(1 - alpha))) < 1e-9
            assert abs(lm.residual()) < 1e-10

    def test_bounded_by_inverse_alpha(self):
        prof = TruncatedMaxwellian(sigma=0.4, cutoff=1.6)
        alpha = 0.3
        lm = solve_a(prof, alpha)
        assert 0.0 <= lm.a_coeff <= np.log(1.0 / (1.0 - alpha * prof.G))
        pts = np.random.default_rng(1).uniform(-2, 2, size=(20000, 3))
        assert np.all(lm(pts) <= 1.0 / alpha + 1e-12)
        assert abs(lm.residual()) < 1e-10


class TestRejectionOracle:
    def test_pair_acceptance_matches_combinatorics(self):
        # two uniform draws on [0,1]^3 with delta = 0.5: eight equally
        # likely cells, so Z_2 = 1 - 1/8
        grid = CellGrid(delta=0.5, alpha=0.25, n_particles=2)
        prof = UniformBox()
        n = 200000
        acc = rejection_acceptance(prof, grid, np.random.default_rng(3), n)
        z2 = 7.0 / 8.0
        se = np.sqrt(z2 * (1 - z2) / n)
        assert abs(acc - z2) < 4 * se
        # partition-function lower bound (1 - alpha G)^N
        assert (1 - grid.alpha * prof.G) ** 2 <= acc <= 1.0

    def test_n8_bracket_and_exact_value(self):
        # 64 equally likely cells: Z_8 = prod_{i<8} (1 - i/64)
        n_cells_side = 4
        delta = 1.0 / n_cells_side
        n = 8
        grid = CellGrid(delta=delta, alpha=n * delta**3, n_particles=n)
        prof = UniformBox()
        z8 = np.prod([1 - i / 64 for i in range(8)])
        trials = 100000
        acc = rejection_acceptance(prof, grid, np.random.default_rng(4), trials)
        se = np.sqrt(z8 * (1 - z8) / trials)
        assert abs(acc - z8) < 4 * se
        assert (1 - grid.alpha * prof.G) ** n <= acc <= 1.0


class TestSamplerA:
    def test_states_admissible_and_reproducible(self):
        prof = TruncatedMaxwellian(sigma=0.5, cutoff=2.0)
        cfg = simcfg(200, 0.3)
        ens1 = sample_conditioned_product(prof, cfg, np.random.default_rng(7))
        ens2 = sample_conditioned_product(prof, cfg, np.random.default_rng(7))
        assert ens1.is_admissible()
        assert np.array_equal(ens1.velocities, ens2.velocities)
        assert 0.0 < ens1.init_acceptance <= 1.0

    def test_vanishing_exclusion_recovers_profile(self):
        # delta -> 0 at fixed N: acceptance -> 1 and the sample is iid f_in
        prof = UniformBox()
        cfg = simcfg(50, 1e-6)
        ens = sample_conditioned_product(prof, cfg, np.random.default_rng(8))
        assert ens.init_acceptance > 0.999
        assert np.all((ens.velocities >= 0) & (ens.velocities < 1))

    def test_saturation_error(self):
        # 8 cells for 8 particles with a uniform profile on one cell's
        # worth of volume: greedy placement cannot finish
        prof = UniformBox(upper=(0.5, 0.5, 0.5))
        with pytest.raises((SaturationError, ConfigError)):
            cfg = simcfg(8, 8 * 0.25**3)
            sample_conditioned_product(prof, cfg, np.random.default_rng(9))

    def test_small_instance_chain_matches_enumeration(self):
        # N = 3 on 27 equally likely cells (profile constant per cell):
        # the conditioned product law is uniform over the C(27,3)
        # admissible unordered triples
        delta = 0.5
        n = 3
        prof = UniformBox(upper=(1.5, 1.5, 1.5))
        cfg = simcfg(n, n * delta**3)
        rng = np.random.default_rng(10)
        states = chain_cell_states(prof, cfg, rng, n_steps=16 * 10**6,
                                   record_every=4)
        _, counts = np.unique(states, axis=0, return_counts=True)
        n_states = 2925  # C(27, 3)
        assert counts.size <= n_states
        total = counts.sum()
        p = 1.0 / n_states
        tv = 0.5 * (
            float(np.sum(np.abs(counts / total - p)))
            + p * (n_states - counts.size)
        )
        assert tv <= 0.02


class TestSamplerB:
    def test_ratio(self):
        assert two_scale_ratio(0.04) == 5
        assert two_scale_ratio(0.9) == 1

    def test_largest_remainder(self):
        w = np.array([0.5, 0.3, 0.2])
        out = largest_remainder(w, 7)
        assert out.sum() == 7
        assert np.all(out >= np.floor(7 * w))

    def test_counts_match_profile_masses(self):
        prof = TruncatedMaxwellian(sigma=0.6, cutoff=1.8)
        cfg = simcfg(2000, 0.2)
        ens = sample_two_scale(prof, cfg, np.random.default_rng(11))
        assert ens.is_admissible()
        assert ens.coarse_counts.sum() == 2000
        m = ens.two_scale_ratio
        assert m == two_scale_ratio(cfg.grid.delta)
        # occupied coarse-cell histogram reproduces the stored counts
        big = m * cfg.grid.delta
        from fermikac.grid import pack_cells

        idx = np.floor(ens.velocities / big).astype(np.int64)
        _, counts = np.unique(pack_cells(idx), return_counts=True)
        assert np.array_equal(np.sort(counts), np.sort(ens.coarse_counts))

    def test_single_big_cell_forced(self):
        # profile supported in one coarse cell: every particle lands
        # there in distinct fine cells
        delta = 0.3
        n = 3
        prof = UniformBox(upper=(0.6, 0.6, 0.6))
        cfg = simcfg(n, n * delta**3)
        ens = sample_two_scale(prof, cfg, np.random.default_rng(12))
        assert ens.two_scale_ratio == 2
        assert np.all((ens.velocities >= 0) & (ens.velocities < 0.6))
        assert ens.is_admissible()

    def test_fine_cell_subsets_uniform(self):
        # one coarse cell with c = 8 fine cells and n = 3 particles:
        # all C(8,3) = 56 subsets equally likely
        delta = 0.3
        n = 3
        prof = UniformBox(upper=(0.6, 0.6, 0.6))
        cfg = simcfg(n, n * delta**3)
        rng = np.random.default_rng(13)
        grid = cfg.grid
        subsets = {}
        draws = 100000
        for _ in range(draws):
            ens = sample_two_scale(prof, cfg, rng)
            key = tuple(sorted(cell_keys(grid, ens.velocities).tolist()))
            subsets[key] = subsets.get(key, 0) + 1
        assert len(subsets) == 56
        p = 1.0 / 56
        se = np.sqrt(p * (1 - p) * draws)
        for count in subsets.values():
            assert abs(count - draws * p) < 4 * se

    def test_capacity_error(self):
        # more particles than fine cells in the support
        delta = 0.3
        prof = UniformBox(upper=(0.6, 0.6, 0.6))
        with pytest.raises(SaturationError):
            cfg = simcfg(9, 9 * delta**3)
            sample_two_scale(prof, cfg, np.random.default_rng(14))
