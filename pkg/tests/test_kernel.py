import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermikac.kernel import CUSTOM, CrossSectionSpec, collide, eval_kernel, sample_omega


def vec(x, y, z):
    return np.array([x, y, z], dtype=float)


finite = st.floats(-50.0, 50.0, allow_nan=False)
vec_st = st.tuples(finite, finite, finite).map(lambda t: np.array(t))
unit_st = st.tuples(
    st.floats(-1.0, 1.0), st.floats(0.0, 2 * np.pi)
).map(
    lambda t: np.array(
        [
            np.sqrt(max(0.0, 1 - t[0] ** 2)) * np.cos(t[1]),
            np.sqrt(max(0.0, 1 - t[0] ** 2)) * np.sin(t[1]),
            t[0],
        ]
    )
)


class TestCollide:
    def test_omega_parallel_swaps(self):
        vi, vj = collide(vec(1, 0, 0), vec(0, 0, 0), vec(1, 0, 0))
        assert np.allclose(vi, [0, 0, 0], atol=1e-15)
        assert np.allclose(vj, [1, 0, 0], atol=1e-15)

    def test_example_partial_exchange(self):
        # direct evaluation of the transform; kinetic energy 5 preserved
        vi, vj = collide(vec(1, 2, 0), vec(0, 0, 0), vec(0, 1, 0))
        assert np.allclose(vi, [1, 0, 0], atol=1e-15)
        assert np.allclose(vj, [0, 2, 0], atol=1e-15)
        assert abs(vi @ vi + vj @ vj - 5.0) < 1e-14

    def test_perpendicular_omega_is_identity(self):
        vi, vj = collide(vec(1, 2, 3), vec(1, 2, 0), vec(1, 0, 0))
        assert np.allclose(vi, [1, 2, 3])
        assert np.allclose(vj, [1, 2, 0])

    def test_non_unit_omega_rejected(self):
        with pytest.raises(ValueError):
            collide(vec(1, 0, 0), vec(0, 0, 0), vec(1, 1, 0))

    def test_batched_shape(self):
        rng = np.random.default_rng(0)
        vi = rng.normal(size=(100, 3))
        vj = rng.normal(size=(100, 3))
        om = sample_omega(rng, 100)
        a, b = collide(vi, vj, om)
        assert a.shape == b.shape == (100, 3)

    @settings(max_examples=200, deadline=None)
    @given(vec_st, vec_st, unit_st)
    def test_conservation_and_involution(self, vi, vj, om):
        a, b = collide(vi, vj, om)
        assert np.all(np.abs((a + b) - (vi + vj)) <= 1e-12 * (1 + np.abs(vi + vj)))
        e0 = vi @ vi + vj @ vj
        e1 = a @ a + b @ b
        assert abs(e1 - e0) <= 1e-12 * max(1.0, abs(e0))
        aa, bb = collide(a, b, om)
        assert np.all(np.abs(aa - vi) <= 1e-11 * (1 + np.abs(vi)))
        assert np.all(np.abs(bb - vj) <= 1e-11 * (1 + np.abs(vj)))
        assert abs(np.linalg.norm(a - b) - np.linalg.norm(vi - vj)) <= 1e-11 * (
            1 + np.linalg.norm(vi - vj)
        )


class TestKernel:
    def test_ramp_values(self):
        spec = CrossSectionSpec(b0=1.0, m_cut=10.0)
        assert eval_kernel(spec, vec(0, 0, 0)) == 1.0
        assert eval_kernel(spec, vec(10, 0, 0)) == 0.0
        spec = CrossSectionSpec(b0=2.0, m_cut=4.0)
        assert abs(eval_kernel(spec, vec(1, 0, 0)) - 1.5) < 1e-15

    def test_bound_and_cutoff(self):
        rng = np.random.default_rng(1)
        spec = CrossSectionSpec(b0=1.7, m_cut=2.5)
        v = rng.normal(scale=3.0, size=(10**6, 3))
        b = eval_kernel(spec, v)
        assert np.all(b <= spec.b0 + 1e-15)
        assert np.all(b >= 0)
        far = np.linalg.norm(v, axis=1) > spec.m_cut
        assert np.all(b[far] == 0.0)

    def test_custom_clipped_to_declared_bounds(self):
        spec = CrossSectionSpec(
            b0=1.0, m_cut=2.0, form=CUSTOM, custom_fn=lambda s, om: 5.0
        )
        assert eval_kernel(spec, vec(1, 0, 0), vec(1, 0, 0)) == 1.0
        assert eval_kernel(spec, vec(3, 0, 0), vec(1, 0, 0)) == 0.0

    def test_validation(self):
        from fermikac.errors import ConfigError

        with pytest.raises(ConfigError):
            CrossSectionSpec(m_cut=-1.0)
        with pytest.raises(ConfigError):
            CrossSectionSpec(form="custom")
        with pytest.raises(ConfigError):
            CrossSectionSpec(form="weird")


class TestSampleOmega:
    def test_moment_statistics(self):
        rng = np.random.default_rng(7)
        n = 10**6
        om = sample_omega(rng, n)
        # unit norm per draw
        assert np.max(np.abs(np.sum(om * om, axis=1) - 1.0)) < 1e-12
        # component means vanish by symmetry; sd of mean = 1/sqrt(3n)
        se = 1.0 / np.sqrt(3 * n)
        assert np.all(np.abs(om.mean(axis=0)) < 4 * se)
        # hemisphere fraction
        frac = np.mean(om[:, 2] > 0)
        assert abs(frac - 0.5) < 4 * 0.5 / np.sqrt(n)

    def test_single_draw(self):
        om = sample_omega(np.random.default_rng(3))
        assert om.shape == (3,)
        assert abs(om @ om - 1.0) < 1e-12
