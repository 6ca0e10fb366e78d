"""Limiting hierarchy operators evaluated on factored product states.

The N -> infinity hierarchy couples the k-particle function to orders
k+1, k+2, k+3:

    d/dt f_k = C_{k,k+1} f_{k+1} + C_{k,k+2} f_{k+2} + C_{k,k+3} f_{k+3},

where C_{k,k+3} vanishes identically on symmetric arguments (its two
terms carry the same variable multiset), and on factorized states
f_k = f^(x) k the first two operators reproduce the U-U collision
operator.  Inputs here are factored products of one-particle grid
functions, which is the only form the identities require and the only
form that stays tractable (a dense order-4 tensor at n_v = 21 would
hold 9261^4 entries).

Every evaluation runs over the same CollisionStencil as the uu solver
(same offsets, interpolation corners and B * w_omega weights), so
consistency residuals isolate code-path differences, not quadrature
differences.
"""

import numpy as np
from numba import njit

from .errors import ConfigError
from .uu import CollisionStencil, DensityField, build_stencil

_ORDER_MSG = "factored input must have order k + {s} for apply at order k"


class ProductGridFunction:
    """Factored k-particle grid function  prod_i f_i(v_i).

    factors are DensityFields on one shared grid.  The function is
    symmetric iff all factors hold identical values; the nullity
    counterexample deliberately breaks this.
    """

    def __init__(self, factors):
        if not factors:
            raise ConfigError("need at least one factor")
        f0 = factors[0]
        for f in factors[1:]:
            if f.n_v != f0.n_v or f.box_l != f0.box_l:
                raise ConfigError("factors mix grids")
        self.factors = list(factors)

    @classmethod
    def power(cls, field: DensityField, k):
        return cls([field] * k)

    @property
    def order(self):
        return len(self.factors)

    @property
    def grid_field(self):
        return self.factors[0]

    @property
    def is_symmetric(self):
        f0 = self.factors[0]
        return all(f is f0 or np.array_equal(f.values, f0.values)
                   for f in self.factors[1:])

    def eval_nodes(self, node_idx):
        """Evaluate at tuples of grid nodes: node_idx (m, order, 3) ints."""
        node_idx = np.asarray(node_idx, dtype=np.int64)
        out = np.ones(node_idx.shape[0])
        for c, f in enumerate(self.factors):
            out *= f.values[
                node_idx[:, c, 0], node_idx[:, c, 1], node_idx[:, c, 2]
            ]
        return out


SymmetricGridFunction = ProductGridFunction


class PairFunction:
    """Sum of rank-one terms  sum_t A_t(v_1) B_t(v_2)  on the grid."""

    def __init__(self, terms):
        self.terms = terms  # list of (values_a, values_b) arrays

    def eval_nodes(self, node_idx):
        node_idx = np.asarray(node_idx, dtype=np.int64)
        out = np.zeros(node_idx.shape[0])
        for a, b in self.terms:
            out += (
                a[node_idx[:, 0, 0], node_idx[:, 0, 1], node_idx[:, 0, 2]]
                * b[node_idx[:, 1, 0], node_idx[:, 1, 1], node_idx[:, 1, 2]]
            )
        return out

    def max_abs_on(self, node_idx):
        return float(np.max(np.abs(self.eval_nodes(node_idx))))


# ---------------------------------------------------------------------------
# compiled cores (shared stencil layout with uu)


@njit(cache=True, fastmath=True)
def _c1_core(gpad, hpad, inner, off, c1, w1, c2, w2, bw, out):
    n_nodes = inner.shape[0]
    for m in range(off.shape[0]):
        o2 = off[m]
        w = bw[m]
        for k in range(n_nodes):
            i = inner[k]
            gp = (
                w1[m, 0] * gpad[i + c1[m, 0]] + w1[m, 1] * gpad[i + c1[m, 1]]
                + w1[m, 2] * gpad[i + c1[m, 2]] + w1[m, 3] * gpad[i + c1[m, 3]]
                + w1[m, 4] * gpad[i + c1[m, 4]] + w1[m, 5] * gpad[i + c1[m, 5]]
                + w1[m, 6] * gpad[i + c1[m, 6]] + w1[m, 7] * gpad[i + c1[m, 7]]
            )
            hp = (
                w2[m, 0] * hpad[i + c2[m, 0]] + w2[m, 1] * hpad[i + c2[m, 1]]
                + w2[m, 2] * hpad[i + c2[m, 2]] + w2[m, 3] * hpad[i + c2[m, 3]]
                + w2[m, 4] * hpad[i + c2[m, 4]] + w2[m, 5] * hpad[i + c2[m, 5]]
                + w2[m, 6] * hpad[i + c2[m, 6]] + w2[m, 7] * hpad[i + c2[m, 7]]
            )
            out[k] += w * (gp * hp - gpad[i] * hpad[i + o2])
    return out


@njit(cache=True, fastmath=True)
def _c2_core(gpad, hpad, wpad, inner, off, c1, w1, c2, w2, bw, out):
    n_nodes = inner.shape[0]
    for m in range(off.shape[0]):
        o2 = off[m]
        w = bw[m]
        for k in range(n_nodes):
            i = inner[k]
            gp = (
                w1[m, 0] * gpad[i + c1[m, 0]] + w1[m, 1] * gpad[i + c1[m, 1]]
                + w1[m, 2] * gpad[i + c1[m, 2]] + w1[m, 3] * gpad[i + c1[m, 3]]
                + w1[m, 4] * gpad[i + c1[m, 4]] + w1[m, 5] * gpad[i + c1[m, 5]]
                + w1[m, 6] * gpad[i + c1[m, 6]] + w1[m, 7] * gpad[i + c1[m, 7]]
            )
            hp = (
                w2[m, 0] * hpad[i + c2[m, 0]] + w2[m, 1] * hpad[i + c2[m, 1]]
                + w2[m, 2] * hpad[i + c2[m, 2]] + w2[m, 3] * hpad[i + c2[m, 3]]
                + w2[m, 4] * hpad[i + c2[m, 4]] + w2[m, 5] * hpad[i + c2[m, 5]]
                + w2[m, 6] * hpad[i + c2[m, 6]] + w2[m, 7] * hpad[i + c2[m, 7]]
            )
            wp1 = (
                w1[m, 0] * wpad[i + c1[m, 0]] + w1[m, 1] * wpad[i + c1[m, 1]]
                + w1[m, 2] * wpad[i + c1[m, 2]] + w1[m, 3] * wpad[i + c1[m, 3]]
                + w1[m, 4] * wpad[i + c1[m, 4]] + w1[m, 5] * wpad[i + c1[m, 5]]
                + w1[m, 6] * wpad[i + c1[m, 6]] + w1[m, 7] * wpad[i + c1[m, 7]]
            )
            wp2 = (
                w2[m, 0] * wpad[i + c2[m, 0]] + w2[m, 1] * wpad[i + c2[m, 1]]
                + w2[m, 2] * wpad[i + c2[m, 2]] + w2[m, 3] * wpad[i + c2[m, 3]]
                + w2[m, 4] * wpad[i + c2[m, 4]] + w2[m, 5] * wpad[i + c2[m, 5]]
                + w2[m, 6] * wpad[i + c2[m, 6]] + w2[m, 7] * wpad[i + c2[m, 7]]
            )
            g1 = gpad[i]
            h2 = hpad[i + o2]
            gain = gp * hp
            loss = g1 * h2
            out[k] += w * (
                gain * wpad[i] + gain * wpad[i + o2] - loss * wp1 - loss * wp2
            )
    return out


@njit(cache=True, fastmath=True)
def _c3_core(p_pad, q_pad, r_pad, s_pad, inner, off, c1, w1, c2, w2, bw,
             out, scale):
    n_nodes = inner.shape[0]
    for m in range(off.shape[0]):
        o2 = off[m]
        w = bw[m]
        for k in range(n_nodes):
            i = inner[k]
            pp = (
                w1[m, 0] * p_pad[i + c1[m, 0]] + w1[m, 1] * p_pad[i + c1[m, 1]]
                + w1[m, 2] * p_pad[i + c1[m, 2]] + w1[m, 3] * p_pad[i + c1[m, 3]]
                + w1[m, 4] * p_pad[i + c1[m, 4]] + w1[m, 5] * p_pad[i + c1[m, 5]]
                + w1[m, 6] * p_pad[i + c1[m, 6]] + w1[m, 7] * p_pad[i + c1[m, 7]]
            )
            qp = (
                w2[m, 0] * q_pad[i + c2[m, 0]] + w2[m, 1] * q_pad[i + c2[m, 1]]
                + w2[m, 2] * q_pad[i + c2[m, 2]] + w2[m, 3] * q_pad[i + c2[m, 3]]
                + w2[m, 4] * q_pad[i + c2[m, 4]] + w2[m, 5] * q_pad[i + c2[m, 5]]
                + w2[m, 6] * q_pad[i + c2[m, 6]] + w2[m, 7] * q_pad[i + c2[m, 7]]
            )
            rp = (
                w2[m, 0] * r_pad[i + c2[m, 0]] + w2[m, 1] * r_pad[i + c2[m, 1]]
                + w2[m, 2] * r_pad[i + c2[m, 2]] + w2[m, 3] * r_pad[i + c2[m, 3]]
                + w2[m, 4] * r_pad[i + c2[m, 4]] + w2[m, 5] * r_pad[i + c2[m, 5]]
                + w2[m, 6] * r_pad[i + c2[m, 6]] + w2[m, 7] * r_pad[i + c2[m, 7]]
            )
            sp = (
                w1[m, 0] * s_pad[i + c1[m, 0]] + w1[m, 1] * s_pad[i + c1[m, 1]]
                + w1[m, 2] * s_pad[i + c1[m, 2]] + w1[m, 3] * s_pad[i + c1[m, 3]]
                + w1[m, 4] * s_pad[i + c1[m, 4]] + w1[m, 5] * s_pad[i + c1[m, 5]]
                + w1[m, 6] * s_pad[i + c1[m, 6]] + w1[m, 7] * s_pad[i + c1[m, 7]]
            )
            # gain: F(v1', v2', v2, v1); loss: F(v1, v2, v2', v1')
            t_gain = pp * qp * r_pad[i + o2] * s_pad[i]
            t_loss = p_pad[i] * q_pad[i + o2] * rp * sp
            out[k] += w * (t_gain - t_loss)
            a = t_gain if t_gain >= 0.0 else -t_gain
            b = t_loss if t_loss >= 0.0 else -t_loss
            scale[k] += w * (a if a >= b else b)
    return out, scale


# ---------------------------------------------------------------------------
# operators


def _stencil_for(field, kernel, quad) -> CollisionStencil:
    return build_stencil(field.n_v, field.box_l, kernel, quad)


def _c1_pair(g: DensityField, h: DensityField, kernel, quad):
    """int dv2 domega B [g(v1') h(v2') - g(v1) h(v2)] as a grid field."""
    st = _stencil_for(g, kernel, quad)
    out = np.zeros(st.inner_flat.shape[0])
    _c1_core(st.pad_field(g.values), st.pad_field(h.values), st.inner_flat,
             st.off_flat, st.corner1, st.w1, st.corner2, st.w2, st.bw, out)
    return g.like(out.reshape((g.n_v,) * 3))


def _c2_triple(g, h, w, alpha, kernel, quad):
    """-alpha int dv2 domega B [gain*(w(v1)+w(v2)) - loss*(w(v1')+w(v2'))]."""
    st = _stencil_for(g, kernel, quad)
    out = np.zeros(st.inner_flat.shape[0])
    _c2_core(st.pad_field(g.values), st.pad_field(h.values),
             st.pad_field(w.values), st.inner_flat, st.off_flat,
             st.corner1, st.w1, st.corner2, st.w2, st.bw, out)
    return g.like(-alpha * out.reshape((g.n_v,) * 3))


def apply_C1(fk1: ProductGridFunction, k, kernel, quad):
    """C_{k,k+1} on a factored order-(k+1) input; k in {1, 2}.

    Returns a DensityField for k=1, a PairFunction for k=2.
    """
    if k not in (1, 2):
        raise ConfigError("k must be 1 or 2")
    if fk1.order != k + 1:
        raise ConfigError(_ORDER_MSG.format(s=1))
    if k == 1:
        g, h = fk1.factors
        return _c1_pair(g, h, kernel, quad)
    f1, f2, f3 = fk1.factors
    t1 = _c1_pair(f1, f3, kernel, quad)  # collision on (v1, v3)
    t2 = _c1_pair(f2, f3, kernel, quad)  # collision on (v2, v3)
    return PairFunction([(t1.values, f2.values), (f1.values, t2.values)])


def apply_C2(fk2: ProductGridFunction, k, alpha, kernel, quad):
    """C_{k,k+2} on a factored order-(k+2) input; k in {1, 2}."""
    if k not in (1, 2):
        raise ConfigError("k must be 1 or 2")
    if fk2.order != k + 2:
        raise ConfigError(_ORDER_MSG.format(s=2))
    if alpha == 0.0:
        if k == 1:
            f = fk2.grid_field
            return f.like(np.zeros_like(f.values))
        return PairFunction([])
    if k == 1:
        g, h, w = fk2.factors
        return _c2_triple(g, h, w, alpha, kernel, quad)
    f1, f2, f3, f4 = fk2.factors
    t1 = _c2_triple(f1, f3, f4, alpha, kernel, quad)
    t2 = _c2_triple(f2, f3, f4, alpha, kernel, quad)
    return PairFunction([(t1.values, f2.values), (f1.values, t2.values)])


def check_C3_nullity(f, k, kernel, quad, factors=None):
    """Evaluate C_{k,k+3} on a factored order-(k+3) input.

    Returns (max_abs_value, max_term_scale): for symmetric inputs the
    two bracket terms carry identical variable multisets, so the value
    is pure rounding relative to the term scale.  Passing non-symmetric
    `factors` (length k+3) exercises the check's power.
    """
    if k not in (1, 2):
        raise ConfigError("k must be 1 or 2")
    if factors is None:
        factors = [f] * (k + 3)
    if len(factors) != k + 3:
        raise ConfigError(_ORDER_MSG.format(s=3))
    alpha = f.alpha
    st = _stencil_for(factors[0], kernel, quad)

    def run(p, q, r, s):
        out = np.zeros(st.inner_flat.shape[0])
        scale = np.zeros(st.inner_flat.shape[0])
        _c3_core(st.pad_field(p.values), st.pad_field(q.values),
                 st.pad_field(r.values), st.pad_field(s.values),
                 st.inner_flat, st.off_flat, st.corner1, st.w1, st.corner2,
                 st.w2, st.bw, out, scale)
        return out, scale

    if k == 1:
        # F(v1', v2', v2, v1) - F(v1, v2, v2', v1') on factors (p,q,r,s)
        p, q, r, s = factors
        out, scale = run(p, q, r, s)
        amp = alpha * alpha
        return amp * float(np.max(np.abs(out))), amp * float(np.max(scale))
    # k = 2: collision on (v_i, v_3); the spectator factor is bounded by
    # its max, so the reduction mirrors apply_C1/apply_C2
    p1, p2, q, r, s = factors
    out_a, scale_a = run(p1, q, r, s)
    out_b, scale_b = run(p2, q, r, s)
    amp = alpha * alpha
    max_b2 = float(np.max(np.abs(p2.values)))
    max_b1 = float(np.max(np.abs(p1.values)))
    val = amp * max(
        float(np.max(np.abs(out_a))) * max_b2,
        float(np.max(np.abs(out_b))) * max_b1,
    )
    scl = amp * max(float(np.max(scale_a)) * max_b2,
                    float(np.max(scale_b)) * max_b1)
    return val, scl


def factorization_consistency(f: DensityField, kernel, quad):
    """Relative residual of C_{1,2} f^(x)2 + C_{1,3} f^(x)3 against Q(f).

    Both paths run the identical stencil, so the residual is floating
    reordering only.  Returns 0 for identically zero fields.
    """
    from .uu import collision_operator

    q = collision_operator(f, kernel, quad)
    c1 = apply_C1(ProductGridFunction.power(f, 2), 1, kernel, quad)
    c2 = apply_C2(ProductGridFunction.power(f, 3), 1, f.alpha, kernel, quad)
    num = float(np.max(np.abs(c1.values + c2.values - q.values)))
    den = float(np.max(np.abs(q.values)))
    if den == 0.0:
        return 0.0
    return num / den
