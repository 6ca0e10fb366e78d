"""Structural identities of the limiting collision hierarchy.

Three checks, all on the same quadrature stencil the solver uses:
the order-(k+3) operator vanishes identically on symmetric arguments
(its two terms carry the same variable multiset); it does not vanish
once the symmetry is broken; and on factorized states the first two
hierarchy operators reassemble the U-U collision operator exactly.
"""

import numpy as np

from fermikac import CrossSectionSpec
from fermikac.hierarchy import (
    ProductGridFunction,
    apply_C1,
    apply_C2,
    check_C3_nullity,
    factorization_consistency,
)
from fermikac.uu import collision_operator, field_from_function, sphere_quadrature

alpha = 0.2
kern = CrossSectionSpec(b0=1.0, m_cut=1.2)
quad = sphere_quadrature(32)

def bump(shift, width):
    return field_from_function(
        lambda p: np.exp(-np.sum((p - np.asarray(shift)) ** 2, axis=1)
                         / (2 * width**2)),
        15, 3.0, alpha,
    )

f = bump((0.2, -0.1, 0.0), 0.8)
g = bump((0.6, 0.3, 0.0), 0.5)

val, scale = check_C3_nullity(f, 1, kern, quad)
print(f"order-(k+3) term on f x f x f x f : {val:.3e} "
      f"(term scale {scale:.3e}, ratio {val / scale:.1e})")
val_b, scale_b = check_C3_nullity(f, 1, kern, quad, factors=[f, g, f, g])
print(f"same with broken symmetry f,g,f,g : {val_b:.3e} "
      f"(ratio {val_b / scale_b:.1e} -- the cancellation is real, not a bug)")

r = factorization_consistency(f, kern, quad)
print(f"\n|C1 f^2 + C2 f^3 - Q(f)| / |Q(f)|  : {r:.3e}")

c1 = apply_C1(ProductGridFunction.power(f, 2), 1, kern, quad)
c2 = apply_C2(ProductGridFunction.power(f, 3), 1, alpha, kern, quad)
q = collision_operator(f, kern, quad)
print(f"term magnitudes: |C1| = {np.abs(c1.values).max():.3e}, "
      f"|C2| = {np.abs(c2.values).max():.3e}, |Q| = {np.abs(q.values).max():.3e}")
