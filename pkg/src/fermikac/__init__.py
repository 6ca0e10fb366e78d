"""Exclusion-constrained Kac particle simulator with a fermionic
Uehling-Uhlenbeck reference solver and hierarchy-operator verifiers."""

from .errors import (
    AdmissibilityError,
    ConfigError,
    FermikacError,
    NumericalError,
    SaturationError,
)
from .grid import CellGrid, build_occupancy, cell_of, is_admissible
from .hierarchy import (
    ProductGridFunction,
    SymmetricGridFunction,
    apply_C1,
    apply_C2,
    check_C3_nullity,
    factorization_consistency,
)
from .initdata import (
    DoubleBump,
    LimitMarginal,
    OneParticleDensity,
    TruncatedMaxwellian,
    UniformBox,
    builtin_profiles,
    sample_conditioned_product,
    sample_two_scale,
    solve_a,
)
from .kernel import CrossSectionSpec, collide, eval_kernel, sample_omega
from .observables import (
    CompactBox,
    MarginalEstimate,
    chaos_defect,
    delta_norm,
    estimate_marginal,
    fermi_entropy,
    l1_distance,
    merge_estimates,
)
from .process import (
    EventOutcome,
    ParticleEnsemble,
    SimConfig,
    advance,
    attempt_event,
    generator_apply_k2,
    majorant_rate,
)
from .uu import (
    DensityField,
    SphereQuadrature,
    collision_operator,
    fermi_dirac,
    field_from_function,
    solve,
    sphere_quadrature,
    step,
)

__version__ = "0.1.0"
