"""Exact-diagonalization audits of thermalization and the eigenstate
thermalization hypothesis for small system-bath spin chains."""

__version__ = "0.1.0"

from .hilbert import (  # noqa: E402
    SpaceShape,
    partial_trace_bath,
    partial_trace_system,
    tensor_product,
    trace_norm,
    operator_norm,
    trace_distance,
)
from .models import ModelSpec, build_hamiltonian, default_spec, verify_split  # noqa: E402
from .spectral import (  # noqa: E402
    diagonalize,
    diagonalize_bath,
    dephase,
    equilibrium_state,
    evolve_reduced,
)
from .shells import make_shell, microcanonical_reduced, leakage_bound_check  # noqa: E402
from .thermo import kernel_sensitivity, thermo_profile, theorem1_constants  # noqa: E402
from .analysis import (  # noqa: E402
    eth_scan,
    therm_scan,
    lemma1_check,
    prop1_check,
    eigenstate_bound_check,
    theorem1_audit,
)
