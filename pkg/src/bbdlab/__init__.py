"""bbdlab: a desk-scale laboratory for the Lagrangian dynamics of
neural-network training.

The package simulates single-sample gradient descent, its gradient-flow
limit, and the damped second-order dynamics behind it; splits the
training Lagrangian into a data-independent bulk and data-dependent
boundary via the bias-to-neuron change of variables; and studies the
continuum limit of a locally connected ring architecture on shrinking
lattices.
"""

__version__ = "0.1.0"

from .errors import BbdLabError, ConfigurationError, DataDomainError, NumericError
from .netcore import (
    ACTIVATIONS,
    LOSS_KINDS,
    Architecture,
    NeuronState,
    ParamState,
    Sample,
    forward,
    loss,
    loss_and_param_grads,
)
from .dynamics import (
    DynamicsConfig,
    LagrangianBreakdown,
    SampleSchedule,
    Trace,
    action,
    damped_integrate,
    el_residual,
    gradient_flow_integrate,
    lagrangian_original,
    run_sgd,
    sgd_step,
)
from .bbd import (
    BbdState,
    audit_decomposition,
    bias_from_neurons,
    data_independence_check,
    lagrangian_boundary,
    lagrangian_bulk,
    neuron_velocity_pushforward,
    state_from_params,
    translational_symmetry_check,
)
