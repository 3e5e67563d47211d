"""Change of variables from bias to pre-activation coordinates, the
induced velocity maps, and the split of the training Lagrangian into a
data-independent bulk and a data-dependent boundary.

Index bookkeeping for the split (fixed by requiring exact agreement
with the original-coordinate Lagrangian):

* bulk: weight kinetic terms for every coupling m = 0..M-1, neuron
  kinetic terms for layers 1..M, and cross/squared coupling terms for
  the interior couplings m = 1..M-1 only;
* boundary: the m = 0 coupling terms, which carry the input vector,
  plus the output loss.

The squared coupling terms support two coefficients: ``as_printed``
uses 1, ``chain_rule`` uses 1/2 (the value direct expansion of the
bias kinetic energy produces).  Audits evaluate both and report the
discrepancy instead of hiding it.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .netcore import (
    Architecture,
    ParamState,
    Sample,
    forward,
    loss,
)
from .dynamics import LagrangianBreakdown, lagrangian_original
from .rng import spawn_rngs

COEFFICIENT_MODES = ("as_printed", "chain_rule")


def _squared_coef(mode):
    if mode == "as_printed":
        return 1.0
    if mode == "chain_rule":
        return 0.5
    raise ConfigurationError(f"unknown coefficient mode '{mode}'")


@dataclass
class BbdState:
    """Network state in (W, z) coordinates with velocities and data.

    ``z[k]`` holds the layer-(k+1) pre-activation, as in NeuronState.
    ``xdot`` defaults to zero: piecewise-constant sampling freezes the
    input inside a hold, but smooth data schedules may set it.
    """

    W: list
    Wdot: list
    z: list
    zdot: list
    x: np.ndarray
    y: np.ndarray
    xdot: np.ndarray = None

    def __post_init__(self):
        self.W = [np.asarray(w, dtype=np.float64) for w in self.W]
        self.Wdot = [np.asarray(w, dtype=np.float64) for w in self.Wdot]
        self.z = [np.asarray(v, dtype=np.float64) for v in self.z]
        self.zdot = [np.asarray(v, dtype=np.float64) for v in self.zdot]
        self.x = np.atleast_1d(np.asarray(self.x, dtype=np.float64))
        self.y = np.atleast_1d(np.asarray(self.y, dtype=np.float64))
        if self.xdot is None:
            self.xdot = np.zeros_like(self.x)
        else:
            self.xdot = np.atleast_1d(np.asarray(self.xdot, dtype=np.float64))

    @property
    def output(self):
        return self.z[-1]

    def check_consistency(self, arch, tol=1e-12):
        """Verify the round trip z -> b -> forward -> z closes."""
        b = bias_from_neurons(self.W, self.z, self.x, arch)
        p = ParamState(self.W, b)
        neurons = forward(p, self.x, arch)
        worst = max(
            float(np.max(np.abs(neurons.z[m] - self.z[m])))
            for m in range(arch.depth)
        )
        if worst > tol:
            raise ConfigurationError(
                f"inconsistent BbdState: forward round trip deviates by {worst:.3e}"
            )
        return worst


# ---------------------------------------------------------------------------
# change of variables


def bias_from_neurons(W, z, x, arch):
    """Invert the forward recursion for the biases given neurons and input."""
    act = arch.act
    if len(W) != arch.depth or len(z) != arch.depth:
        raise ConfigurationError("W/z layer count does not match architecture")
    b = []
    h = np.asarray(x, dtype=np.float64)
    for m in range(arch.depth):
        b.append(z[m] - W[m] @ h)
        if m < arch.depth - 1:
            h = act.f(z[m])
    return b


def coupling_rate(W, Wdot, z, zdot, m, arch):
    """Row sums of d/dt(W sigma(z)) at interior coupling m >= 1."""
    act = arch.act
    return Wdot[m] @ act.f(z[m - 1]) + W[m] @ (act.df(z[m - 1]) * zdot[m - 1])


def input_coupling_rate(W0, W0dot, x, xdot):
    """Row sums of d/dt(W X) at the input coupling."""
    return W0dot @ x + W0 @ xdot


def neuron_velocity_pushforward(W, Wdot, bdot, z, x, xdot, arch):
    """Chain-rule map from parameter velocities to neuron velocities."""
    act = arch.act
    zdot = []
    zd = input_coupling_rate(W[0], Wdot[0], x, xdot) + bdot[0]
    zdot.append(zd)
    for m in range(1, arch.depth):
        zd = (
            Wdot[m] @ act.f(z[m - 1])
            + W[m] @ (act.df(z[m - 1]) * zdot[m - 1])
            + bdot[m]
        )
        zdot.append(zd)
    return zdot


def bias_velocity_from_neurons(state, arch):
    """Pull neuron velocities back to bias velocities (inverse map)."""
    bdot = [state.zdot[0] - input_coupling_rate(state.W[0], state.Wdot[0], state.x, state.xdot)]
    for m in range(1, arch.depth):
        bdot.append(
            state.zdot[m]
            - coupling_rate(state.W, state.Wdot, state.z, state.zdot, m, arch)
        )
    return bdot


def state_from_params(params, sample, arch, xdot=None):
    """Lift a (W, b) state with velocities into (W, z) coordinates."""
    neurons = forward(params, sample.x, arch)
    xd = np.zeros_like(sample.x) if xdot is None else xdot
    zdot = neuron_velocity_pushforward(
        params.W, params.Wdot, params.bdot, neurons.z, sample.x, xd, arch
    )
    return BbdState(
        W=params.W,
        Wdot=params.Wdot,
        z=neurons.z,
        zdot=zdot,
        x=sample.x,
        y=sample.y,
        xdot=xd,
    )


# ---------------------------------------------------------------------------
# bulk and boundary Lagrangians


@dataclass
class BulkResult:
    total: float
    per_layer: list  # coupling blocks m = 0..M-1; block 0 carries no cross/squared
    parts: dict


@dataclass
class BoundaryResult:
    total: float
    parts: dict


def lagrangian_bulk(state, arch, mode="chain_rule", _data_leak=0.0):
    """Data-independent block of the decomposed Lagrangian.

    per_layer[m] groups the terms attached to coupling m: the weight
    kinetic term at m, the neuron kinetic term at layer m+1, and (for
    interior m) the cross and squared coupling terms.  The blocks sum
    to the total, and block m reads fields at layers m and m+1 only.

    _data_leak is a test-only negative control: a nonzero value mixes
    the input vector into the result so sensitivity checks can confirm
    the data-independence audit would catch a contaminated evaluator.
    """
    coef = _squared_coef(mode)
    M = arch.depth
    per_layer = []
    kin_W = kin_z = cross = squared = 0.0
    for m in range(M):
        block_kin_w = 0.5 * float(np.sum(state.Wdot[m] * state.Wdot[m]))
        block_kin_z = 0.5 * float(np.dot(state.zdot[m], state.zdot[m]))
        block_cross = 0.0
        block_sq = 0.0
        if m >= 1:
            d = coupling_rate(state.W, state.Wdot, state.z, state.zdot, m, arch)
            block_cross = -float(np.dot(state.zdot[m], d))
            block_sq = coef * float(np.dot(d, d))
        per_layer.append(block_kin_w + block_kin_z + block_cross + block_sq)
        kin_W += block_kin_w
        kin_z += block_kin_z
        cross += block_cross
        squared += block_sq
    total = kin_W + kin_z + cross + squared
    if _data_leak:
        total += _data_leak * float(np.sum(state.x))
    return BulkResult(
        total=total,
        per_layer=per_layer,
        parts={
            "kinetic_W": kin_W,
            "kinetic_z": kin_z,
            "cross": cross,
            "squared": squared,
        },
    )


def lagrangian_boundary(state, arch, loss_kind=None, mode="chain_rule"):
    """Data-dependent block: input-coupling terms plus the output loss."""
    coef = _squared_coef(mode)
    kind = arch.loss if loss_kind is None else loss_kind
    r0 = input_coupling_rate(state.W[0], state.Wdot[0], state.x, state.xdot)
    input_sq = coef * float(np.dot(r0, r0))
    input_cross = -float(np.dot(state.zdot[0], r0))
    ell = loss(state.output, state.y, kind)
    return BoundaryResult(
        total=input_sq + input_cross - ell,
        parts={
            "input_squared": input_sq,
            "input_cross": input_cross,
            "loss": -ell,
        },
    )


def decomposed_breakdown(state, arch, mode="chain_rule"):
    """Full Lagrangian in (W, z) coordinates as a LagrangianBreakdown."""
    bulk = lagrangian_bulk(state, arch, mode)
    bnd = lagrangian_boundary(state, arch, mode=mode)
    return LagrangianBreakdown(
        kinetic_W=bulk.parts["kinetic_W"],
        kinetic_b_or_z=bulk.parts["kinetic_z"],
        cross_terms=bulk.parts["cross"] + bnd.parts["input_cross"],
        squared_terms=bulk.parts["squared"] + bnd.parts["input_squared"],
        loss_term=bnd.parts["loss"],
    )


# ---------------------------------------------------------------------------
# audits


@dataclass
class DecompositionTrial:
    depth: int
    widths: tuple
    activation: str
    loss: str
    l_original: float
    l_bulk: dict  # mode -> value
    l_boundary: dict
    mismatch: dict  # mode -> |orig - (bulk+boundary)| / max(1, |orig|)
    per_layer: list = None  # bulk coupling blocks in the requested mode


@dataclass
class DecompositionReport:
    trials: list
    max_mismatch: dict
    mean_mismatch: dict
    shipped_mode: str
    requested_mode: str

    def as_dict(self):
        return {
            "coefficient_modes": list(COEFFICIENT_MODES),
            "shipped_mode": self.shipped_mode,
            "requested_mode": self.requested_mode,
            "max_mismatch": self.max_mismatch,
            "mean_mismatch": self.mean_mismatch,
            "n_trials": len(self.trials),
            "trials": [
                {
                    "depth": t.depth,
                    "widths": list(t.widths),
                    "activation": t.activation,
                    "loss": t.loss,
                    "l_original": t.l_original,
                    "l_bulk": t.l_bulk,
                    "l_boundary": t.l_boundary,
                    "mismatch": t.mismatch,
                    "per_layer": t.per_layer,
                }
                for t in self.trials
            ],
        }


def random_target(rng, loss_kind, n_out):
    if loss_kind in ("cross_entropy", "kl_divergence"):
        return rng.dirichlet(np.ones(n_out))
    if loss_kind == "hinge":
        return np.array([1.0 if rng.random() < 0.5 else -1.0])
    return rng.standard_normal(n_out)


def _audit_trial(rng, depth_range, width_range, activation, loss_kind, include_xdot):
    d_lo, d_hi = depth_range
    w_lo, w_hi = width_range
    depth = int(rng.integers(d_lo, d_hi + 1))
    widths = [int(rng.integers(w_lo, w_hi + 1)) for _ in range(depth + 1)]
    if loss_kind == "hinge":
        widths[-1] = 1
    arch = Architecture(tuple(widths), activation=activation, loss=loss_kind)
    params = ParamState.random(arch, rng, velocity_scale=1.0)
    x = rng.standard_normal(arch.widths[0])
    xdot = rng.standard_normal(arch.widths[0]) if include_xdot else None
    y = random_target(rng, loss_kind, arch.widths[-1])
    sample = Sample(x, y)
    state = state_from_params(params, sample, arch, xdot=xdot)

    l_orig = lagrangian_original(params, sample, arch).total
    bulk, bnd, mism = {}, {}, {}
    per_layer = None
    for mode in COEFFICIENT_MODES:
        res = lagrangian_bulk(state, arch, mode)
        lbnd = lagrangian_boundary(state, arch, mode=mode).total
        bulk[mode] = res.total
        bnd[mode] = lbnd
        mism[mode] = abs(l_orig - (res.total + lbnd)) / max(1.0, abs(l_orig))
        if mode == "chain_rule":
            per_layer = res.per_layer
    return DecompositionTrial(
        depth=depth,
        widths=tuple(widths),
        activation=activation,
        loss=loss_kind,
        l_original=l_orig,
        l_bulk=bulk,
        l_boundary=bnd,
        mismatch=mism,
        per_layer=per_layer,
    )


def audit_decomposition(
    n_trials,
    depth_range=(1, 5),
    width_range=(1, 6),
    seed=0,
    mode="chain_rule",
    activations=None,
    losses=None,
    include_xdot=True,
    pool=None,
):
    """Monte-Carlo audit of the decomposition identity.

    Cycles through every requested activation/loss pair across trials,
    evaluating both squared-term coefficient conventions.  The shipped
    mode is the one meeting the 1e-10 identity tolerance (chain_rule in
    practice); the report keeps both so the discrepancy stays visible.
    """
    from .netcore import ACTIVATIONS, LOSS_KINDS

    acts = list(ACTIVATIONS) if activations is None else list(activations)
    kinds = list(LOSS_KINDS) if losses is None else list(losses)
    rngs = spawn_rngs(seed, n_trials)
    jobs = [
        (rngs[i], acts[i % len(acts)], kinds[(i // len(acts)) % len(kinds)])
        for i in range(n_trials)
    ]

    def run(job):
        rng, act_tag, loss_tag = job
        return _audit_trial(
            rng, depth_range, width_range, act_tag, loss_tag, include_xdot
        )

    if pool is None:
        trials = [run(j) for j in jobs]
    else:
        trials = list(pool.map(run, jobs))

    max_m = {m: max(t.mismatch[m] for t in trials) for m in COEFFICIENT_MODES}
    mean_m = {
        m: float(np.mean([t.mismatch[m] for t in trials])) for m in COEFFICIENT_MODES
    }
    passing = [m for m in COEFFICIENT_MODES if max_m[m] <= 1e-10]
    shipped = mode if mode in passing else (passing[0] if passing else mode)
    return DecompositionReport(
        trials=trials,
        max_mismatch=max_m,
        mean_mismatch=mean_m,
        shipped_mode=shipped,
        requested_mode=mode,
    )


# ---------------------------------------------------------------------------
# symmetry and data-independence checks


def random_bbd_state(arch, rng, xdot_scale=1.0):
    """Free draw of a (W, z) state; z is not tied to any input."""
    W, Wd, z, zd = [], [], [], []
    for m in range(arch.depth):
        n_out, n_in = arch.widths[m + 1], arch.widths[m]
        s = 1.0 / np.sqrt(n_in)
        W.append(rng.standard_normal((n_out, n_in)) * s)
        Wd.append(rng.standard_normal((n_out, n_in)) * s)
        z.append(rng.standard_normal(n_out))
        zd.append(rng.standard_normal(n_out))
    x = rng.standard_normal(arch.widths[0])
    xdot = rng.standard_normal(arch.widths[0]) * xdot_scale
    y = random_target(rng, arch.loss, arch.widths[-1])
    return BbdState(W=W, Wdot=Wd, z=z, zdot=zd, x=x, y=y, xdot=xdot)


def replicated_bbd_state(arch, rng):
    """Identical fields at every layer of a homogeneous architecture."""
    n = arch.widths[0]
    if any(w != n for w in arch.widths):
        raise ConfigurationError("replicated state needs equal widths")
    W = rng.standard_normal((n, n)) / np.sqrt(n)
    Wd = rng.standard_normal((n, n)) / np.sqrt(n)
    z = rng.standard_normal(n)
    zd = rng.standard_normal(n)
    x = rng.standard_normal(n)
    y = random_target(rng, arch.loss, n)
    return BbdState(
        W=[W.copy() for _ in range(arch.depth)],
        Wdot=[Wd.copy() for _ in range(arch.depth)],
        z=[z.copy() for _ in range(arch.depth)],
        zdot=[zd.copy() for _ in range(arch.depth)],
        x=x,
        y=y,
    )


@dataclass
class SymmetryReport:
    per_layer: list
    shifted_per_layer: list
    compared_pairs: list  # (m_original, m_shifted)
    max_deviation: float

    def as_dict(self):
        return {
            "per_layer": self.per_layer,
            "shifted_per_layer": self.shifted_per_layer,
            "compared_pairs": self.compared_pairs,
            "max_deviation": self.max_deviation,
        }


def translational_symmetry_check(state, arch, mode="chain_rule"):
    """Shift every layer field by one slot (cyclically) and verify the
    interior coupling blocks reproduce bit-exactly.

    Requires all widths equal: the cyclic shift maps boundary-adjacent
    couplings onto interior ones, which only type-checks on a fully
    homogeneous ladder.
    """
    if arch.depth < 3:
        raise ConfigurationError("symmetry check needs depth >= 3")
    n = arch.widths[0]
    if any(w != n for w in arch.widths):
        raise ConfigurationError(
            f"symmetry check needs a homogeneous architecture, got widths {arch.widths}"
        )
    shifted = BbdState(
        W=[state.W[-1]] + list(state.W[:-1]),
        Wdot=[state.Wdot[-1]] + list(state.Wdot[:-1]),
        z=[state.z[-1]] + list(state.z[:-1]),
        zdot=[state.zdot[-1]] + list(state.zdot[:-1]),
        x=state.x,
        y=state.y,
        xdot=state.xdot,
    )
    orig = lagrangian_bulk(state, arch, mode).per_layer
    shif = lagrangian_bulk(shifted, arch, mode).per_layer
    # block m of the original uses fields the shift moved to slot m+1;
    # comparable whenever neither block wraps, i.e. m = 1..M-2
    pairs = [(m, m + 1) for m in range(1, arch.depth - 1)]
    devs = [abs(orig[a] - shif[b]) for a, b in pairs]
    return SymmetryReport(
        per_layer=orig,
        shifted_per_layer=shif,
        compared_pairs=pairs,
        max_deviation=max(devs),
    )


@dataclass
class DataIndependenceReport:
    bulk_value: float
    deviations: list
    max_deviation: float
    corrupted: bool

    def as_dict(self):
        return {
            "bulk_value": self.bulk_value,
            "deviations": self.deviations,
            "max_deviation": self.max_deviation,
            "negative_control": self.corrupted,
        }


def data_independence_check(state, arch, n_data_draws=10, seed=0, corrupt_evaluator=False):
    """Re-evaluate the bulk under fresh (x, y, xdot) draws with internal
    fields pinned; any deviation means data leaked into the bulk.

    corrupt_evaluator=True routes through a deliberately contaminated
    evaluation (negative control) to prove the check has teeth.
    """
    leak = 1e-3 if corrupt_evaluator else 0.0
    base = lagrangian_bulk(state, arch, _data_leak=leak).total
    devs = []
    rngs = spawn_rngs(seed, n_data_draws)
    for rng in rngs:
        probe = BbdState(
            W=state.W,
            Wdot=state.Wdot,
            z=state.z,
            zdot=state.zdot,
            x=rng.standard_normal(arch.widths[0]),
            y=random_target(rng, arch.loss, arch.widths[-1]),
            xdot=rng.standard_normal(arch.widths[0]),
        )
        devs.append(abs(lagrangian_bulk(probe, arch, _data_leak=leak).total - base))
    return DataIndependenceReport(
        bulk_value=base,
        deviations=devs,
        max_deviation=max(devs),
        corrupted=corrupt_evaluator,
    )
