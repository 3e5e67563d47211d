"""Network data model: architectures, activations, losses, forward pass,
and exact reverse-mode gradients of the loss with respect to all
weights and biases.

Conventions used throughout the package:

* ``W[m]`` has shape ``(N_{m+1}, N_m)`` and ``b[m]`` length ``N_{m+1}``,
  for ``m = 0 .. M-1``.
* Pre-activation lists are 1-indexed conceptually: list slot ``k``
  holds the layer-(k+1) pre-activation, so ``z[0]`` is the first
  hidden pre-activation and ``z[-1]`` is the network output.  The
  input vector is the layer-0 activation and is never stored inside a
  NeuronState.
* The final activation is the identity: the output equals the last
  pre-activation.
* All arithmetic is float64.  Operations are pure functions; no module
  holds mutable state.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataDomainError, NumericError


# ---------------------------------------------------------------------------
# activations


@dataclass(frozen=True)
class Activation:
    """Scalar nonlinearity with closed-form first and second derivatives."""

    name: str
    f: callable
    df: callable
    d2f: callable


def _sigmoid(z):
    # stable in both tails
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_prime(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


def _sigmoid_second(z):
    s = _sigmoid(z)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _tanh_prime(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _tanh_second(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_prime(z):
    # derivative at the kink is defined as 0
    return (z > 0.0).astype(np.float64)


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


ACTIVATIONS = {
    "identity": Activation(
        "identity",
        lambda z: np.asarray(z, dtype=np.float64),
        lambda z: np.ones_like(z, dtype=np.float64),
        lambda z: np.zeros_like(z, dtype=np.float64),
    ),
    "tanh": Activation("tanh", np.tanh, _tanh_prime, _tanh_second),
    "sigmoid": Activation("sigmoid", _sigmoid, _sigmoid_prime, _sigmoid_second),
    "relu": Activation("relu", _relu, _relu_prime, lambda z: np.zeros_like(z)),
    "softplus": Activation("softplus", _softplus, _sigmoid, _sigmoid_prime),
}

LOSS_KINDS = ("mse", "cross_entropy", "kl_divergence", "hinge")


def get_activation(tag):
    try:
        return ACTIVATIONS[tag]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation '{tag}' (choose from {sorted(ACTIVATIONS)})"
        ) from None


# ---------------------------------------------------------------------------
# architecture and states


@dataclass(frozen=True)
class Architecture:
    """Layer widths plus activation and loss tags.

    ``widths`` lists N_0 .. N_M, so the number of weight layers is
    ``len(widths) - 1``.
    """

    widths: tuple
    activation: str = "tanh"
    loss: str = "mse"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ConfigurationError("architecture needs at least one weight layer")
        if any(w < 1 for w in self.widths):
            raise ConfigurationError(f"all widths must be >= 1, got {self.widths}")
        get_activation(self.activation)
        if self.loss not in LOSS_KINDS:
            raise ConfigurationError(
                f"unknown loss '{self.loss}' (choose from {LOSS_KINDS})"
            )
        if self.loss == "hinge" and self.widths[-1] != 1:
            raise ConfigurationError("hinge loss requires a scalar output layer")

    @property
    def depth(self):
        """Number of weight layers M."""
        return len(self.widths) - 1

    @property
    def act(self):
        return get_activation(self.activation)


@dataclass
class ParamState:
    """Weights, biases, and their time derivatives."""

    W: list
    b: list
    Wdot: list = None
    bdot: list = None

    def __post_init__(self):
        self.W = [np.asarray(w, dtype=np.float64) for w in self.W]
        self.b = [np.asarray(v, dtype=np.float64) for v in self.b]
        if self.Wdot is None:
            self.Wdot = [np.zeros_like(w) for w in self.W]
        else:
            self.Wdot = [np.asarray(w, dtype=np.float64) for w in self.Wdot]
        if self.bdot is None:
            self.bdot = [np.zeros_like(v) for v in self.b]
        else:
            self.bdot = [np.asarray(v, dtype=np.float64) for v in self.bdot]

    @classmethod
    def zeros(cls, arch):
        W = [np.zeros((arch.widths[m + 1], arch.widths[m])) for m in range(arch.depth)]
        b = [np.zeros(arch.widths[m + 1]) for m in range(arch.depth)]
        return cls(W, b)

    @classmethod
    def random(cls, arch, rng, velocity_scale=0.0):
        """Standard-normal entries, weights scaled by 1/sqrt(fan-in)."""
        W, b, Wd, bd = [], [], [], []
        for m in range(arch.depth):
            n_out, n_in = arch.widths[m + 1], arch.widths[m]
            s = 1.0 / np.sqrt(n_in)
            W.append(rng.standard_normal((n_out, n_in)) * s)
            b.append(rng.standard_normal(n_out))
            Wd.append(rng.standard_normal((n_out, n_in)) * s * velocity_scale)
            bd.append(rng.standard_normal(n_out) * velocity_scale)
        return cls(W, b, Wd, bd)

    def copy(self):
        return ParamState(
            [w.copy() for w in self.W],
            [v.copy() for v in self.b],
            [w.copy() for w in self.Wdot],
            [v.copy() for v in self.bdot],
        )

    def check_shapes(self, arch):
        if len(self.W) != arch.depth or len(self.b) != arch.depth:
            raise ConfigurationError(
                f"parameter state has {len(self.W)} layers, architecture {arch.depth}"
            )
        for m in range(arch.depth):
            want = (arch.widths[m + 1], arch.widths[m])
            if self.W[m].shape != want:
                raise ConfigurationError(
                    f"W[{m}] has shape {self.W[m].shape}, expected {want}"
                )
            if self.b[m].shape != (arch.widths[m + 1],):
                raise ConfigurationError(
                    f"b[{m}] has length {self.b[m].shape}, expected {arch.widths[m + 1]}"
                )

    # flat-vector view used by the integrators -----------------------------

    def to_vector(self):
        return np.concatenate(
            [w.ravel() for w in self.W] + [v.ravel() for v in self.b]
        )

    def velocity_vector(self):
        return np.concatenate(
            [w.ravel() for w in self.Wdot] + [v.ravel() for v in self.bdot]
        )

    @classmethod
    def from_vector(cls, vec, arch, velocity=None):
        W, b = unpack_vector(vec, arch)
        if velocity is None:
            return cls(W, b)
        Wd, bd = unpack_vector(velocity, arch)
        return cls(W, b, Wd, bd)


def pack_grads(gW, gb):
    return np.concatenate([g.ravel() for g in gW] + [g.ravel() for g in gb])


def unpack_vector(vec, arch):
    W, b = [], []
    off = 0
    for m in range(arch.depth):
        n = arch.widths[m + 1] * arch.widths[m]
        W.append(vec[off : off + n].reshape(arch.widths[m + 1], arch.widths[m]).copy())
        off += n
    for m in range(arch.depth):
        n = arch.widths[m + 1]
        b.append(vec[off : off + n].copy())
        off += n
    return W, b


@dataclass
class NeuronState:
    """Pre-activations produced by the forward pass.

    ``z[k]`` is the layer-(k+1) pre-activation; ``h[k]`` caches
    sigma(z[k]) for hidden layers only (the output stays raw).  ``zdot``
    is filled by the velocity pushforward when needed.
    """

    z: list
    h: list
    zdot: list = None

    @property
    def output(self):
        return self.z[-1]


@dataclass
class Sample:
    """One (input, target) pair with its continuous-time hold duration."""

    x: np.ndarray
    y: np.ndarray
    hold_duration: float = 1.0

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=np.float64))
        self.y = np.atleast_1d(np.asarray(self.y, dtype=np.float64))
        if self.hold_duration <= 0:
            raise ConfigurationError("hold_duration must be positive")


# ---------------------------------------------------------------------------
# forward pass


def forward(params, x, arch):
    """Run the layer recursion and return every pre-activation.

    Raises NumericError naming the first layer whose pre-activation is
    non-finite.
    """
    params.check_shapes(arch)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arch.widths[0],):
        raise ConfigurationError(
            f"input has shape {x.shape}, expected ({arch.widths[0]},)"
        )
    act = arch.act
    z_list, h_list = [], []
    h = x
    for m in range(arch.depth):
        z = params.W[m] @ h + params.b[m]
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite pre-activation at layer {m + 1}")
        z_list.append(z)
        if m < arch.depth - 1:
            h = act.f(z)
            h_list.append(h)
    return NeuronState(z=z_list, h=h_list)


# ---------------------------------------------------------------------------
# losses


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def _check_probability_target(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or abs(float(np.sum(y)) - 1.0) > 1e-12:
        raise DataDomainError(
            "target must be a probability vector (nonnegative, summing to 1)"
        )
    return y


def _check_hinge_target(z, y):
    if np.size(z) != 1:
        raise ConfigurationError("hinge loss requires a scalar network output")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape != (1,) or abs(y[0]) != 1.0:
        raise DataDomainError("hinge target must be a single +1/-1 label")
    return y


def loss(z_out, y, kind):
    """Scalar loss of an output vector against a target."""
    z = np.atleast_1d(np.asarray(z_out, dtype=np.float64))
    if kind == "mse":
        y = np.asarray(y, dtype=np.float64)
        if y.shape != z.shape:
            raise ConfigurationError(f"target shape {y.shape} != output {z.shape}")
        d = z - y
        return float(np.dot(d, d))
    if kind == "cross_entropy":
        p = _check_probability_target(y)
        q = softmax(z)
        return float(-np.sum(np.where(p > 0, p * np.log(q), 0.0)))
    if kind == "kl_divergence":
        p = _check_probability_target(y)
        q = softmax(z)
        return float(np.sum(np.where(p > 0, p * np.log(p / q), 0.0)))
    if kind == "hinge":
        y = _check_hinge_target(z, y)
        return float(max(0.0, 1.0 - z[0] * y[0]))
    raise ConfigurationError(f"unknown loss '{kind}'")


def loss_grad_output(z_out, y, kind):
    """Gradient of the loss with respect to the network output."""
    z = np.atleast_1d(np.asarray(z_out, dtype=np.float64))
    if kind == "mse":
        return 2.0 * (z - np.asarray(y, dtype=np.float64))
    if kind in ("cross_entropy", "kl_divergence"):
        p = _check_probability_target(y)
        return softmax(z) - p
    if kind == "hinge":
        y = _check_hinge_target(z, y)
        # subgradient 0 on the flat side and at the kink
        if z[0] * y[0] < 1.0:
            return -y.copy()
        return np.zeros(1)
    raise ConfigurationError(f"unknown loss '{kind}'")


# ---------------------------------------------------------------------------
# reverse-mode gradients


def loss_and_param_grads(params, sample, arch):
    """Loss plus exact gradients with respect to every W[m] and b[m]."""
    neurons = forward(params, sample.x, arch)
    act = arch.act
    value = loss(neurons.output, sample.y, arch.loss)

    delta = loss_grad_output(neurons.output, sample.y, arch.loss)
    gW = [None] * arch.depth
    gb = [None] * arch.depth
    for m in range(arch.depth - 1, -1, -1):
        h_prev = sample.x if m == 0 else neurons.h[m - 1]
        gW[m] = np.outer(delta, h_prev)
        gb[m] = delta.copy()
        if m > 0:
            delta = (params.W[m].T @ delta) * act.df(neurons.z[m - 1])
    return value, gW, gb


def finite_difference_param_grads(params, sample, arch, step=1e-5):
    """Central finite differences of the loss; the slow cross-check
    behind the gradcheck experiment."""

    def f(p):
        n = forward(p, sample.x, arch)
        return loss(n.output, sample.y, arch.loss)

    gW = [np.zeros_like(w) for w in params.W]
    gb = [np.zeros_like(v) for v in params.b]
    work = params.copy()
    for m in range(arch.depth):
        w = work.W[m]
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + step
            fp = f(work)
            w[idx] = orig - step
            fm = f(work)
            w[idx] = orig
            gW[m][idx] = (fp - fm) / (2.0 * step)
        v = work.b[m]
        for i in range(v.size):
            orig = v[i]
            v[i] = orig + step
            fp = f(work)
            v[i] = orig - step
            fm = f(work)
            v[i] = orig
            gb[m][i] = (fp - fm) / (2.0 * step)
    return gW, gb


def max_grad_error(gW_a, gb_a, gW_b, gb_b, floor=1e-9):
    """Worst elementwise relative error between two gradient sets,
    with an absolute floor below which differences are ignored."""
    worst = 0.0
    for a, b in list(zip(gW_a, gW_b)) + list(zip(gb_a, gb_b)):
        diff = np.abs(a - b)
        scale = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
        ok = diff <= floor
        rel = np.where(ok, 0.0, diff / scale)
        worst = max(worst, float(np.max(rel)) if rel.size else 0.0)
    return worst
