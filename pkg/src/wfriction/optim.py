"""Parameter update rules: SGD, Adam and weight friction.

Weight friction scales each scalar parameter's SGD step by ``g(w)``, an even
bell-shaped function of the parameter's current value with ``g(0) = 1``.
Large-magnitude weights therefore move less than small ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import NumericError, ShapeError
from .nn import Gradients, Mlp

LOGISTIC_BELL = "logistic_bell"
GAUSSIAN_BELL = "gaussian_bell"
IDENTITY = "identity"
FRICTION_KINDS = (LOGISTIC_BELL, GAUSSIAN_BELL, IDENTITY)

SGD = "sgd"
ADAM = "adam"
WEIGHT_FRICTION = "weight_friction"
METHODS = (SGD, ADAM, WEIGHT_FRICTION)

DEFAULT_MU_GRID = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)

# keeps g strictly positive once exp() underflows
_G_FLOOR = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class FrictionFunction:
    kind: str = LOGISTIC_BELL
    mu: float = 1.0

    def __post_init__(self):
        if self.kind not in FRICTION_KINDS:
            raise ValueError(f"unknown friction kind {self.kind!r}; expected one of {FRICTION_KINDS}")
        if not (np.isfinite(self.mu) and self.mu >= 0):
            raise ValueError(f"mu must be a finite non-negative number, got {self.mu}")

    def __call__(self, w):
        return friction_factor(self, w)


def _g_into(f: FrictionFunction, w: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Write g(w) into ``out`` using no other temporaries.

    logistic_bell: 4 e^{mu w} / (1 + e^{mu w})^2, which equals
    1 / cosh(mu w / 2)^2; the cosh form needs one buffer and cannot produce
    inf/inf. gaussian_bell: e^{-mu w^2}.
    """
    if f.kind == IDENTITY or f.mu == 0.0:
        out.fill(1.0)
        return out
    if f.kind == LOGISTIC_BELL:
        np.multiply(w, 0.5 * f.mu, out=out)
        np.abs(out, out=out)
        with np.errstate(over="ignore"):
            np.cosh(out, out=out)
            np.square(out, out=out)
        np.reciprocal(out, out=out)
    else:
        with np.errstate(over="ignore"):
            np.square(w, out=out)
        out *= -f.mu
        np.exp(out, out=out)
    np.maximum(out, _G_FLOOR, out=out)
    return out


def _friction_update(f: FrictionFunction, p: np.ndarray, grad: np.ndarray, a: float) -> np.ndarray:
    """p - a * g(p) * grad in a single scratch buffer.

    Training hot path. For logistic_bell the product g * grad is formed as
    grad / cosh(mu p / 2)^2. Where cosh^2 overflows, g is below the float64
    floor and the step rounds to zero either way, so no clamp is needed.
    """
    if f.kind == IDENTITY or f.mu == 0.0:
        return p - a * grad
    if f.kind == LOGISTIC_BELL:
        buf = np.multiply(p, 0.5 * f.mu)
        with np.errstate(over="ignore"):
            np.cosh(buf, out=buf)
            buf *= buf
        np.divide(grad, buf, out=buf)
    else:
        with np.errstate(over="ignore"):
            buf = np.square(p)
        buf *= -f.mu
        np.exp(buf, out=buf)
        np.maximum(buf, _G_FLOOR, out=buf)
        buf *= grad
    buf *= a
    return np.subtract(p, buf, out=buf)


def friction_factor(f: FrictionFunction, w):
    """Evaluate g(w) elementwise; returns a float for scalar input."""
    arr = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("friction_factor needs finite weights")
    g = _g_into(f, arr, np.empty_like(arr))
    return float(g) if np.ndim(w) == 0 else g


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = SGD
    learning_rate: float = 0.01
    friction: FrictionFunction | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    apply_friction_to_biases: bool = False
    mu_schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown optimizer method {self.method!r}; expected one of {METHODS}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if (self.method == WEIGHT_FRICTION) != (self.friction is not None):
            raise ValueError("a friction function is required for weight_friction and only for it")
        if self.mu_schedule is not None:
            if self.method != WEIGHT_FRICTION:
                raise ValueError("mu_schedule only applies to weight_friction")
            if any(m < 0 for m in self.mu_schedule):
                raise ValueError("mu_schedule multipliers must be non-negative")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, model: Mlp) -> "AdamState":
        return cls([np.zeros_like(p) for p in model.params()], [np.zeros_like(p) for p in model.params()])

    @property
    def n_slots(self) -> int:
        return sum(a.size for a in self.m) + sum(a.size for a in self.v)


def _check(model: Mlp, grads: Gradients):
    grads.check_congruent(model)
    for g in grads.params():
        if not np.all(np.isfinite(g)):
            raise NumericError("gradient contains NaN or Inf")


def _rebuild(model: Mlp, flat: list[np.ndarray]) -> Mlp:
    return model.with_params(flat[0::2], flat[1::2])


def sgd_step(model: Mlp, grads: Gradients, cfg: OptimizerConfig) -> Mlp:
    _check(model, grads)
    a = cfg.learning_rate
    return _rebuild(model, [p - a * g for p, g in zip(model.params(), grads.params())])


def wf_step(model: Mlp, grads: Gradients, cfg: OptimizerConfig) -> Mlp:
    """w <- w - lr * g(w) * grad, with g taken at the pre-update weights."""
    if cfg.method != WEIGHT_FRICTION:
        raise ValueError(f"wf_step needs a weight_friction config, got {cfg.method}")
    _check(model, grads)
    a = cfg.learning_rate
    out = []
    for k, (p, g) in enumerate(zip(model.params(), grads.params())):
        is_bias = k % 2 == 1
        if is_bias and not cfg.apply_friction_to_biases:
            out.append(p - a * g)
        else:
            out.append(_friction_update(cfg.friction, p, g, a))
    return _rebuild(model, out)


def adam_step(model: Mlp, grads: Gradients, state: AdamState, cfg: OptimizerConfig) -> tuple[Mlp, AdamState]:
    _check(model, grads)
    if len(state.m) != len(model.params()) or any(m.shape != p.shape for m, p in zip(state.m, model.params())):
        raise ShapeError("Adam state does not mirror the model")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(model.params(), grads.params(), state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps))
        new_m.append(m)
        new_v.append(v)
    return _rebuild(model, new_p), AdamState(new_m, new_v, t)


def apply_mu_schedule(cfg: OptimizerConfig, epoch: int) -> FrictionFunction | None:
    """Friction in effect at ``epoch`` (0-based); the last multiplier persists."""
    if cfg.friction is None or not cfg.mu_schedule:
        return cfg.friction
    mult = cfg.mu_schedule[min(epoch, len(cfg.mu_schedule) - 1)]
    return replace(cfg.friction, mu=cfg.friction.mu * mult)


@dataclass
class Optimizer:
    """Stateful wrapper so training loops can call ``step`` uniformly."""

    cfg: OptimizerConfig
    adam: AdamState | None = None
    _effective: OptimizerConfig | None = field(default=None, repr=False)

    def start_epoch(self, epoch: int) -> float | None:
        """Apply the mu schedule for ``epoch``; returns the effective mu."""
        if self.cfg.method != WEIGHT_FRICTION:
            self._effective = self.cfg
            return None
        fr = apply_mu_schedule(self.cfg, epoch)
        self._effective = replace(self.cfg, friction=fr, mu_schedule=None)
        return fr.mu

    def step(self, model: Mlp, grads: Gradients) -> Mlp:
        cfg = self._effective or self.cfg
        if cfg.method == SGD:
            return sgd_step(model, grads, cfg)
        if cfg.method == WEIGHT_FRICTION:
            return wf_step(model, grads, cfg)
        if self.adam is None:
            self.adam = AdamState.zeros_like(model)
        model, self.adam = adam_step(model, grads, self.adam, cfg)
        return model

    def state_slots(self, model: Mlp) -> int:
        """Persistent float slots the optimizer holds beyond the parameters."""
        return 2 * model.n_params if self.cfg.method == ADAM else 0
