"""Friction gradient descent on convex problems: descent, regret and its bound.

For a convex loss with L-Lipschitz gradient and step size alpha <= 1/L, the
friction iterates w <- w - alpha * g(w) * grad should decrease the loss
monotonically, and the cumulative regret
    R(T) = sum_{t=1..T} (loss(w_t) - loss(w*))
should stay below ||w_1 - w*||^2 / (2 * alpha * g). Since g varies along the
run, the bound is evaluated with the smallest friction factor observed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Prng
from .optim import FrictionFunction, friction_factor

ELEMENTWISE = "elementwise"
SCALAR = "scalar"


class HypothesisViolation(ValueError):
    """Step size outside (0, 1/L]."""


@dataclass
class ConvexProblem:
    name: str
    kind: str  # "quadratic" or "logistic"
    dim: int
    w_star: np.ndarray
    lipschitz: float
    w1: np.ndarray
    A: np.ndarray | None = None
    X: np.ndarray | None = None
    y: np.ndarray | None = None
    loss_star: float = field(init=False)

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise ValueError("Lipschitz constant must be positive")
        self.loss_star = self.loss(self.w_star)

    def loss(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        if self.kind == "quadratic":
            d = w - self.w_star
            return float(0.5 * d @ (self.A @ d))
        z = self.X @ w
        return float(np.mean(np.logaddexp(0.0, z) - self.y * z))

    def grad(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if self.kind == "quadratic":
            return self.A @ (w - self.w_star)
        z = self.X @ w
        return self.X.T @ (_sigmoid(z) - self.y) / len(self.y)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def quadratic_problem(name: str, eigenvalues, w_star, w1, rng: Prng | None = None) -> ConvexProblem:
    """0.5 (w - w*)^T A (w - w*) with A = Q diag(eigenvalues) Q^T, Q random orthogonal."""
    eig = np.asarray(eigenvalues, dtype=np.float64)
    if np.any(eig < 0):
        raise ValueError("A must be positive semi-definite")
    d = eig.size
    if d > 1:
        q, r = np.linalg.qr(rng.normal((d, d)))
        q = q * np.sign(np.diag(r))
        A = q @ np.diag(eig) @ q.T
        A = 0.5 * (A + A.T)
    else:
        A = np.diag(eig)
    return ConvexProblem(name, "quadratic", d, np.asarray(w_star, float), float(eig.max()), np.asarray(w1, float), A=A)


def logistic_problem(name: str, X, y, w1) -> ConvexProblem:
    """Unregularized logistic regression; optimum solved by Newton's method."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    lip = 0.25 * float(np.linalg.eigvalsh(X.T @ X).max()) / n
    w = np.zeros(d)
    for _ in range(100):
        p = _sigmoid(X @ w)
        g = X.T @ (p - y) / n
        if np.linalg.norm(g) < 1e-15:
            break
        H = (X * (p * (1 - p))[:, None]).T @ X / n
        w = w - np.linalg.solve(H, g)
    prob = ConvexProblem(name, "logistic", d, w, lip, np.asarray(w1, float), X=X, y=y)
    if np.linalg.norm(prob.grad(w)) >= 1e-8:
        raise ValueError(f"{name}: Newton solve did not reach the optimum (data may be separable)")
    return prob


def default_suite(seed: int = 7) -> list[ConvexProblem]:
    """Fixed problems in dimensions 1, 2 and 10 with pinned seeds."""
    rng = Prng(seed)
    probs = [
        quadratic_problem("quad-1d", [1.0], [0.5], [-1.0]),
        quadratic_problem("quad-2d", [1.0, 4.0], rng.uniform(-1, 1, size=2), rng.uniform(-1, 1, size=2), rng),
        quadratic_problem("quad-10d", np.linspace(0.5, 5.0, 10), rng.uniform(-1, 1, size=10), rng.uniform(-1, 1, size=10), rng),
    ]
    for d, n in ((2, 40), (10, 80)):
        X = rng.normal((n, d))
        v = rng.uniform(-1, 1, size=d)
        # label noise keeps the classes overlapping so the optimum is finite
        y = ((X @ v + 1.5 * rng.normal(n)) > 0).astype(np.float64)
        probs.append(logistic_problem(f"logistic-{d}d", X, y, rng.uniform(-1, 1, size=d)))
    return probs


@dataclass
class RegretTrace:
    problem: str
    alpha: float
    mu: float
    losses: np.ndarray  # loss(w_t), t = 1..T
    loss_star: float
    g_min: np.ndarray  # smallest friction factor applied at step t
    w1: np.ndarray
    w_star: np.ndarray
    w_final: np.ndarray
    iterates: np.ndarray | None = None

    @property
    def summands(self) -> np.ndarray:
        return self.losses - self.loss_star

    @property
    def regret(self) -> np.ndarray:
        """Cumulative regret R(T) for every T."""
        return np.cumsum(self.summands)

    @property
    def gap(self) -> float:
        return float(self.losses[-1] - self.loss_star)


def _g(friction: FrictionFunction, w: np.ndarray, mode: str):
    if mode == SCALAR:
        return friction_factor(friction, float(np.mean(np.abs(w))))
    return friction_factor(friction, w)


def run_wf_convex(
    problem: ConvexProblem,
    alpha: float,
    friction: FrictionFunction,
    w1=None,
    T: int = 1000,
    force: bool = False,
    g_mode: str = ELEMENTWISE,
    record_iterates: bool = False,
) -> RegretTrace:
    """Iterate w <- w - alpha * g(w) * grad(w) for T steps.

    Once an iterate reproduces itself exactly the rest of the trace is filled
    in without further work; the iteration is deterministic, so this is exact.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    limit = 1.0 / problem.lipschitz
    if not alpha > 0 or (alpha > limit * (1 + 1e-12) and not force):
        raise HypothesisViolation(
            f"alpha={alpha!r} outside (0, 1/L={limit!r}] for {problem.name}; use force=True (CLI: --force-hypothesis-violation) to run anyway"
        )
    if g_mode not in (ELEMENTWISE, SCALAR):
        raise ValueError(f"unknown g_mode {g_mode!r}")
    w = np.array(problem.w1 if w1 is None else w1, dtype=np.float64)
    start = w.copy()
    losses = np.empty(T)
    gmins = np.empty(T)
    its = np.empty((T, w.size)) if record_iterates else None
    t = 0
    while t < T:
        losses[t] = problem.loss(w)
        g = _g(friction, w, g_mode)
        gmins[t] = np.min(g)
        if its is not None:
            its[t] = w
        w_next = w - alpha * (g * problem.grad(w))
        t += 1
        if np.array_equal(w_next, w):
            losses[t:] = losses[t - 1]
            gmins[t:] = gmins[t - 1]
            if its is not None:
                its[t:] = w
            break
        w = w_next
    return RegretTrace(problem.name, alpha, friction.mu, losses, problem.loss_star, gmins, start, problem.w_star.copy(), w, its)


def check_descent(trace: RegretTrace, tol: float = 1e-12) -> tuple[bool, int | None]:
    """(True, None) if losses never increase by more than tol, else (False, first t with L[t+1] > L[t] + tol)."""
    bad = np.nonzero(np.diff(trace.losses) > tol)[0]
    if bad.size:
        return False, int(bad[0])
    return True, None


@dataclass
class BoundReport:
    regret: float
    bound: float
    g_min: float
    holds: bool
    holds_all_T: bool
    margin: float
    diagnostic: str = ""


def regret_bound(alpha: float, g_min: float, w1, w_star) -> float:
    dist2 = float(np.sum((np.asarray(w1) - np.asarray(w_star)) ** 2))
    if g_min <= 0.0:
        return float("inf")
    return dist2 / (2.0 * alpha * g_min)


def check_regret_bound(trace: RegretTrace, alpha: float | None = None, w1=None, w_star=None) -> BoundReport:
    """Compare R(T) with ||w1 - w*||^2 / (2 alpha g_min).

    ``holds_all_T`` re-checks every prefix T using the smallest g seen up to T.
    """
    alpha = trace.alpha if alpha is None else alpha
    w1 = trace.w1 if w1 is None else w1
    w_star = trace.w_star if w_star is None else w_star
    g_min = float(trace.g_min.min())
    R = trace.regret
    bound = regret_bound(alpha, g_min, w1, w_star)
    diag = ""
    if not np.isfinite(bound):
        diag = "smallest friction factor is zero; bound is unbounded"
    dist2 = float(np.sum((np.asarray(w1) - np.asarray(w_star)) ** 2))
    prefix_g = np.minimum.accumulate(trace.g_min)
    with np.errstate(divide="ignore", over="ignore"):
        prefix_bounds = np.where(prefix_g > 0, dist2 / (2.0 * alpha * prefix_g), np.inf)
    # absolute slack for summation round-off when the bound is ~0
    slack = 1e-12 * max(1.0, float(np.max(np.abs(R))))
    holds_all = bool(np.all(R <= prefix_bounds + slack))
    return BoundReport(float(R[-1]), bound, g_min, bool(R[-1] <= bound + slack), holds_all, bound - float(R[-1]), diag)


@dataclass
class Comparison:
    wf: RegretTrace
    sgd: RegretTrace
    ratio: float
    movement_ok: bool


def compare_to_sgd(problem, alpha, friction, w1=None, T=1000, force=False, g_mode=ELEMENTWISE) -> Comparison:
    """Friction and plain descent from the same start.

    ``movement_ok`` checks, at every friction iterate, that each coordinate
    moves no more than a plain gradient step from that same point would.
    """
    wf = run_wf_convex(problem, alpha, friction, w1, T, force, g_mode, record_iterates=True)
    sgd = run_wf_convex(problem, alpha, FrictionFunction("identity", 0.0), w1, T, force)
    moves_ok = True
    for t in range(T - 1):
        w = wf.iterates[t]
        step_wf = np.abs(wf.iterates[t + 1] - w)
        step_sgd = np.abs(alpha * problem.grad(w))
        if np.any(step_wf > step_sgd * (1 + 1e-12) + 1e-300):
            moves_ok = False
            break
        if t > 0 and np.array_equal(wf.iterates[t + 1], w):
            break
    r_sgd = float(sgd.regret[-1])
    r_wf = float(wf.regret[-1])
    ratio = 1.0 if r_wf == r_sgd else (r_wf / r_sgd if r_sgd > 0 else float("inf"))
    return Comparison(wf, sgd, ratio, moves_ok)


@dataclass
class SuiteEntry:
    problem: str
    mu: float
    alpha: float
    steps: int
    descent_ok: bool
    descent_violation: int | None
    bound: BoundReport
    final_gap: float
    gap_ok: bool
    identical_to_sgd: bool | None


def run_suite(
    problems=None,
    mus=(0.0, 0.5, 1.0, 5.0),
    steps: int = 100000,
    alpha: float | None = None,
    force: bool = False,
    kind: str = "logistic_bell",
    g_mode: str = ELEMENTWISE,
    gap_tol: float = 1e-6,
) -> tuple[list[SuiteEntry], dict[tuple[str, float], RegretTrace]]:
    """Run every (problem, mu) pair at alpha = 1/L unless alpha is given."""
    problems = default_suite() if problems is None else problems
    entries, traces = [], {}
    for p in problems:
        a = 1.0 / p.lipschitz if alpha is None else alpha
        for mu in mus:
            fr = FrictionFunction(kind, mu)
            tr = run_wf_convex(p, a, fr, None, steps, force, g_mode)
            ok, idx = check_descent(tr)
            same = None
            if mu == 0.0 or kind == "identity":
                sgd = run_wf_convex(p, a, FrictionFunction("identity", 0.0), None, steps, force)
                same = bool(np.array_equal(sgd.losses, tr.losses) and np.array_equal(sgd.w_final, tr.w_final))
            entries.append(SuiteEntry(p.name, mu, a, steps, ok, idx, check_regret_bound(tr), tr.gap, tr.gap < gap_tol, same))
            traces[(p.name, mu)] = tr
    return entries, traces


def write_trace_csv(path, trace: RegretTrace, every: int = 1):
    """Columns: step, loss, regret, g_min (step is 1-based; last step always written)."""
    R = trace.regret
    T = len(trace.losses)
    rows = sorted(set(range(0, T, every)) | {T - 1})
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "regret", "g_min"])
        for t in rows:
            w.writerow([t + 1, repr(float(trace.losses[t])), repr(float(R[t])), repr(float(trace.g_min[t]))])
