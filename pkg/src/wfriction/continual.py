"""Sequential-task training harness, EWC baseline, mu gridsearch and cost accounting."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import NumericError, Prng, ShapeError, fisher_yates_permutation
from .data import LabeledDataset, PermutationTask, task_rows
from .nn import (
    Gradients,
    LayerSpec,
    Mlp,
    backward,
    evaluate_accuracy,
    forward,
    per_example_squared_gradient_sums,
    softmax,
    softmax_cross_entropy,
    xavier_init,
)
from .optim import ADAM, SGD, WEIGHT_FRICTION, FrictionFunction, Optimizer, OptimizerConfig

log = logging.getLogger(__name__)

VANILLA = "vanilla"
EWC = "ewc"
METHOD_TAGS = (VANILLA, WEIGHT_FRICTION, EWC)

# Published cost of each method relative to weight friction (weight friction = 1).
# Kept for side-by-side display; these methods are not implemented here.
REFERENCE_COST_RATIOS = {
    "time": {"a-gem": 2.16, "pnn": 1.98, "ewc": 1.29},
    "memory": {"pnn": 35.71, "a-gem": 3.57, "ewc": 3.04},
}


@dataclass
class Task:
    name: str
    train: LabeledDataset | PermutationTask
    test: LabeledDataset | PermutationTask
    epochs: int
    validation: LabeledDataset | PermutationTask | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"task {self.name}: epochs must be positive")


@dataclass
class TaskSequence:
    name: str
    tasks: list[Task]

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("a task sequence needs at least one task")

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class EwcConfig:
    lam: float = 100.0
    fisher_samples: int = 1000


@dataclass
class ContinualRunConfig:
    sequence: TaskSequence
    model_spec: list[LayerSpec]
    first_task_optimizer: OptimizerConfig
    subsequent_optimizer: OptimizerConfig
    seeds: list[int]
    method_tag: str = VANILLA
    batch_size: int = 64
    ewc: EwcConfig = field(default_factory=EwcConfig)
    reset_head: bool = False
    run_id: str = "run"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.method_tag not in METHOD_TAGS:
            raise ValueError(f"unknown method {self.method_tag!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        sub = self.subsequent_optimizer.method
        if self.method_tag == WEIGHT_FRICTION and sub != WEIGHT_FRICTION:
            raise ValueError("weight_friction runs need a weight_friction optimizer for later tasks")
        if self.method_tag != WEIGHT_FRICTION and sub == WEIGHT_FRICTION:
            raise ValueError(f"{self.method_tag} runs cannot use a weight_friction optimizer")
        if self.first_task_optimizer.method == WEIGHT_FRICTION:
            raise ValueError("friction is never applied to the first task")


@dataclass
class EwcState:
    lam: float
    fisher_sample_count: int
    anchors: list[list[np.ndarray]] = field(default_factory=list)
    importances: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def n_slots(self) -> int:
        return sum(a.size for anchor in self.anchors for a in anchor) + sum(
            f.size for imp in self.importances for f in imp
        )


@dataclass
class SeedResult:
    seed: int
    test: list[list[float]]  # row i: accuracies on tasks 0..i after training task i
    validation: list[list[float]] | None
    memory_units: int
    wall_time_seconds: float
    train_seconds: float
    records: list[dict]
    model: Mlp | None = None


@dataclass
class AccuracyMatrix:
    per_seed: dict[int, list[list[float]]]

    @property
    def n_tasks(self) -> int:
        return len(next(iter(self.per_seed.values())))

    def mean(self) -> list[list[float]]:
        seeds = sorted(self.per_seed)
        t = self.n_tasks
        return [[float(np.mean([self.per_seed[s][i][j] for s in seeds])) for j in range(i + 1)] for i in range(t)]

    def average_accuracy_after(self) -> list[float]:
        return [average_accuracy(row) for row in self.mean()]


@dataclass
class RunResult:
    config: ContinualRunConfig
    test: AccuracyMatrix
    validation: AccuracyMatrix | None
    memory_units: int
    wall_time_seconds: float
    records: list[dict]
    effective_mu: float | None = None
    models: dict[int, Mlp] = field(default_factory=dict)  # final model per seed

    @property
    def method(self) -> str:
        return self.config.method_tag


def average_accuracy(row) -> float:
    """Mean accuracy over the tasks seen so far."""
    row = list(row)
    if not row:
        raise ValueError("average_accuracy needs at least one task accuracy")
    return float(np.mean(row))


# ---------------------------------------------------------------- EWC


def ewc_estimate_fisher(model: Mlp, ds, sample_count: int, rng: Prng, chunk: int = 500) -> list[np.ndarray]:
    """Diagonal empirical Fisher at the model's own most likely labels.

    Mean over ``sample_count`` examples of the squared per-example gradient
    of log p(y_hat | x), y_hat = argmax of the model's prediction. Returned in
    ``Mlp.params()`` order.
    """
    n = len(ds)
    if sample_count > n:
        log.warning("fisher_sample_count %d exceeds dataset size %d; using %d", sample_count, n, n)
        sample_count = n
    if sample_count < 1:
        raise ValueError("fisher sample count must be positive")
    idx = np.sort(fisher_yates_permutation(rng, n)[:sample_count])
    total = Gradients.zeros_like(model)
    for lo in range(0, sample_count, chunk):
        rows = idx[lo : lo + chunk]
        logits, cache = forward(model, task_rows(ds, rows))
        p = softmax(logits)
        d = p.copy()
        d[np.arange(len(rows)), np.argmax(logits, axis=1)] -= 1.0
        sq = per_example_squared_gradient_sums(model, cache, d)
        total = Gradients([a + b for a, b in zip(total.weights, sq.weights)], [a + b for a, b in zip(total.biases, sq.biases)])
    return [f / sample_count for f in total.params()]


def ewc_penalized_gradients(grads: Gradients, model: Mlp, ewc: EwcState) -> Gradients:
    """grad + lam * sum_k F_k * (w - w*_k)."""
    grads.check_congruent(model)
    if not ewc.anchors:
        return grads
    flat = [g.copy() for g in grads.params()]
    params = model.params()
    for anchor, fisher in zip(ewc.anchors, ewc.importances):
        for i, (p, a, f) in enumerate(zip(params, anchor, fisher)):
            if p.shape != a.shape or p.shape != f.shape:
                raise ShapeError("EWC state does not match the model")
            flat[i] += ewc.lam * f * (p - a)
    return Gradients(flat[0::2], flat[1::2])


# ---------------------------------------------------------------- training


def train_task(
    model: Mlp,
    task: Task,
    opt: Optimizer,
    rng: Prng,
    batch_size: int,
    ewc: EwcState | None = None,
    on_epoch=None,
) -> Mlp:
    n = len(task.train)
    labels = task.train.labels
    for epoch in range(task.epochs):
        mu = opt.start_epoch(epoch)
        order = fisher_yates_permutation(rng, n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            logits, cache = forward(model, task_rows(task.train, idx))
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            grads = backward(model, cache, dlogits)
            if ewc is not None:
                grads = ewc_penalized_gradients(grads, model, ewc)
            model = opt.step(model, grads)
            losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)), mu)
    return model


def _accuracies(model: Mlp, splits) -> list[float]:
    return [evaluate_accuracy(model, s.inputs, s.labels) for s in splits]


def _optimizer_for(cfg: ContinualRunConfig, task_index: int) -> OptimizerConfig:
    return cfg.first_task_optimizer if task_index == 0 else cfg.subsequent_optimizer


def _first_task_key(cfg: ContinualRunConfig, seed: int):
    t = cfg.sequence.tasks[0]
    return (seed, id(t.train), t.epochs, cfg.first_task_optimizer, tuple(cfg.model_spec), cfg.batch_size)


def run_seed(cfg: ContinualRunConfig, seed: int, first_task_cache: dict | None = None) -> SeedResult:
    """Train one initialization through the whole sequence.

    A NumericError raised mid-run carries the records logged so far in its
    ``records`` attribute.
    """
    records: list[dict] = []
    try:
        return _run_seed(cfg, seed, first_task_cache, records)
    except NumericError as e:
        e.records = list(records)
        raise


def _run_seed(cfg: ContinualRunConfig, seed: int, first_task_cache: dict | None, records: list[dict]) -> SeedResult:
    start = time.perf_counter()
    train_seconds = 0.0
    master = Prng(seed)
    model = xavier_init(cfg.model_spec, master)
    task_seeds = [master.spawn_seed() for _ in cfg.sequence.tasks]
    has_val = all(t.validation is not None for t in cfg.sequence.tasks)
    ewc = EwcState(cfg.ewc.lam, cfg.ewc.fisher_samples) if cfg.method_tag == EWC else None
    test_rows: list[list[float]] = []
    val_rows: list[list[float]] = []
    peak_slots = 0
    n_tasks = len(cfg.sequence)

    for i, task in enumerate(cfg.sequence.tasks):
        ocfg = _optimizer_for(cfg, i)
        opt = Optimizer(ocfg)
        peak_slots = max(peak_slots, model.n_params + opt.state_slots(model) + (ewc.n_slots if ewc else 0))
        if i > 0 and cfg.reset_head:
            last = len(model.layers) - 1
            head = xavier_init([model.layers[last]], Prng(task_seeds[i]))
            model = model.with_params(model.weights[:last] + head.weights, model.biases[:last] + head.biases)

        def on_epoch(epoch, loss, mu, i=i):
            if not np.isfinite(loss):
                raise NumericError(f"seed {seed}, task {i}, epoch {epoch}: training loss is {loss}")
            records.append(
                {
                    "run_id": cfg.run_id,
                    "seed": seed,
                    "task": i,
                    "epoch": epoch,
                    "train_loss": loss,
                    "effective_mu": mu,
                    "optimizer": ocfg.method,
                    "timestamp": time.time(),
                }
            )

        key = _first_task_key(cfg, seed) if i == 0 else None
        t0 = time.perf_counter()
        if key is not None and first_task_cache is not None and key in first_task_cache:
            model, cached_records = first_task_cache[key]
            records.extend(dict(r, run_id=cfg.run_id) for r in cached_records)
        else:
            model = train_task(
                model, task, opt, Prng(task_seeds[i]), cfg.batch_size, ewc if (ewc and ewc.anchors) else None, on_epoch
            )
            if key is not None and first_task_cache is not None:
                first_task_cache[key] = (model, list(records))
        train_seconds += time.perf_counter() - t0

        seen = cfg.sequence.tasks[: i + 1]
        test_rows.append(_accuracies(model, [t.test for t in seen]))
        if has_val:
            val_rows.append(_accuracies(model, [t.validation for t in seen]))
        records.append(
            {
                "run_id": cfg.run_id,
                "seed": seed,
                "task": i,
                "epoch": None,
                "event": "task_end",
                "test_accuracy": test_rows[-1],
                "validation_accuracy": val_rows[-1] if has_val else None,
                "timestamp": time.time(),
            }
        )
        if ewc is not None and i < n_tasks - 1:
            fisher = ewc_estimate_fisher(model, task.train, cfg.ewc.fisher_samples, Prng(task_seeds[i] ^ 0x5EED))
            ewc.anchors.append([p.copy() for p in model.params()])
            ewc.importances.append(fisher)
            peak_slots = max(peak_slots, model.n_params + opt.state_slots(model) + ewc.n_slots)

    return SeedResult(
        seed,
        test_rows,
        val_rows if has_val else None,
        peak_slots,
        time.perf_counter() - start,
        train_seconds,
        records,
        model,
    )


def run_continual(cfg: ContinualRunConfig, jobs: int = 1, first_task_cache: dict | None = None) -> RunResult:
    """Run every seed and average the accuracy matrices.

    Seeds are independent; with ``jobs > 1`` they run in worker processes and
    results are reassembled in seed order.
    """
    start = time.perf_counter()
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        results = [run_seed(cfg, s, first_task_cache) for s in cfg.seeds]
    results.sort(key=lambda r: cfg.seeds.index(r.seed))
    test = AccuracyMatrix({r.seed: r.test for r in results})
    val = AccuracyMatrix({r.seed: r.validation for r in results}) if results[0].validation is not None else None
    mu = cfg.subsequent_optimizer.friction.mu if cfg.subsequent_optimizer.friction else None
    return RunResult(
        cfg,
        test,
        val,
        max(r.memory_units for r in results),
        time.perf_counter() - start,
        [rec for r in results for rec in r.records],
        mu,
        {r.seed: r.model for r in results},
    )


# ---------------------------------------------------------------- gridsearch


@dataclass
class GridResult:
    best_mu: float
    scores: dict[float, float]


def with_mu(cfg: ContinualRunConfig, mu: float) -> ContinualRunConfig:
    sub = cfg.subsequent_optimizer
    if sub.method != WEIGHT_FRICTION:
        raise ValueError("gridsearch over mu needs a weight_friction run configuration")
    return replace(cfg, subsequent_optimizer=replace(sub, friction=replace(sub.friction, mu=float(mu))), run_id=f"{cfg.run_id}-mu{mu:g}")


def cross_validation_sequences(seq: TaskSequence, folds: int, seed: int = 0) -> list[TaskSequence]:
    """Carve ``folds`` train/validation splits out of each task's training data."""
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    out = []
    orders = [fisher_yates_permutation(Prng(seed + 7919 * k), len(t.train)) for k, t in enumerate(seq.tasks)]
    for f in range(folds):
        tasks = []
        for t, order in zip(seq.tasks, orders):
            parts = np.array_split(order, folds)
            va_idx = np.sort(parts[f])
            tr_idx = np.sort(np.concatenate([p for k, p in enumerate(parts) if k != f]))
            tasks.append(replace(t, train=_subset(t.train, tr_idx), validation=_subset(t.train, va_idx)))
        out.append(TaskSequence(f"{seq.name}/fold{f}", tasks))
    return out


def _subset(ds, idx):
    if isinstance(ds, PermutationTask):
        return ds.on(ds.base.subset(idx))
    return ds.subset(idx)


def gridsearch_mu(cfg: ContinualRunConfig, grid, cv_folds: int = 0, jobs: int = 1) -> GridResult:
    """Pick the mu with the best mean validation accuracy over all tasks after the last task.

    Uses each task's validation split, or ``cv_folds``-fold cross-validation
    on the training data when ``cv_folds`` >= 2. Ties go to the smaller mu.
    """
    grid = sorted(float(m) for m in grid)
    if not grid:
        raise ValueError("mu grid is empty")
    if cv_folds >= 2:
        sequences = cross_validation_sequences(cfg.sequence, cv_folds)
    else:
        if any(t.validation is None for t in cfg.sequence.tasks):
            raise ValueError("gridsearch needs validation data for every task, or cv_folds >= 2")
        sequences = [cfg.sequence]
    caches: list[dict] = [{} for _ in sequences]
    scores: dict[float, float] = {}
    for mu in grid:
        fold_scores = []
        for seq, cache in zip(sequences, caches):
            res = run_continual(replace(with_mu(cfg, mu), sequence=seq), jobs=jobs, first_task_cache=cache)
            fold_scores.append(res.validation.average_accuracy_after()[-1])
        scores[mu] = float(np.mean(fold_scores))
        log.info("mu=%g validation score %.4f", mu, scores[mu])
    best = max(grid, key=lambda m: (scores[m], -m))
    return GridResult(best, scores)


# ---------------------------------------------------------------- costs


@dataclass
class ResourceReport:
    methods: list[str]
    wall_time_seconds: dict[str, float]
    memory_units: dict[str, int]
    relative_time: dict[str, float] | None
    relative_memory: dict[str, float] | None

    def rows(self) -> list[dict]:
        out = []
        for m in self.methods:
            out.append(
                {
                    "method": m,
                    "wall_time_seconds": self.wall_time_seconds[m],
                    "memory_units": self.memory_units[m],
                    "relative_time": None if self.relative_time is None else self.relative_time[m],
                    "relative_memory": None if self.relative_memory is None else self.relative_memory[m],
                }
            )
        return out


def resource_report(runs: dict[str, tuple[float, int]]) -> ResourceReport:
    """Normalize per-method (wall seconds, memory units) so the costliest method is 1."""
    methods = list(runs)
    times = {m: float(runs[m][0]) for m in methods}
    mem = {m: int(runs[m][1]) for m in methods}
    if len(methods) < 2:
        log.warning("resource report for a single method: relative costs are not defined")
        return ResourceReport(methods, times, mem, None, None)
    tmax = max(times.values())
    mmax = max(mem.values())
    rel_t = {m: times[m] / tmax for m in methods}
    rel_m = {m: mem[m] / mmax for m in methods}
    return ResourceReport(methods, times, mem, rel_t, rel_m)


def time_epoch(model: Mlp, ds, ocfg: OptimizerConfig, batch_size: int = 64, repeats: int = 3, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one training epoch with ``ocfg``."""
    best = float("inf")
    task = Task("timing", ds, ds, 1)
    for _ in range(repeats):
        opt = Optimizer(ocfg)
        t0 = time.perf_counter()
        train_task(model, task, opt, Prng(seed), batch_size)
        best = min(best, time.perf_counter() - t0)
    return best


def compare_epoch_times(
    model: Mlp, ds, configs: dict[str, OptimizerConfig], batch_size: int = 64, trials: int = 10, seed: int = 0
) -> dict[str, float]:
    """Fastest single-epoch time per optimizer config over interleaved trials.

    Every config sees the same initial model and the same shuffles, and the
    configs take turns, so slow phases of a noisy machine hit all of them.
    """
    best = {k: float("inf") for k in configs}
    for _ in range(trials):
        for k, ocfg in configs.items():
            best[k] = min(best[k], time_epoch(model, ds, ocfg, batch_size, 1, seed))
    return best


def method_optimizers(
    method: str, lr: float, wf_lr: float, friction: FrictionFunction | None, **wf_kwargs
) -> tuple[OptimizerConfig, OptimizerConfig]:
    """(first-task, later-task) optimizer configs for a method tag.

    Every method trains the first task with Adam; weight friction then
    switches to the friction rule, the others keep Adam.
    """
    first = OptimizerConfig(ADAM, lr)
    if method == WEIGHT_FRICTION:
        if friction is None:
            raise ValueError("weight_friction needs a friction function")
        return first, OptimizerConfig(WEIGHT_FRICTION, wf_lr, friction, **wf_kwargs)
    if method in (VANILLA, EWC):
        return first, first
    if method == SGD:
        return OptimizerConfig(SGD, lr), OptimizerConfig(SGD, lr)
    raise ValueError(f"unknown method {method!r}")
