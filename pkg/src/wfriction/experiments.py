"""Turn an ExperimentConfig into task sequences and run configurations."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig
from .continual import ContinualRunConfig, EwcConfig, Task, TaskSequence, method_optimizers
from .core import Prng
from .data import (
    DataError,
    LabeledDataset,
    PermutationTask,
    SplitSpec,
    glyph_prototypes,
    load_idx_dataset,
    make_permuted_task,
    split_train_validation,
    synthetic_glyphs,
)
from .nn import mlp_specs
from .optim import FrictionFunction

IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# first permuted task keeps the original pixel order
PERMUTATION_SEED_BASE = 1000


def _take(ds: LabeledDataset, n: int) -> LabeledDataset:
    return ds if len(ds) <= n else ds.subset(range(n))


def _glyph_family(cfg: ExperimentConfig, family: int, name: str) -> tuple[LabeledDataset, LabeledDataset]:
    """Training pool and test set for one synthetic glyph family."""
    rng = Prng(cfg.data_seed + 7 * family)
    protos = glyph_prototypes(rng)
    pool_size = int(round(cfg.train_examples / cfg.train_fraction)) if cfg.setting != "setting3" else cfg.train_examples
    per_class = -(-pool_size // 10)
    pool = _take(synthetic_glyphs(10, per_class, rng, protos, name=name), pool_size)
    test = _take(synthetic_glyphs(10, -(-cfg.test_examples // 10), rng, protos, name=f"{name}/test"), cfg.test_examples)
    return pool, test


def _idx_family(cfg: ExperimentConfig, directory: str, name: str) -> tuple[LabeledDataset, LabeledDataset]:
    if not directory:
        raise DataError(f"{name}: no dataset directory configured")
    d = Path(directory)
    pool = load_idx_dataset(*(d / f for f in IDX_FILES["train"]), name=name)
    test = load_idx_dataset(*(d / f for f in IDX_FILES["test"]), name=f"{name}/test")
    return pool, _take(test, cfg.test_examples)


def _family(cfg: ExperimentConfig, which: str):
    if cfg.source == "synthetic":
        family = 0 if which == "mnist" else 1
        label = "glyphs-a" if which == "mnist" else "glyphs-b"
        return _glyph_family(cfg, family, label)
    return _idx_family(cfg, cfg.mnist_dir if which == "mnist" else cfg.fashion_dir, which)


def _split_task(cfg: ExperimentConfig, name: str, pool: LabeledDataset, test: LabeledDataset, epochs: int) -> Task:
    train, val = split_train_validation(pool, SplitSpec(cfg.train_fraction, cfg.split_seed))
    return Task(name, _take(train, cfg.train_examples), test, epochs, val)


def build_sequence(cfg: ExperimentConfig) -> TaskSequence:
    if cfg.setting in ("setting1", "setting2"):
        order = ["mnist", "fashion"] if cfg.setting == "setting1" else ["fashion", "mnist"]
        tasks = []
        for i, which in enumerate(order):
            pool, test = _family(cfg, which)
            tasks.append(_split_task(cfg, pool.name, pool, test, cfg.epochs_for(i)))
        return TaskSequence(cfg.setting, tasks)
    if cfg.setting == "setting3":
        pool, test = _family(cfg, "mnist")
        train = _take(pool, cfg.train_examples)
        tasks = []
        for i in range(cfg.num_tasks):
            seed = 0 if i == 0 else PERMUTATION_SEED_BASE + i
            tr = make_permuted_task(train, seed)
            te = PermutationTask(test, tr.pixel_permutation, seed)
            tasks.append(Task(f"permuted-{i}", tr, te, cfg.epochs_for(i)))
        return TaskSequence(cfg.setting, tasks)
    raise ValueError(f"{cfg.setting} has no task sequence")


def friction_of(cfg: ExperimentConfig, mu: float | None = None) -> FrictionFunction:
    return FrictionFunction(cfg.friction, cfg.mu if mu is None else mu)


def build_run_config(
    cfg: ExperimentConfig, method: str, sequence: TaskSequence, mu: float | None = None
) -> ContinualRunConfig:
    first, later = method_optimizers(
        method,
        cfg.learning_rate,
        cfg.wf_learning_rate,
        friction_of(cfg, mu),
        apply_friction_to_biases=cfg.friction_biases,
        mu_schedule=tuple(cfg.mu_schedule) or None,
    )
    first = _with_betas(first, cfg)
    later = _with_betas(later, cfg)
    n_in = sequence.tasks[0].train.dim
    return ContinualRunConfig(
        sequence=sequence,
        model_spec=mlp_specs(n_in, list(cfg.hidden), sequence.tasks[0].train.num_classes),
        first_task_optimizer=first,
        subsequent_optimizer=later,
        seeds=list(cfg.seeds),
        method_tag=method,
        batch_size=cfg.batch_size,
        ewc=EwcConfig(cfg.ewc_lambda, cfg.fisher_samples),
        reset_head=cfg.reset_head,
        run_id=f"{cfg.setting}-{method}",
    )


def _with_betas(ocfg, cfg: ExperimentConfig):
    return replace(ocfg, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
