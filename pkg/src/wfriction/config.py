"""Experiment configuration: a small ``key = value`` format with ``[section]`` headers.

Example::

    preset = desk1

    [optimizer]
    mu_grid = 2, 5, 10, 20

    [experiment]
    seeds = 0, 1, 2

Keys before the first section header may only be ``preset``. A preset
fills in every field; explicit keys then override it regardless of where
they appear. ``serialize`` writes every effective value back out, and
parsing that text reproduces the same configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

SETTINGS = ("setting1", "setting2", "setting3", "convex")
METHODS = ("vanilla", "weight_friction", "ewc")
FRICTION_KINDS = ("logistic_bell", "gaussian_bell", "identity")
SOURCES = ("synthetic", "idx")
G_MODES = ("elementwise", "scalar")


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)
        self.line = line
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    # [experiment]
    preset: str = ""
    setting: str = "setting1"
    methods: tuple[str, ...] = ("vanilla", "weight_friction")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out: str = "runs"
    jobs: int = 1
    # [data]
    source: str = "synthetic"
    mnist_dir: str = ""
    fashion_dir: str = ""
    train_examples: int = 2000
    test_examples: int = 1000
    train_fraction: float = 0.8
    split_seed: int = 12345
    data_seed: int = 2024
    num_tasks: int = 2
    cv_folds: int = 0
    # [model]
    hidden: tuple[int, ...] = (256,)
    batch_size: int = 64
    reset_head: bool = False
    # [optimizer]
    learning_rate: float = 0.01
    wf_learning_rate: float = 0.05
    friction: str = "logistic_bell"
    mu: float = 20.0
    mu_grid: tuple[float, ...] = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)
    tune_mu: bool = False  # gridsearch mu_grid before the final run
    mu_schedule: tuple[float, ...] = ()
    friction_biases: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # [schedule]
    epochs: tuple[int, ...] = (10, 20)
    # [ewc]
    ewc_lambda: float = 100.0
    fisher_samples: int = 1000
    # [convex]
    convex_steps: int = 100000
    convex_mus: tuple[float, ...] = (0.0, 0.5, 1.0, 5.0)
    alpha: float = 0.0
    force_hypothesis_violation: bool = False
    g_mode: str = "elementwise"
    trace_every: int = 100

    def epochs_for(self, task_index: int) -> int:
        return self.epochs[min(task_index, len(self.epochs) - 1)]


# section -> {key in file: field name}
SECTIONS: dict[str, dict[str, str]] = {
    "experiment": {"preset": "preset", "setting": "setting", "method": "methods", "seeds": "seeds", "out": "out", "jobs": "jobs"},
    "data": {
        "source": "source",
        "mnist_dir": "mnist_dir",
        "fashion_dir": "fashion_dir",
        "train_examples": "train_examples",
        "test_examples": "test_examples",
        "train_fraction": "train_fraction",
        "split_seed": "split_seed",
        "data_seed": "data_seed",
        "num_tasks": "num_tasks",
        "cv_folds": "cv_folds",
    },
    "model": {"hidden": "hidden", "batch_size": "batch_size", "reset_head": "reset_head"},
    "optimizer": {
        "learning_rate": "learning_rate",
        "wf_learning_rate": "wf_learning_rate",
        "friction": "friction",
        "mu": "mu",
        "mu_grid": "mu_grid",
        "tune_mu": "tune_mu",
        "mu_schedule": "mu_schedule",
        "friction_biases": "friction_biases",
        "beta1": "beta1",
        "beta2": "beta2",
        "eps": "eps",
    },
    "schedule": {"epochs": "epochs"},
    "ewc": {"lambda": "ewc_lambda", "fisher_samples": "fisher_samples"},
    "convex": {
        "steps": "convex_steps",
        "mus": "convex_mus",
        "alpha": "alpha",
        "force_hypothesis_violation": "force_hypothesis_violation",
        "g_mode": "g_mode",
        "trace_every": "trace_every",
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}

_DESK1 = dict(
    setting="setting1",
    methods=("vanilla", "weight_friction"),
    seeds=(0, 1, 2, 3, 4),
    train_examples=2000,
    test_examples=1000,
    num_tasks=2,
    hidden=(256,),
    learning_rate=0.01,
    wf_learning_rate=0.05,
    mu=20.0,
    tune_mu=True,
    epochs=(10, 20),
)

PRESETS: dict[str, dict] = {
    "desk1": dict(_DESK1, out="runs/desk1"),
    "desk2": dict(_DESK1, setting="setting2", out="runs/desk2"),
    "desk3": dict(
        setting="setting3",
        methods=("vanilla", "weight_friction"),
        seeds=(0, 1, 2, 3, 4),
        train_examples=2000,
        test_examples=1000,
        num_tasks=5,
        cv_folds=2,
        hidden=(256, 256),
        learning_rate=0.001,
        wf_learning_rate=0.3,
        mu=50.0,
        mu_grid=(10.0, 20.0, 50.0, 100.0),
        tune_mu=True,
        epochs=(10,),
        out="runs/desk3",
    ),
    "paper1": dict(
        setting="setting1",
        methods=("vanilla", "weight_friction"),
        seeds=tuple(range(10)),
        source="idx",
        train_examples=48000,
        test_examples=10000,
        num_tasks=2,
        hidden=(256, 256, 256),
        learning_rate=0.01,
        wf_learning_rate=0.01,
        mu=5.0,
        tune_mu=True,
        epochs=(50, 100),
        out="runs/paper1",
    ),
    "paper3": dict(
        setting="setting3",
        methods=("vanilla", "weight_friction", "ewc"),
        seeds=tuple(range(10)),
        source="idx",
        train_examples=60000,
        test_examples=10000,
        num_tasks=10,
        cv_folds=3,
        hidden=(256, 256),
        learning_rate=0.001,
        wf_learning_rate=0.001,
        mu=5.0,
        tune_mu=True,
        epochs=(5000,),
        out="runs/paper3",
    ),
    "convex": dict(setting="convex", methods=("weight_friction",), seeds=(0,), out="runs/convex"),
}
PRESETS["paper2"] = dict(PRESETS["paper1"], setting="setting2", out="runs/paper2")


def _parse_scalar(raw: str, typ: str, line: int, key: str):
    raw = raw.strip()
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        return raw
    except ValueError:
        raise ConfigError(f"expected {typ}, got {raw!r}", line, key) from None


def _parse_value(raw: str, name: str, line: int, key: str):
    typ = _FIELD_TYPES[name]
    if typ.startswith("tuple"):
        inner = typ[len("tuple[") : typ.index(",")]
        items = [s for s in (p.strip() for p in raw.split(",")) if s]
        return tuple(_parse_scalar(s, inner, line, key) for s in items)
    return _parse_scalar(raw, typ, line, key)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def bad(msg, key):
        raise ConfigError(msg, key=key)

    if cfg.preset and cfg.preset not in PRESETS:
        bad(f"unknown preset; choose from {sorted(PRESETS)}", "preset")
    if cfg.setting not in SETTINGS:
        bad(f"setting must be one of {SETTINGS}", "setting")
    if not cfg.methods or any(m not in METHODS for m in cfg.methods):
        bad(f"method must be a list drawn from {METHODS}", "method")
    if len(set(cfg.methods)) != len(cfg.methods):
        bad("duplicate methods", "method")
    if not cfg.seeds or any(not 0 <= s < 2**64 for s in cfg.seeds):
        bad("seeds must be a non-empty list of unsigned 64-bit integers", "seeds")
    if cfg.jobs < 1:
        bad("jobs must be >= 1", "jobs")
    if cfg.source not in SOURCES:
        bad(f"source must be one of {SOURCES}", "source")
    if cfg.train_examples < 1 or cfg.test_examples < 1:
        bad("example counts must be positive", "train_examples")
    if not 0.0 < cfg.train_fraction < 1.0:
        bad("train_fraction must be in (0, 1)", "train_fraction")
    if cfg.num_tasks < 1:
        bad("num_tasks must be positive", "num_tasks")
    if cfg.setting in ("setting1", "setting2") and cfg.num_tasks != 2:
        bad("settings 1 and 2 have exactly two tasks", "num_tasks")
    if cfg.cv_folds == 1 or cfg.cv_folds < 0:
        bad("cv_folds must be 0 (off) or >= 2", "cv_folds")
    if not cfg.hidden or any(h < 1 for h in cfg.hidden):
        bad("hidden layer sizes must be positive", "hidden")
    if cfg.batch_size < 1:
        bad("batch_size must be positive", "batch_size")
    if not cfg.learning_rate > 0 or not cfg.wf_learning_rate > 0:
        bad("learning rates must be positive", "learning_rate")
    if cfg.friction not in FRICTION_KINDS:
        bad(f"friction must be one of {FRICTION_KINDS}", "friction")
    if not cfg.mu >= 0:
        bad("mu must be >= 0", "mu")
    if cfg.tune_mu and not cfg.mu_grid:
        bad("tune_mu needs a non-empty mu_grid", "mu_grid")
    if any(not m >= 0 for m in cfg.mu_grid):
        bad("mu_grid values must be >= 0", "mu_grid")
    if any(not m >= 0 for m in cfg.mu_schedule):
        bad("mu_schedule multipliers must be >= 0", "mu_schedule")
    if not (0 <= cfg.beta1 < 1 and 0 <= cfg.beta2 < 1 and cfg.eps > 0):
        bad("adam betas must be in [0, 1) and eps positive", "beta1")
    if not cfg.epochs or any(e < 1 for e in cfg.epochs):
        bad("epochs must be positive", "epochs")
    if not cfg.ewc_lambda > 0 or cfg.fisher_samples < 1:
        bad("ewc lambda and fisher_samples must be positive", "lambda")
    if cfg.convex_steps < 1 or cfg.trace_every < 1:
        bad("convex steps and trace_every must be positive", "steps")
    if not cfg.convex_mus or any(not m >= 0 for m in cfg.convex_mus):
        bad("convex mus must be >= 0", "mus")
    if cfg.alpha < 0:
        bad("alpha must be >= 0 (0 means 1/L)", "alpha")
    if cfg.g_mode not in G_MODES:
        bad(f"g_mode must be one of {G_MODES}", "g_mode")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; raises ConfigError naming the line and key."""
    section = None
    seen: dict[str, tuple[int, str, str]] = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            if key != "preset":
                raise ConfigError("only 'preset' may appear before a section header", lineno, key)
            name = "preset"
        else:
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key in [{section}]", lineno, key)
            name = SECTIONS[section][key]
        if name in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[name][0]})", lineno, key)
        seen[name] = (lineno, key, value)

    values = {}
    for name, (lineno, key, raw) in seen.items():
        values[name] = _parse_value(raw, name, lineno, key)
    preset = values.get("preset", "")
    base = ExperimentConfig()
    if preset:
        if preset not in PRESETS:
            ln, key, _ = seen["preset"]
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}", ln, key)
        base = replace(base, preset=preset, **PRESETS[preset])
    elif "setting" not in values or "methods" not in values:
        missing = "setting" if "setting" not in values else "method"
        raise ConfigError(f"missing required key {missing!r} (or give a preset)", key=missing)
    try:
        return validate(replace(base, **values))
    except ConfigError as e:
        if e.key is not None:
            for name, (ln, key, _) in seen.items():
                if key == e.key:
                    raise ConfigError(str(e).split(": ", 1)[-1], ln, key) from None
        raise


def apply_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Replace fields from CLI flags; ``None`` values are ignored."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if "preset" in updates:
        name = updates.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", key="preset")
        cfg = replace(ExperimentConfig(), preset=name, **PRESETS[name])
    return validate(replace(cfg, **updates))


def serialize(cfg: ExperimentConfig) -> str:
    """Every effective value, in a form ``parse_config`` reads back identically."""
    by_name = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key, name in keys.items():
            lines.append(f"{key} = {_fmt(by_name[name])}")
        lines.append("")
    return "\n".join(lines)


def preset_config(name: str) -> ExperimentConfig:
    return apply_overrides(ExperimentConfig(), preset=name)
