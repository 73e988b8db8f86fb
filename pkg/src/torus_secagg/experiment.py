"""Experiment configuration, presets and report generation.

An experiment is a grid of client counts ``K`` times aggregation arms, each
run ``runs`` times with seeds ``seed, seed+1, ...`` against a shared plain
twin. Three CSV files are written:

``rounds.csv``
    One row per (run, round, arm), plain twin included. Columns: ``run``,
    ``seed`` then the transcript schema (round, mode, K, m, L_or_p, d,
    cosine_vs_plain, accuracy, overflow_count, client_ops, server_ops,
    comm_symbols).
``summary.csv``
    One row per (K, arm): mean and population std across runs of the final
    and top accuracy and the final cosine similarity vs plain.
``plot.csv``
    Mean/std accuracy per (K, arm, round), for accuracy-vs-round figures.
``complexity.csv``
    Measured per-round costs next to the tabulated closed forms.
"""

from __future__ import annotations

import csv
import os
import re
import secrets
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, load_mnist, load_mnist_subset, resolve_mnist_dir, synth_blobs
from .errors import ConfigurationError
from .finite_field import FieldParams
from .fl import FedTask, TrainConfig, run_fedavg
from .metrics import summarize
from .models import MLP, SoftmaxRegression
from .protocol import (
    AggregationConfig,
    AggregationMode,
    TRANSCRIPT_COLUMNS,
    complexity_counters,
    format_float,
    closed_form_costs,
    write_transcript_csv,
)

DATASETS = ("mnist-subset", "mnist", "synth")
MODELS = ("softmax", "mlp")
K_RANGE = (2, 64)
_L_EXPR = re.compile(r"^\s*(?:(\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)\s*\*?\s*)?K\s*$")


class DatasetUnavailable(FileNotFoundError):
    """The configured dataset cannot be found on disk."""


@dataclass(frozen=True)
class Arm:
    """One secure aggregator in the grid.

    ``L`` is a number, ``"minimal"``, ``"strict"``, or a multiple of the client
    count written ``"K"``, ``"10K"``, ``"100K"``.
    """

    mode: str
    L: str = "K"
    p: int = 2**31 - 1
    d: int = 7

    def resolve(self, K: int, cfg: "ExperimentConfig") -> AggregationConfig:
        mode = AggregationMode(self.mode)
        scaling: float | str = "strict"
        if mode is AggregationMode.TORUS:
            scaling = resolve_L(self.L, K)
        return AggregationConfig(
            mode,
            scaling=scaling,
            field=FieldParams(self.p, self.d, cfg.fixed_point_base),
            mask_exchange=cfg.mask_exchange,
            precision=cfg.precision,
            weighting=cfg.weighting,
        )

    def label(self, K: int) -> Tuple[str, str]:
        """``(L_or_p, d)`` as written to the summary."""
        if self.mode == "torus":
            value = resolve_L(self.L, K)
            return (value if isinstance(value, str) else format_float(value)), ""
        if self.mode == "finite_field":
            return str(self.p), str(self.d)
        return "", ""


def resolve_L(expr: str | float, K: int) -> float | str:
    if isinstance(expr, (int, float)):
        return float(expr)
    text = str(expr).strip()
    if text in ("minimal", "strict"):
        return text
    match = _L_EXPR.match(text)
    if match:
        return float(match.group(1) or 1.0) * K
    return float(text)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    dataset: str = "mnist-subset"
    mnist_dir: Optional[str] = None
    model: str = "softmax"
    hidden: int = 64
    K: Tuple[int, ...] = (10,)
    arms: Tuple[Arm, ...] = (Arm("torus"),)
    rounds: int = 10
    runs: int = 3
    seed: int = 0
    deterministic: bool = True
    precision: int = 64
    learning_rate: float = 0.3
    batch_size: int = 16
    local_epochs: int = 1
    momentum: float = 0.0
    weight_decay: float = 0.0
    mask_exchange: str = "vector"
    weighting: str = "uniform"
    fixed_point_base: int = 10
    synth_classes: int = 10
    synth_samples: int = 2000
    synth_test_samples: int = 1000
    synth_features: int = 20
    synth_separation: float = 3.0
    out: str = "results"

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.local_epochs, self.momentum, self.weight_decay)


# Desk-scale stand-in for 60k MNIST images: the step size is raised so that
# 10 rounds over 1,000 images reach parameter magnitudes comparable to the
# full-data runs (see README).
_MNIST_DESK = dict(dataset="mnist-subset", model="softmax", rounds=10, runs=3, learning_rate=0.3, batch_size=16)
_CLIENT_COUNTS = (5, 10, 15, 20, 30)

PRESETS: Dict[str, ExperimentConfig] = {
    "table2-mnist": ExperimentConfig(
        name="table2-mnist", K=_CLIENT_COUNTS, arms=(Arm("finite_field", p=2**31 - 1, d=7), Arm("torus", L="K")), **_MNIST_DESK
    ),
    "table4-mnist": ExperimentConfig(
        name="table4-mnist", K=_CLIENT_COUNTS, arms=(Arm("finite_field", p=2**15 - 1, d=4), Arm("torus", L="K")), **_MNIST_DESK
    ),
    "table5-mnist": ExperimentConfig(
        name="table5-mnist",
        K=(10,),
        arms=tuple(Arm("torus", L=L) for L in ("1", "K", "10K", "100K")),
        **_MNIST_DESK,
    ),
    "fig1-mnist": ExperimentConfig(
        name="fig1-mnist",
        K=(10,),
        arms=(
            Arm("finite_field", p=2**31 - 1, d=7),
            Arm("finite_field", p=2**15 - 1, d=4),
            Arm("torus", L="K"),
        ),
        **_MNIST_DESK,
    ),
    "smoke-synth": ExperimentConfig(
        name="smoke-synth",
        dataset="synth",
        K=(5,),
        arms=(Arm("torus", L="strict"), Arm("torus", L="K"), Arm("finite_field", p=2**31 - 1, d=7)),
        rounds=5,
        runs=2,
        learning_rate=0.1,
        batch_size=32,
        synth_samples=1000,
        synth_test_samples=500,
    ),
}
# Tables II and III come from the same runs (cosine vs accuracy columns).
PRESETS["table3-mnist"] = replace(PRESETS["table2-mnist"], name="table3-mnist")
for _short in ("table2", "table3", "table4", "table5", "fig1"):
    PRESETS[_short] = replace(PRESETS[f"{_short}-mnist"], name=_short)

FULL_SCALE = dict(dataset="mnist", rounds=30, runs=10, learning_rate=0.01, batch_size=64)


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None


# --- key = value config files ---------------------------------------------------

_SCALAR_KEYS = {f.name: f.type for f in fields(ExperimentConfig) if f.name not in ("K", "arms")}
_ARM_KEYS = ("mode", "L", "p", "d")


def parse_config_text(text: str) -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys win."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        values[key] = value
    return values


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def config_from_mapping(values: Dict[str, str]) -> ExperimentConfig:
    """Build a config from string key/values: either ``preset`` plus overrides, or explicit keys."""
    values = dict(values)
    preset = values.pop("preset", None)
    base = get_preset(preset) if preset else ExperimentConfig()
    if preset and any(k in values for k in _ARM_KEYS):
        raise ConfigurationError("a preset fixes its aggregation arms; drop mode/L/p/d or drop the preset")

    updates: Dict[str, object] = {}
    if "K" in values:
        updates["K"] = tuple(int(v) for v in values.pop("K").split(","))
    if any(k in values for k in _ARM_KEYS):
        mode = values.pop("mode", "torus").strip()
        p = int(values.pop("p", 2**31 - 1))
        d = int(values.pop("d", 7))
        Ls = [s.strip() for s in values.pop("L", "K").split(",")]
        if mode == "torus":
            updates["arms"] = tuple(Arm("torus", L=L) for L in Ls)
        else:
            updates["arms"] = (Arm(mode, p=p, d=d),)
    for key, raw in values.items():
        if key not in _SCALAR_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}")
        kind = _SCALAR_KEYS[key]
        try:
            if kind in ("int", int):
                updates[key] = int(raw)
            elif kind in ("float", float):
                updates[key] = float(raw)
            elif kind in ("bool", bool):
                updates[key] = _parse_bool(raw)
            elif key == "mnist_dir":
                updates[key] = raw or None
            else:
                updates[key] = raw
        except ValueError as exc:
            raise ConfigurationError(f"{key}: {exc}") from None
    if not preset and "name" not in updates:
        updates["name"] = "custom"
    return replace(base, **updates)


def load_config(path: os.PathLike | str) -> ExperimentConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text(encoding="utf-8")))


def validate_config(cfg: ExperimentConfig) -> List[str]:
    """All constraint violations, each naming the field; empty when valid."""
    problems: List[str] = []
    if not cfg.K:
        problems.append("K: at least one client count required")
    for K in cfg.K:
        if K < 2:
            problems.append(f"K ≥ 2 (got K = {K})")
        elif K > K_RANGE[1]:
            problems.append(f"K ≤ {K_RANGE[1]} (got K = {K})")
    if cfg.runs < 1:
        problems.append(f"runs ≥ 1 (got runs = {cfg.runs})")
    if cfg.rounds < 0:
        problems.append(f"rounds ≥ 0 (got rounds = {cfg.rounds})")
    if cfg.dataset not in DATASETS:
        problems.append(f"dataset ∈ {{{', '.join(DATASETS)}}} (got {cfg.dataset!r})")
    if cfg.model not in MODELS:
        problems.append(f"model ∈ {{{', '.join(MODELS)}}} (got {cfg.model!r})")
    if cfg.model == "mlp" and cfg.hidden < 1:
        problems.append(f"hidden ≥ 1 (got hidden = {cfg.hidden})")
    if cfg.precision not in (32, 64):
        problems.append(f"precision ∈ {{32, 64}} (got precision = {cfg.precision})")
    if not cfg.learning_rate >= 0:
        problems.append(f"learning_rate ≥ 0 (got {cfg.learning_rate})")
    if cfg.batch_size < 1:
        problems.append(f"batch_size ≥ 1 (got {cfg.batch_size})")
    if cfg.local_epochs < 1:
        problems.append(f"local_epochs ≥ 1 (got {cfg.local_epochs})")
    if not 0 <= cfg.momentum < 1:
        problems.append(f"momentum ∈ [0, 1) (got {cfg.momentum})")
    if cfg.weight_decay < 0:
        problems.append(f"weight_decay ≥ 0 (got {cfg.weight_decay})")
    if cfg.mask_exchange not in ("vector", "seed"):
        problems.append(f"mask_exchange ∈ {{vector, seed}} (got {cfg.mask_exchange!r})")
    if cfg.weighting not in ("uniform", "samples"):
        problems.append(f"weighting ∈ {{uniform, samples}} (got {cfg.weighting!r})")
    if cfg.fixed_point_base not in (2, 10):
        problems.append(f"fixed_point_base ∈ {{2, 10}} (got {cfg.fixed_point_base})")
    if cfg.dataset == "synth":
        if cfg.synth_classes < 2:
            problems.append(f"synth_classes ≥ 2 (got {cfg.synth_classes})")
        if cfg.synth_samples < max(cfg.synth_classes, max(cfg.K, default=2)):
            problems.append("synth_samples ≥ max(synth_classes, K)")
        if cfg.synth_test_samples < 1:
            problems.append("synth_test_samples ≥ 1")
    if not cfg.arms:
        problems.append("arms: at least one aggregation arm required")
    for arm in cfg.arms:
        if arm.mode not in ("plain", "torus", "finite_field"):
            problems.append(f"mode ∈ {{plain, torus, finite_field}} (got {arm.mode!r})")
        elif arm.mode == "torus":
            for K in cfg.K or (2,):
                try:
                    L = resolve_L(arm.L, K)
                except ValueError:
                    problems.append(f"L: not a number, 'minimal', 'strict' or a multiple of K (got {arm.L!r})")
                    break
                if not isinstance(L, str) and not L > 0:
                    problems.append(f"L > 0 (got L = {arm.L})")
                    break
        elif arm.mode == "finite_field":
            if arm.p < 3 or arm.p % 2 == 0:
                problems.append(f"p odd and ≥ 3 (got p = {arm.p})")
            if arm.d < 0:
                problems.append(f"d ≥ 0 (got d = {arm.d})")
    return problems


# --- running -----------------------------------------------------------------------


def load_datasets(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    if cfg.dataset == "mnist-subset":
        return load_mnist_subset()
    if cfg.dataset == "mnist":
        try:
            return load_mnist(resolve_mnist_dir(cfg.mnist_dir))
        except FileNotFoundError as exc:
            raise DatasetUnavailable(str(exc)) from exc
    full = synth_blobs(
        cfg.synth_classes,
        cfg.synth_samples + cfg.synth_test_samples,
        cfg.synth_features,
        cfg.synth_separation,
        seed=cfg.seed,
    )
    n = cfg.synth_samples
    return full.subset(np.arange(n)), full.subset(np.arange(n, len(full)))


def build_model(cfg: ExperimentConfig, train: Dataset):
    if cfg.model == "mlp":
        return MLP(train.n_features, cfg.hidden, train.n_classes)
    return SoftmaxRegression(train.n_features, train.n_classes)


@dataclass
class ArmResult:
    """Per-run outcomes for one (K, arm) cell."""

    K: int
    mode: str
    L_or_p: str
    d: str
    final_accuracy: List[float] = field(default_factory=list)
    top_accuracy: List[float] = field(default_factory=list)
    final_cosine: List[float] = field(default_factory=list)
    min_cosine: List[float] = field(default_factory=list)
    overflow_total: List[int] = field(default_factory=list)
    accuracy_by_round: List[List[float]] = field(default_factory=list)
    cosine_by_round: List[List[float]] = field(default_factory=list)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seeds: List[int]
    cells: List[ArmResult]
    files: Dict[str, Path]

    def cell(self, K: int, mode: str, L_or_p: str = "") -> ArmResult:
        for c in self.cells:
            if c.K == K and c.mode == mode and (not L_or_p or c.L_or_p == L_or_p):
                return c
        raise KeyError((K, mode, L_or_p))


SUMMARY_COLUMNS = (
    "experiment",
    "K",
    "mode",
    "L_or_p",
    "d",
    "runs",
    "accuracy_mean",
    "accuracy_std",
    "top_accuracy_mean",
    "top_accuracy_std",
    "cosine_mean",
    "cosine_std",
    "overflow_mean",
)
PLOT_COLUMNS = ("K", "mode", "L_or_p", "d", "round", "accuracy_mean", "accuracy_std", "runs")
COMPLEXITY_COLUMNS = (
    "K",
    "m",
    "mode",
    "client_compute",
    "client_compute_closed_form",
    "client_comm",
    "client_storage",
    "server_compute",
    "server_comm",
    "server_storage",
    "matches_closed_form",
)


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Dict[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[os.PathLike | str] = None) -> ExperimentResult:
    """Run the grid and write the report files.

    Raises:
        ConfigurationError: the config has violations.
        DatasetUnavailable: the configured dataset is not on disk.
    """
    problems = validate_config(cfg)
    if problems:
        raise ConfigurationError("; ".join(problems))
    out = Path(out_dir if out_dir is not None else cfg.out)
    train, test = load_datasets(cfg)
    model = build_model(cfg, train)
    train_cfg = cfg.train_config()

    base_seed = cfg.seed if cfg.deterministic else secrets.randbits(63)
    seeds = [base_seed + r for r in range(cfg.runs)]
    round_rows: List[Dict[str, str]] = []
    cells: List[ArmResult] = []

    for K in cfg.K:
        plain_cell = ArmResult(K, "plain", "", "")
        arm_cells = [ArmResult(K, arm.mode, *arm.label(K)) for arm in cfg.arms]
        aggregators = [arm.resolve(K, cfg) for arm in cfg.arms]
        for run, seed in enumerate(seeds):
            task = FedTask.iid(model, train, test, K, seed)
            history = run_fedavg(task, aggregators, train_cfg, cfg.rounds, seed)
            for cell, traj in zip([plain_cell] + arm_cells, [history.plain] + history.secure):
                accs, coss = traj.accuracies, traj.cosines
                cell.accuracy_by_round.append(accs)
                cell.cosine_by_round.append(coss)
                cell.final_accuracy.append(accs[-1] if accs else float("nan"))
                cell.top_accuracy.append(max(accs) if accs else float("nan"))
                cell.final_cosine.append(coss[-1] if coss else 1.0)
                cell.min_cosine.append(min(coss) if coss else 1.0)
                cell.overflow_total.append(sum(r.overflow_count for r in traj.records))
                for rec in traj.records:
                    row = rec.transcript.csv_row(rec.cosine_vs_plain, rec.accuracy)
                    row.update(run=str(run), seed=str(seed))
                    round_rows.append(row)
        cells.append(plain_cell)
        cells.extend(arm_cells)

    out.mkdir(parents=True, exist_ok=True)
    files = {
        "rounds": out / "rounds.csv",
        "summary": out / "summary.csv",
        "plot": out / "plot.csv",
        "complexity": out / "complexity.csv",
    }
    write_transcript_csv(files["rounds"], round_rows, extra_columns=("run", "seed"))
    _write_csv(files["summary"], SUMMARY_COLUMNS, [_summary_row(cfg, c) for c in cells])
    _write_csv(files["plot"], PLOT_COLUMNS, [row for c in cells for row in _plot_rows(c, cfg.rounds)])
    _write_csv(files["complexity"], COMPLEXITY_COLUMNS, _complexity_rows(cfg, model.size))
    return ExperimentResult(cfg, seeds, cells, files)


def _summary_row(cfg: ExperimentConfig, c: ArmResult) -> Dict[str, str]:
    acc = summarize(c.final_accuracy)
    top = summarize(c.top_accuracy)
    cos = summarize(c.final_cosine)
    return {
        "experiment": cfg.name,
        "K": str(c.K),
        "mode": c.mode,
        "L_or_p": c.L_or_p,
        "d": c.d,
        "runs": str(acc.count),
        "accuracy_mean": format_float(acc.mean),
        "accuracy_std": format_float(acc.std),
        "top_accuracy_mean": format_float(top.mean),
        "top_accuracy_std": format_float(top.std),
        "cosine_mean": format_float(cos.mean),
        "cosine_std": format_float(cos.std),
        "overflow_mean": format_float(float(np.mean(c.overflow_total))),
    }


def _plot_rows(c: ArmResult, rounds: int) -> List[Dict[str, str]]:
    rows = []
    for r in range(rounds):
        rep = summarize([accs[r] for accs in c.accuracy_by_round])
        rows.append(
            {
                "K": str(c.K),
                "mode": c.mode,
                "L_or_p": c.L_or_p,
                "d": c.d,
                "round": str(r),
                "accuracy_mean": format_float(rep.mean),
                "accuracy_std": format_float(rep.std),
                "runs": str(rep.count),
            }
        )
    return rows


def _complexity_rows(cfg: ExperimentConfig, m: int) -> List[Dict[str, str]]:
    rows = []
    modes = sorted({arm.mode for arm in cfg.arms} | {"plain"})
    for K in cfg.K:
        closed = closed_form_costs(K, m)
        for mode in modes:
            c = complexity_counters(K, m, mode, mask_exchange=cfg.mask_exchange)
            matches = (
                c.client_comm == closed["client_comm"]
                and c.client_storage == closed["client_storage"]
                and c.server_compute == closed["server_compute"]
                and c.server_comm == closed["server_comm"]
                and c.server_storage == closed["server_storage"]
            )
            rows.append(
                {
                    "K": str(K),
                    "m": str(m),
                    "mode": mode,
                    "client_compute": str(c.client_compute),
                    "client_compute_closed_form": str(closed["client_compute_tabulated"]),
                    "client_comm": str(c.client_comm),
                    "client_storage": str(c.client_storage),
                    "server_compute": str(c.server_compute),
                    "server_comm": str(c.server_comm),
                    "server_storage": str(c.server_storage),
                    "matches_closed_form": str(matches).lower(),
                }
            )
    return rows
