"""Config-driven experiment runner.

One invocation runs one experiment (or one client-count sweep) described by a
JSON config file and writes ``report.json``, ``report.csv`` and a streaming
``rounds.jsonl`` into the output directory.

Every run follows the same three-stage protocol. The training data is
shuffled with the experiment seed and split in two halves. The first half
trains a centralized *baseline*. The second half then feeds either federated
training (``fl``) or centralized continuation (``finetuned``) from that
baseline. Modes:

``baseline``
    stage one only.
``fl``
    baseline, then federated rounds over client shards of the second half.
``finetuned``
    baseline, then centralized training on the pooled second half, with the
    same examples poisoned as the matching ``fl`` run would poison.
``sweep_clients``
    ``fl`` once per entry of ``sweep_clients`` (IID partition only).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregation import (
    AggregationError,
    Krum,
    MultiKrum,
    check_feasible,
    strategy_from_dict,
    strategy_to_dict,
)
from .attack import (
    AttackError,
    AttackSpec,
    FlipMap,
    RATIOS,
    apply_attack,
    iid_attack_assignment,
    noniid_attack_assignment,
)
from .data import DataError, Dataset, SyntheticCorpusSpec, generate_synthetic, load_tsv
from .metrics import per_language_eval
from .model import DEFAULT_DIM, ParameterVector, TrainConfig
from .orchestrator import FLConfig, Featurized, payload_estimate, run_centralized, run_fl
from .partition import IID, ClientShard, NonIID, PartitionError, identity_assignment, make_shards, pool
from .report import SCHEMA_VERSION, ExperimentReport, LanguageResult, emit_report

log = logging.getLogger("fedsim")

MODES = ("baseline", "fl", "finetuned", "sweep_clients")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# stage tags fed into the seed sequence next to the experiment seed
_SPLIT, _BASELINE, _FINETUNE = 11, 12, 13


class ConfigError(ValueError):
    pass


def _seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Source:
    """Exactly one of a TSV path or a synthetic corpus recipe."""

    tsv: str | None = None
    synthetic: SyntheticCorpusSpec | None = None

    def __post_init__(self):
        if (self.tsv is None) == (self.synthetic is None):
            raise ConfigError("a data source needs exactly one of 'tsv' or 'synthetic'")

    def load(self, num_classes: int) -> Dataset:
        if self.tsv is not None:
            return load_tsv(self.tsv, num_classes)
        if self.synthetic.num_classes != num_classes:
            raise ConfigError(
                f"synthetic num_classes {self.synthetic.num_classes} != experiment num_classes {num_classes}"
            )
        return generate_synthetic(self.synthetic)

    def to_dict(self) -> dict:
        if self.tsv is not None:
            return {"tsv": self.tsv}
        d = dataclasses.asdict(self.synthetic)
        d["languages"] = list(d["languages"])
        return {"synthetic": d}

    @classmethod
    def from_dict(cls, d, where: str) -> "Source":
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: expected an object")
        unknown = set(d) - {"tsv", "synthetic"}
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        if "synthetic" in d:
            try:
                spec = SyntheticCorpusSpec(**d["synthetic"])
            except (TypeError, DataError) as exc:
                raise ConfigError(f"{where}.synthetic: {exc}") from None
            return cls(tsv=d.get("tsv"), synthetic=spec)
        return cls(tsv=d.get("tsv"))


@dataclass(frozen=True)
class ExperimentConfig:
    data: Source
    eval: tuple[Source, ...]
    mode: str = "fl"
    seed: int = 0
    num_classes: int = 20
    feature_dim: int = DEFAULT_DIM
    partition: IID | NonIID = field(default_factory=IID)
    # ratio shorthand ("none" / "25%" / "50%") or an explicit client set
    attack_ratio: str = "none"
    toxic_clients: tuple[int, ...] | None = None
    flip_map: tuple[int, ...] | None = None
    fl: FLConfig = field(default_factory=FLConfig)
    baseline_epochs: int = 10
    finetune_epochs: int | None = None
    half_split: bool = True
    sweep_clients: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {MODES}, got {self.mode!r}")
        if not self.eval:
            raise ConfigError("eval: at least one evaluation source is required")
        if self.feature_dim < 2 or self.feature_dim & (self.feature_dim - 1):
            raise ConfigError(f"feature_dim: must be a power of two, got {self.feature_dim}")
        if self.attack_ratio not in RATIOS:
            raise ConfigError(f"attack.ratio: must be one of {sorted(RATIOS)}, got {self.attack_ratio!r}")
        if self.toxic_clients is not None and self.attack_ratio != "none":
            raise ConfigError("attack: give either 'ratio' or 'toxic_clients', not both")
        if self.flip_map is not None and len(self.flip_map) != self.num_classes:
            raise ConfigError(f"attack.flip_map: needs {self.num_classes} entries, got {len(self.flip_map)}")
        if self.baseline_epochs < 0:
            raise ConfigError("baseline_epochs: must be >= 0")
        if self.finetune_epochs is not None and self.finetune_epochs < 0:
            raise ConfigError("finetune_epochs: must be >= 0")
        if self.mode == "sweep_clients":
            if not self.sweep_clients:
                raise ConfigError("sweep_clients: mode sweep_clients needs a non-empty list of client counts")
            if not isinstance(self.partition, IID):
                raise ConfigError("partition: sweep_clients requires an IID partition")
            if any(n < 1 for n in self.sweep_clients):
                raise ConfigError("sweep_clients: client counts must be >= 1")
        if isinstance(self.partition, IID):
            for n in self.client_counts():
                try:
                    check_feasible(self.fl.strategy, n)
                except AggregationError as exc:
                    raise ConfigError(f"fl.strategy: {exc}") from None

    def client_counts(self) -> tuple[int, ...]:
        if self.mode == "sweep_clients":
            return self.sweep_clients
        if isinstance(self.partition, IID):
            return (self.partition.num_clients,)
        return ()

    @property
    def epochs_equivalent(self) -> int:
        if self.finetune_epochs is not None:
            return self.finetune_epochs
        return self.fl.rounds * self.fl.local_epochs

    def to_dict(self) -> dict:
        if isinstance(self.partition, IID):
            part = {"kind": "iid", "num_clients": self.partition.num_clients}
        else:
            assign = self.partition.language_assignment
            part = {"kind": "noniid", "language_assignment": dict(sorted(assign.items())) if assign else None}
        attack: dict = {"ratio": self.attack_ratio}
        if self.toxic_clients is not None:
            attack = {"toxic_clients": sorted(self.toxic_clients)}
        if self.flip_map is not None:
            attack["flip_map"] = list(self.flip_map)
        train = dataclasses.asdict(self.fl.train)
        train.pop("epochs")
        train.pop("seed")
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "seed": self.seed,
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "data": self.data.to_dict(),
            "eval": [s.to_dict() for s in self.eval],
            "partition": part,
            "attack": attack,
            "fl": {
                "rounds": self.fl.rounds,
                "local_epochs": self.fl.local_epochs,
                "strategy": strategy_to_dict(self.fl.strategy),
            },
            "train": train,
            "baseline_epochs": self.baseline_epochs,
            "finetune_epochs": self.finetune_epochs,
            "half_split": self.half_split,
            "sweep_clients": list(self.sweep_clients),
        }

    @classmethod
    def from_dict(cls, d: dict, seed_override: int | None = None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be an object")
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: unsupported version {version!r}")
        known = {
            "schema_version", "mode", "seed", "num_classes", "feature_dim", "data", "eval", "partition",
            "attack", "fl", "train", "baseline_epochs", "finetune_epochs", "half_split", "sweep_clients",
            "output",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        if "data" not in d:
            raise ConfigError("data: missing")
        seed = int(d.get("seed", 0) if seed_override is None else seed_override)

        p = d.get("partition", {"kind": "iid"})
        kind = p.get("kind", "iid")
        try:
            if kind == "iid":
                partition: IID | NonIID = IID(int(p.get("num_clients", 4)), seed)
            elif kind == "noniid":
                assign = p.get("language_assignment")
                partition = NonIID({str(k): int(v) for k, v in assign.items()} if assign else None)
            else:
                raise ConfigError(f"partition.kind: expected 'iid' or 'noniid', got {kind!r}")
        except PartitionError as exc:
            raise ConfigError(f"partition: {exc}") from None

        a = d.get("attack") or {"ratio": "none"}
        toxic = a.get("toxic_clients")
        flip = a.get("flip_map")

        f = d.get("fl", {})
        t = d.get("train", {})
        try:
            train = TrainConfig(
                learning_rate=float(t.get("learning_rate", 0.1)),
                batch_size=int(t.get("batch_size", 16)),
                l2=float(t.get("l2", 0.0)),
                seed=seed,
            )
            flc = FLConfig(
                rounds=int(f.get("rounds", 5)),
                local_epochs=int(f.get("local_epochs", 1)),
                strategy=strategy_from_dict(f.get("strategy", {"kind": "fedavg"})),
                train=train,
                seed=seed,
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"fl/train: {exc}") from None

        evals = d.get("eval")
        if evals is None:
            raise ConfigError("eval: missing")
        if isinstance(evals, dict):
            evals = [evals]
        ft = d.get("finetune_epochs")
        return cls(
            data=Source.from_dict(d["data"], "data"),
            eval=tuple(Source.from_dict(e, f"eval[{i}]") for i, e in enumerate(evals)),
            mode=d.get("mode", "fl"),
            seed=seed,
            num_classes=int(d.get("num_classes", 20)),
            feature_dim=int(d.get("feature_dim", DEFAULT_DIM)),
            partition=partition,
            attack_ratio=a.get("ratio", "none") if toxic is None else "none",
            toxic_clients=tuple(int(c) for c in toxic) if toxic is not None else None,
            flip_map=tuple(int(x) for x in flip) if flip is not None else None,
            fl=flc,
            baseline_epochs=int(d.get("baseline_epochs", 10)),
            finetune_epochs=int(ft) if ft is not None else None,
            half_split=bool(d.get("half_split", True)),
            sweep_clients=tuple(int(n) for n in d.get("sweep_clients", [])),
        )


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw, seed_override)


def desk_config(
    mode: str = "fl",
    seed: int = 0,
    partition: str = "iid",
    num_clients: int = 4,
    attack: str = "none",
    strategy: dict | None = None,
    sweep: tuple[int, ...] = (2, 4, 8),
    zero_shot: tuple[str, ...] = ("de",),
) -> dict:
    """The desk-scale experiment: 4 languages, 2000 train / 800 test, K=20.

    Corpus seeds are tied to ``seed`` so every seed sees fresh data. Languages
    in ``zero_shot`` appear only in the evaluation set.
    """
    corpus = {
        "num_classes": 20,
        "languages": ["en", "es", "fr", "it"],
        "class_signal_strength": 0.6,
        "vocab_size_per_class": 20,
        "shared_fraction": 0.5,
    }
    evals = [{"synthetic": {**corpus, "examples_per_language": 200, "seed": 1000 + seed}}]
    if zero_shot:
        evals.append(
            {"synthetic": {**corpus, "languages": list(zero_shot), "examples_per_language": 200, "seed": 2000 + seed}}
        )
    part = {"kind": "iid", "num_clients": num_clients} if partition == "iid" else {"kind": "noniid"}
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "seed": seed,
        "num_classes": 20,
        "feature_dim": DEFAULT_DIM,
        "data": {"synthetic": {**corpus, "examples_per_language": 500, "seed": seed}},
        "eval": evals,
        "partition": part,
        "attack": {"ratio": attack},
        "fl": {"rounds": 5, "local_epochs": 1, "strategy": strategy or {"kind": "fedavg", "weighting": "by_sample_count"}},
        "train": {"learning_rate": 1.0, "batch_size": 8, "l2": 0.0},
        "baseline_epochs": 10,
        "finetune_epochs": None,
        "half_split": True,
        "sweep_clients": list(sweep) if mode == "sweep_clients" else [],
    }


def _load_eval(cfg: ExperimentConfig, train: Dataset) -> Dataset:
    # ids are renumbered past the training ids, which the round loop checks
    start = max((ex.id for ex in train.examples), default=-1) + 1
    examples = []
    for src in cfg.eval:
        part = src.load(cfg.num_classes).reindexed(start + len(examples))
        examples.extend(part.examples)
    if not examples:
        raise DataError("evaluation data is empty")
    return Dataset(tuple(examples), cfg.num_classes)


def _attack_spec(cfg: ExperimentConfig, shards: list[ClientShard]) -> AttackSpec | None:
    flip = FlipMap(cfg.flip_map) if cfg.flip_map is not None else FlipMap.default(cfg.num_classes)
    if cfg.toxic_clients is not None:
        return AttackSpec(frozenset(cfg.toxic_clients), flip) if cfg.toxic_clients else None
    if cfg.attack_ratio == "none":
        return None
    if isinstance(cfg.partition, IID):
        return iid_attack_assignment(shards, cfg.attack_ratio, flip)
    return noniid_attack_assignment(shards, cfg.attack_ratio, flip)


def _theory_notes(cfg: ExperimentConfig, n: int, toxic: int) -> list[str]:
    s = cfg.fl.strategy
    if not isinstance(s, (Krum, MultiKrum)):
        return []
    notes = []
    if n < 2 * s.f + 3:
        notes.append(f"Krum convergence guarantee needs n >= 2f+3; running n={n}, f={s.f}")
    if toxic > s.f:
        notes.append(f"{toxic} toxic clients exceed the configured tolerance f={s.f}")
    return notes


class _Context:
    """Data and baseline shared by every arm of one experiment."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.train = cfg.data.load(cfg.num_classes)
        if len(self.train) == 0:
            raise DataError("training data is empty")
        self.eval = _load_eval(cfg, self.train)
        self.eval_features = Featurized(self.eval, cfg.feature_dim)
        if cfg.half_split:
            self.first, self.second = self.train.split_halves(_seed(cfg.seed, _SPLIT))
        else:
            self.first, self.second = self.train, self.train
        self.train_languages = self.train.languages
        zeros = ParameterVector.zeros(cfg.feature_dim, cfg.num_classes)
        t0 = time.perf_counter()
        base_train = dataclasses.replace(cfg.fl.train, seed=_seed(cfg.seed, _BASELINE))
        self.baseline, self.baseline_metrics = run_centralized(
            zeros, self.first, cfg.baseline_epochs, base_train, self.eval, self.eval_features
        )
        self.baseline_time = time.perf_counter() - t0

    def shards(self, num_clients: int | None = None) -> list[ClientShard]:
        part = self.cfg.partition
        if isinstance(part, IID) and num_clients is not None:
            part = IID(num_clients, part.seed)
        if isinstance(part, NonIID) and part.language_assignment is None:
            part = NonIID(identity_assignment(self.second.languages))
        return make_shards(self.second, part)

    def per_language(self, params: ParameterVector) -> dict[str, LanguageResult]:
        return {
            lang: LanguageResult(m, zero_shot=lang not in self.train_languages)
            for lang, m in per_language_eval(params, self.eval).items()
        }


def _run_fl_arm(ctx: _Context, num_clients: int | None, workers: int, stream=None) -> ExperimentReport:
    cfg = ctx.cfg
    shards = ctx.shards(num_clients)
    spec = _attack_spec(cfg, shards)
    if spec is not None:
        shards = apply_attack(shards, spec)
    toxic = sorted(spec.toxic_clients) if spec else []
    t0 = time.perf_counter()
    params, rounds = run_fl(ctx.baseline, shards, cfg.fl, ctx.eval, workers, ctx.eval_features, stream)
    elapsed = time.perf_counter() - t0
    notes = [f"toxic clients: {toxic}"] if toxic else []
    notes += _theory_notes(cfg, len(shards), len(toxic))
    per_round = ctx.baseline.serialized_size
    return ExperimentReport(
        mode="fl",
        label=f"n{len(shards)}",
        config={},
        baseline=ctx.baseline_metrics,
        rounds=rounds,
        final=ctx.eval_features.metrics(params),
        per_language=ctx.per_language(params),
        payload={
            "bytes_per_round_per_client": per_round,
            "bytes_total_per_client": payload_estimate(ctx.baseline, cfg.fl.rounds),
            "num_clients": len(shards),
        },
        krum_trace=[r.selected_client for r in rounds] if isinstance(cfg.fl.strategy, Krum) else [],
        notes=notes,
        timing={"baseline_s": ctx.baseline_time, "fl_s": elapsed},
    )


def run(cfg: ExperimentConfig, workers: int = 1, out_dir: str | Path | None = None) -> ExperimentReport:
    """Execute ``cfg`` end to end; with ``out_dir`` also write the report files."""
    stream_fh = None
    stream = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stream_fh = open(out_dir / "rounds.jsonl", "w", encoding="utf-8")

        def stream(rec):
            stream_fh.write(json.dumps(rec.to_dict()) + "\n")
            stream_fh.flush()

    try:
        report = _run(cfg, workers, stream)
    finally:
        if stream_fh:
            stream_fh.close()
    if out_dir is not None:
        emit_report(report, out_dir / "report")
    return report


def _run(cfg: ExperimentConfig, workers: int, stream) -> ExperimentReport:
    ctx = _Context(cfg)
    echo = cfg.to_dict()
    if cfg.mode == "baseline":
        return ExperimentReport(
            mode="baseline",
            config=echo,
            baseline=ctx.baseline_metrics,
            final=ctx.baseline_metrics,
            per_language=ctx.per_language(ctx.baseline),
            timing={"baseline_s": ctx.baseline_time},
        )
    if cfg.mode == "finetuned":
        shards = ctx.shards()
        spec = _attack_spec(cfg, shards)
        notes = []
        if spec is not None:
            shards = apply_attack(shards, spec)
            notes.append(f"poisoned the examples of clients {sorted(spec.toxic_clients)}")
        pooled = pool(shards)
        t0 = time.perf_counter()
        tune = dataclasses.replace(cfg.fl.train, seed=_seed(cfg.seed, _FINETUNE))
        params, final = run_centralized(ctx.baseline, pooled, cfg.epochs_equivalent, tune, ctx.eval, ctx.eval_features)
        return ExperimentReport(
            mode="finetuned",
            config=echo,
            baseline=ctx.baseline_metrics,
            final=final,
            per_language=ctx.per_language(params),
            notes=notes,
            timing={"baseline_s": ctx.baseline_time, "finetune_s": time.perf_counter() - t0},
        )
    if cfg.mode == "fl":
        report = _run_fl_arm(ctx, None, workers, stream)
        report.config = echo
        report.label = None
        return report
    subs = [_run_fl_arm(ctx, n, workers) for n in cfg.sweep_clients]
    return ExperimentReport(
        mode="sweep_clients",
        config=echo,
        baseline=ctx.baseline_metrics,
        sub_reports=subs,
        timing={"baseline_s": ctx.baseline_time},
    )


def _summary(report: ExperimentReport) -> str:
    lines = []
    if report.final is not None:
        m = report.final
        lines.append(f"{report.mode}: accuracy={m.accuracy:.4f} micro_f1={m.micro_f1:.4f} macro_f1={m.macro_f1:.4f}")
    for lang, res in report.per_language.items():
        tag = " (zero-shot)" if res.zero_shot else ""
        lines.append(f"  {lang}{tag}: macro_f1={res.metrics.macro_f1:.4f}")
    for sub in report.sub_reports:
        lines.append(f"  {sub.label}: macro_f1={sub.final.macro_f1:.4f}")
    lines.extend(f"  note: {n}" for n in report.notes)
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config", help="path to the experiment config (JSON)")
    p_run.add_argument("-o", "--out", default=None, help="output directory (default: config's 'output' or ./runs/<name>)")
    p_run.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    p_run.add_argument("--workers", type=int, default=1, help="client training threads per round")
    p_run.add_argument("-v", "--verbose", action="count", default=0)

    p_cfg = sub.add_parser("example-config", help="print the desk-scale experiment config")
    p_cfg.add_argument("--mode", choices=MODES, default="fl")
    p_cfg.add_argument("--partition", choices=("iid", "noniid"), default="iid")
    p_cfg.add_argument("--attack", choices=sorted(RATIOS), default="none")
    p_cfg.add_argument("--strategy", choices=("fedavg", "krum", "multikrum"), default="fedavg")
    p_cfg.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    if args.command == "example-config":
        strategy = {"fedavg": {"kind": "fedavg", "weighting": "by_sample_count"}, "krum": {"kind": "krum", "f": 1},
                    "multikrum": {"kind": "multikrum", "f": 1, "m": 2}}[args.strategy]
        cfg = desk_config(args.mode, args.seed, args.partition, attack=args.attack, strategy=strategy)
        print(json.dumps(cfg, indent=2))
        return EXIT_OK

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw_output = json.load(fh).get("output")
    except (OSError, json.JSONDecodeError, AttributeError):
        raw_output = None
    try:
        cfg = load_config(args.config, args.seed)
    except (ConfigError, AttackError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or raw_output or Path("runs") / Path(args.config).stem)
    try:
        report = run(cfg, workers=args.workers, out_dir=out)
    except (ConfigError, AggregationError, AttackError, PartitionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(_summary(report))
    print(f"report written to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
