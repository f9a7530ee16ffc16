"""Run the desk-scale experiment grid through the CLI and tabulate macro-F1.

Grid: partition {iid, noniid} x attack {none, 25%, 50%} x strategy
{fedavg, krum} for the federated arm, the matching centralized finetune arm
per (partition, attack), the baseline, and the IID client sweep. Each cell
gets its own config under ``<out>/configs`` and report under ``<out>/runs``.

    python scripts/run_grid.py --seeds 0 1 2 --out runs/grid
"""

import argparse
import json
import statistics
import sys
from pathlib import Path

from fedsim.cli import desk_config, main as cli_main
from fedsim.report import load_report

STRATEGIES = {"fedavg": {"kind": "fedavg", "weighting": "by_sample_count"}, "krum": {"kind": "krum", "f": 1}}


def cells():
    yield "baseline", dict(mode="baseline")
    yield "sweep", dict(mode="sweep_clients")
    for partition in ("iid", "noniid"):
        for attack in ("none", "25%", "50%"):
            tag = f"{partition}-{attack.rstrip('%')}"
            yield f"finetuned-{tag}", dict(mode="finetuned", partition=partition, attack=attack)
            for name, strategy in STRATEGIES.items():
                yield f"fl-{tag}-{name}", dict(mode="fl", partition=partition, attack=attack, strategy=strategy)


def score(report):
    if report.final is not None:
        return {"all": report.final.macro_f1,
                **{lang: r.metrics.macro_f1 for lang, r in report.per_language.items() if r.zero_shot}}
    return {sub.label: sub.final.macro_f1 for sub in report.sub_reports}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="runs/grid")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", default=None, help="substring filter on cell names")
    args = ap.parse_args(argv)

    out = Path(args.out)
    (out / "configs").mkdir(parents=True, exist_ok=True)
    table: dict[str, dict[str, list[float]]] = {}
    for name, kw in cells():
        if args.only and args.only not in name:
            continue
        for seed in args.seeds:
            cfg_path = out / "configs" / f"{name}-s{seed}.json"
            cfg_path.write_text(json.dumps(desk_config(seed=seed, **kw), indent=2) + "\n", encoding="utf-8")
            run_dir = out / "runs" / f"{name}-s{seed}"
            code = cli_main(["run", str(cfg_path), "-o", str(run_dir), "--workers", str(args.workers)])
            if code != 0:
                print(f"{name} seed {seed}: exit {code}", file=sys.stderr)
                return code
            for key, value in score(load_report(run_dir / "report.json")).items():
                table.setdefault(name, {}).setdefault(key, []).append(value)

    print(f"\n{'cell':28s} {'score':>6s} {'mean':>8s} {'min':>8s} {'max':>8s}")
    for name, scores in table.items():
        for key, values in scores.items():
            print(f"{name:28s} {key:>6s} {statistics.fmean(values):8.4f} {min(values):8.4f} {max(values):8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
