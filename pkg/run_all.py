"""Convenience runner that reproduces the scaled-down comparison end to end.

Generates train/test data for both tasks, sweeps the six conditions over the
seeds, analyzes the best VAND model of each task and rolls out the best model
of every condition for twice the training horizon. Finishes with a gate
report: VAND against Vanilla on median and worst-case test MSE, bounded
periodic rollouts per seed, and how far the VAND regularizers moved.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
from pathlib import Path
from typing import Dict, List

import click
import pandas as pd

from vand_rnn import settings
from vand_rnn.cli.training import parse_seeds
from vand_rnn.core import trainer
from vand_rnn.data import load_dataset
from vand_rnn.models import load_model, model_filename
from vand_rnn.utils.errors import ConfigError

PROJECT_ROOT = Path(__file__).resolve().parent

TRAIN_STEPS = 600
TEST_DATA = {"periodic": (2, 1200), "sequential": (4, TRAIN_STEPS)}


def _vand(args: List[str], env: dict[str, str]) -> int:
    """Run one CLI command as a child process."""
    command = [sys.executable, "app.py", *args]
    click.echo("$ " + " ".join(command[1:]))
    return subprocess.run(command, cwd=PROJECT_ROOT, env=env).returncode


def _checked(args: List[str], env: dict[str, str]) -> None:
    code = _vand(args, env)
    if code != settings.EXIT_OK:
        raise click.ClickException(f"'{args[0]}' exited with code {code}")


def _gates(task: str, work: Path, results: pd.DataFrame, seeds: List[int]) -> List[Dict[str, object]]:
    """Evaluate the acceptance gates of one task from its sweep outputs."""
    rows: List[Dict[str, object]] = []
    if not {"vand", "vanilla"} <= set(results["mode"]):
        return rows
    verdict = trainer.compare_modes(results, "vand", "vanilla")
    rows.append({"task": task, "gate": "median_mse", "value": f"{verdict['median']:.4g} vs {verdict['baseline_median']:.4g}",
                 "passed": verdict["median_better"]})
    rows.append({"task": task, "gate": "worst_mse", "value": f"{verdict['worst']:.4g} vs {verdict['baseline_worst']:.4g}",
                 "passed": verdict["worst_better"]})

    if task == "periodic":
        start = load_dataset(work / "test.jsonl")[0]
        needed = settings.STABILITY_MIN_SHARE * len(seeds)
        for mode in ("vand", "vanilla"):
            stability = trainer.rollout_stability(work / "models", task, mode, seeds, start, 2 * TRAIN_STEPS)
            bounded = int(stability["bounded"].sum())
            # vanilla is measured for comparison, only vand is gated
            rows.append({"task": task, "gate": f"bounded_rollouts_{mode}", "value": f"{bounded}/{len(seeds)}",
                         "passed": bounded >= needed if mode == "vand" else None})

    best = trainer.best_runs(results).set_index("mode")
    if "vand" in best.index:
        model = load_model(work / "models" / model_filename(task, "vand", int(best.loc["vand", "seed"])))
        adaptation = trainer.adaptation_table(model)
        rows.append({"task": task, "gate": "moved_units",
                     "value": " ".join(f"L{r.layer}={r.fraction:.2f}" for r in adaptation.itertuples()),
                     "passed": bool((adaptation["fraction"] >= settings.ADAPTATION_MIN_FRACTION).all())})
    return rows


@click.command()
@click.option("--out-dir", type=click.Path(file_okay=False), default="runs", show_default=True)
@click.option("--seeds", default="0..9", show_default=True)
@click.option("--epochs", type=click.IntRange(min=1), default=settings.DEFAULT_EPOCHS, show_default=True)
@click.option("--hidden", type=click.IntRange(min=1), default=settings.DEFAULT_HIDDEN, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=os.cpu_count() or 1, show_default=True)
def main(out_dir, seeds, epochs, hidden, workers) -> None:
    env = os.environ.copy()
    root = (PROJECT_ROOT / out_dir).resolve()
    root.mkdir(parents=True, exist_ok=True)
    try:
        seed_list = parse_seeds(seeds)
    except ConfigError as exc:
        raise click.BadParameter(str(exc), param_hint="--seeds") from exc
    gates: List[Dict[str, object]] = []

    for task, (n_test, test_steps) in TEST_DATA.items():
        work = root / task
        work.mkdir(exist_ok=True)
        config = work / "config.json"
        config.write_text(json.dumps({"epochs": epochs, "hidden": hidden, "task": task}, indent=2) + "\n")

        _checked(["gen-data", "--task", task, "--n", "10", "--steps", str(TRAIN_STEPS),
                  "--seed", "0", "--out", str(work / "train.jsonl")], env)
        _checked(["gen-data", "--task", task, "--n", str(n_test), "--steps", str(test_steps),
                  "--seed", "1", "--out", str(work / "test.jsonl")], env)
        _checked(["sweep", "--config", str(config), "--data", str(work / "train.jsonl"),
                  "--test", str(work / "test.jsonl"), "--seeds", seeds, "--workers", str(workers),
                  "--out", str(work / "results.csv"), "--model-dir", str(work / "models")], env)

        results = pd.read_csv(work / "results.csv")
        best = trainer.best_runs(results)
        for _, row in best.iterrows():
            model = work / "models" / model_filename(task, row["mode"], int(row["seed"]))
            if row["mode"] == "vand":
                _checked(["analyze", "--model", str(model), "--out", str(work / "analysis_vand.csv")], env)
            _checked(["rollout", "--model", str(model), "--data", str(work / "test.jsonl"),
                      "--horizon", str(2 * TRAIN_STEPS), "--out", str(work / f"rollout_{row['mode']}.csv")], env)
        gates.extend(_gates(task, work, results, seed_list))

    report = pd.DataFrame(gates, columns=["task", "gate", "value", "passed"])
    report["passed"] = report["passed"].map({True: "true", False: "false"})
    trainer.write_csv(report, root / "gates.csv")
    click.echo(report.to_string(index=False))
    click.echo(f"All outputs written under {root}")


if __name__ == "__main__":
    main()
