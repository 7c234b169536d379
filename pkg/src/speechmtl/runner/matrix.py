"""Experiment-matrix runner: single-task baselines, ordered two-task pairs,
and one joint row per optimization strategy, with the tables and the
improvement graph written at the end."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..evaluate.report import format_results_table, format_strategy_table, improvement_graph
from .config import ConfigError, ExperimentConfig, from_dict
from .trainer import TrainingRun, corpus_dir, evaluate_tasks

# Table metric keys per task; enhancement contributes three columns.
TASK_METRICS = {
    "asr": ("wer",), "se": ("pesq", "sisdr", "stoi"), "sc": ("acc",),
    "tts": ("mse",), "vc": ("mse",),
}


@dataclass
class MatrixGrid:
    tasks: list[str]
    steps: int = 60
    seed: int = 0
    two_task_strategy: str = "none"
    strategies: list[str] = field(default_factory=lambda: [
        "autoloss+pcgrad", "autoloss", "pcgrad", "none"])
    run_pairs: bool = True
    run_strategies: bool = True
    base: dict = field(default_factory=dict)   # merged into every run config


def load_grid(path) -> MatrixGrid:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict) or "tasks" not in raw:
        raise ConfigError(["grid: mapping with a 'tasks' list required"])
    known = set(MatrixGrid.__dataclass_fields__)
    unknown = [k for k in raw if k not in known]
    if unknown:
        raise ConfigError([f"grid.{k}: unknown field" for k in unknown])
    return MatrixGrid(**raw)


def _run_config(grid: MatrixGrid, tasks: list[str], strategy: str,
                name: str) -> ExperimentConfig:
    raw = {
        "scale": "toy",
        "run_name": name,
        "tasks": list(tasks),
        "strategy": strategy,
        "seed": grid.seed,
        "max_steps": grid.steps,
    }
    for section, content in grid.base.items():
        raw[section] = dict(content) if isinstance(content, dict) else content
    raw.setdefault("data", {"toy_seed": grid.seed + 1})
    return from_dict(raw)


def _metrics_from_rows(rows: list[dict]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for row in rows:
        out.setdefault(row["task"], {})[row["metric"]] = row["value"]
    return out


def run_matrix(grid: MatrixGrid, out_dir) -> dict:
    """Execute the grid sequentially; returns the collected raw results."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: dict = {"single": {}, "pairs": {}, "strategies": {}}

    def run_one(tasks: list[str], strategy: str, name: str) -> dict[str, dict[str, float]]:
        cfg = _run_config(grid, tasks, strategy, name)
        run = TrainingRun(cfg, out_dir / "runs" / name)
        ckpt = run.train()
        rows = evaluate_tasks(run.model, run.corpus, tasks, "test", cfg.options,
                              decoder_choice=run.decoder_choice,
                              corpus_root=corpus_dir(cfg, run.run_dir),
                              pesq_cmd=cfg.data.pesq_cmd)
        (run.run_dir / "results.tsv").write_text(
            "".join(f"{r['task']}\t{r['metric']}\t{r['value']:.6g}\t{r['split']}\t{ckpt.name}\n"
                    for r in rows))
        return _metrics_from_rows(rows)

    for task in grid.tasks:
        results["single"][task] = run_one([task], "none", f"single_{task}")

    if grid.run_pairs:
        for aux in grid.tasks:
            for main in grid.tasks:
                if aux == main:
                    continue
                metrics = run_one([aux, main], grid.two_task_strategy,
                                  f"pair_{aux}_{main}")
                results["pairs"][f"{aux},{main}"] = metrics.get(main, {})

    if grid.run_strategies and len(grid.tasks) >= 2:
        for strategy in grid.strategies:
            name = strategy.replace("+", "_")
            results["strategies"][strategy] = run_one(
                grid.tasks, strategy, f"all_{name}")

    write_matrix_outputs(results, grid.tasks, out_dir)
    return results


def write_matrix_outputs(results: dict, tasks: list[str], out_dir: Path) -> None:
    single = {t: {m: v for m, v in results["single"].get(t, {}).get(t, {}).items()}
              for t in tasks}
    multi = {}
    for key, metrics in results["pairs"].items():
        aux, main = key.split(",")
        multi[(aux, main)] = metrics
    (out_dir / "two_task_table.tsv").write_text(
        format_results_table(single, multi, tasks=tuple(tasks)))
    if all(t in single for t in ("asr", "se", "sc", "tts", "vc")):
        edges = improvement_graph(single, multi)
    else:
        # Partial grids still get a graph over the available baselines.
        edges = []
        try:
            full_single = {t: single.get(t, {}) for t in ("asr", "se", "sc", "tts", "vc")}
            edges = improvement_graph(full_single, multi)
        except ValueError:
            pass
    lines = [f"{t}\tnode" for t in tasks] + [e.line() for e in edges]
    (out_dir / "improvement_graph.tsv").write_text("\n".join(lines) + "\n")
    if results["strategies"]:
        rows = {}
        for strategy, per_task in results["strategies"].items():
            cells = {}
            for task, metrics in per_task.items():
                for metric in TASK_METRICS.get(task, ()):
                    if metric in metrics:
                        cells[(task, metric)] = metrics[metric]
            rows[strategy] = cells
        (out_dir / "strategy_table.tsv").write_text(
            format_strategy_table(rows, single, tasks=tuple(tasks)))
    (out_dir / "raw_results.json").write_text(json.dumps(results, indent=2, sort_keys=True))
