"""Result rows, the auxiliary-task improvement graph, and table formatting."""

from __future__ import annotations

from dataclasses import dataclass

# Higher-is-better flags per metric name.
METRIC_HIGHER_BETTER = {
    "wer": False,
    "pesq": True,
    "sisdr": True,
    "stoi": True,
    "acc": True,
    "mse": False,
}

# The headline metric used to decide improvement edges for each task.
# Enhancement is special-cased: its three metrics can disagree.
PRIMARY_METRIC = {"asr": "wer", "sc": "acc", "tts": "mse", "vc": "mse"}

TASK_ORDER = ("asr", "se", "sc", "tts", "vc")
TABLE_COLUMNS = (
    ("asr", "wer"), ("se", "pesq"), ("se", "sisdr"), ("se", "stoi"),
    ("sc", "acc"), ("tts", "mse"), ("vc", "mse"),
)


@dataclass
class EvalReport:
    task: str
    metric: str
    value: float
    split: str
    checkpoint: str

    def row(self) -> str:
        return f"{self.task}\t{self.metric}\t{self.value:.6g}\t{self.split}\t{self.checkpoint}"


@dataclass
class ImprovementEdge:
    from_task: str
    to_task: str
    relative_improvement: float
    dashed: bool = False

    def line(self) -> str:
        style = "dashed" if self.dashed else "solid"
        return f"{self.from_task}\t{self.to_task}\t{self.relative_improvement:.6f}\t{style}"


def relative_improvement(baseline: float, value: float, higher_better: bool) -> float:
    """Signed so that an improvement is positive for both metric directions."""
    if baseline == 0:
        raise ValueError("zero baseline")
    delta = (value - baseline) if higher_better else (baseline - value)
    return delta / abs(baseline)


def _improved(baseline: float, value: float, metric: str) -> bool:
    return value > baseline if METRIC_HIGHER_BETTER[metric] else value < baseline


def improvement_graph(single: dict[str, dict[str, float]],
                      multi: dict[tuple[str, str], dict[str, float]]
                      ) -> list[ImprovementEdge]:
    """Directed edges aux -> main wherever joint training beat the single run.

    ``single[task]`` holds the single-task metric values; ``multi[(aux, main)]``
    holds the main task's metrics from the joint (aux, main) run. Enhancement
    gets a solid edge when SISDR improves, and a dashed edge when PESQ and
    STOI improve while SISDR does not.
    """
    for task in TASK_ORDER:
        if task not in single:
            raise ValueError(f"missing single-task baseline for {task}")
    edges = []
    for (aux, main), metrics in sorted(multi.items()):
        base = single[main]
        if main != "se":
            key = PRIMARY_METRIC[main]
            if key in metrics and key in base and _improved(base[key], metrics[key], key):
                edges.append(ImprovementEdge(
                    aux, main,
                    relative_improvement(base[key], metrics[key],
                                         METRIC_HIGHER_BETTER[key])))
            continue
        sisdr_up = ("sisdr" in metrics and "sisdr" in base
                    and _improved(base["sisdr"], metrics["sisdr"], "sisdr"))
        percept = [m for m in ("pesq", "stoi") if m in metrics and m in base]
        percept_up = percept and all(_improved(base[m], metrics[m], m) for m in percept)
        if sisdr_up:
            edges.append(ImprovementEdge(
                aux, main,
                relative_improvement(base["sisdr"], metrics["sisdr"], True)))
        elif percept_up:
            rel = sum(relative_improvement(base[m], metrics[m], True)
                      for m in percept) / len(percept)
            edges.append(ImprovementEdge(aux, main, rel, dashed=True))
    return edges


@dataclass
class TableCell:
    value: float | None
    single: bool = False        # diagonal cell
    underline: bool = False     # joint run beat the single-task baseline
    bold: bool = False          # best value in the column

    def text(self) -> str:
        if self.value is None:
            return "-"
        s = f"{self.value:.4g}"
        if self.underline:
            s += "[U]"
        if self.bold:
            s += "[B]"
        return s


def results_table(single: dict[str, dict[str, float]],
                  multi: dict[tuple[str, str], dict[str, float]],
                  tasks: tuple[str, ...] = TASK_ORDER
                  ) -> dict[tuple[str, str, str], TableCell]:
    """Cells keyed by (aux_row, main_task, metric); diagonal = single-task."""
    cells: dict[tuple[str, str, str], TableCell] = {}
    columns = [(m, k) for (m, k) in TABLE_COLUMNS if m in tasks]
    for aux in tasks:
        for main, metric in columns:
            if aux == main:
                value = single.get(main, {}).get(metric)
                cells[(aux, main, metric)] = TableCell(value, single=True)
            else:
                value = multi.get((aux, main), {}).get(metric)
                cells[(aux, main, metric)] = TableCell(value)
    for main, metric in columns:
        base = single.get(main, {}).get(metric)
        col = [(aux, cells[(aux, main, metric)]) for aux in tasks]
        present = [(aux, c) for aux, c in col if c.value is not None]
        if not present:
            continue
        higher = METRIC_HIGHER_BETTER[metric]
        best = max(present, key=lambda ac: ac[1].value if higher else -ac[1].value)
        best[1].bold = True
        if base is not None:
            for aux, c in present:
                if not c.single and _improved(base, c.value, metric):
                    c.underline = True
    return cells


def format_results_table(single, multi, tasks: tuple[str, ...] = TASK_ORDER) -> str:
    """Tab-separated table shaped like the two-task results grid."""
    cells = results_table(single, multi, tasks)
    columns = [(m, k) for (m, k) in TABLE_COLUMNS if m in tasks]
    header = ["aux"] + [f"{m}_{k}" for m, k in columns]
    lines = ["\t".join(header)]
    for aux in tasks:
        row = [aux] + [cells[(aux, main, metric)].text() for main, metric in columns]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def format_strategy_table(rows: dict[str, dict[tuple[str, str], float]],
                          single: dict[str, dict[str, float]] | None = None,
                          tasks: tuple[str, ...] = TASK_ORDER) -> str:
    """Strategy-ablation table: one row per optimization strategy."""
    columns = [(m, k) for (m, k) in TABLE_COLUMNS if m in tasks]
    header = ["strategy"] + [f"{m}_{k}" for m, k in columns]
    lines = ["\t".join(header)]
    for strategy, metrics in rows.items():
        row = [strategy]
        for main, metric in columns:
            value = metrics.get((main, metric))
            if value is None:
                row.append("-")
                continue
            s = f"{value:.4g}"
            if single and metric in single.get(main, {}):
                if _improved(single[main][metric], value, metric):
                    s += "[U]"
            row.append(s)
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
