"""Report rendering: aligned text tables, CSV, and figures.

Given a finished run directory (or a sweep directory), emits a plain-text
summary, a delimited copy of the same numbers for plotting elsewhere, and a
set of PNG figures: per-epoch loss curves, the threshold trajectory,
pseudo-sample counts, and accuracy-vs-value curves for sweeps.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import runner  # noqa: E402

ACC_FIELDS = [
    "acc_all_strict", "acc_old_strict", "acc_new_strict",
    "acc_all_greedy", "acc_old_greedy", "acc_new_greedy",
]


def render_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(headers), sep, *(fmt(r) for r in rows)]) + "\n"


def write_csv(path: Path, headers: list[str], rows: list[list[str]]) -> None:
    lines = [",".join(headers)] + [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fig(path: Path, plot_fn) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    plot_fn(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def report_run(run_dir: Path) -> list[Path]:
    """Summarize one run directory; returns the files written."""
    record = json.loads((run_dir / runner.RECORD_FILE).read_text(encoding="utf-8"))
    report_path = run_dir / runner.REPORT_FILE
    report = (json.loads(report_path.read_text(encoding="utf-8"))
              if report_path.exists() else None)

    headers = ["epoch", "ce", "sup", "mm", "total", "pseudo", "tau"]
    rows = [
        [str(i), f"{e['ce']:.4f}", f"{e['sup']:.4f}", f"{e['mm']:.4f}",
         f"{e['total']:.4f}", str(e["pseudo_count"]), f"{e['tau']:.4f}"]
        for i, e in enumerate(record["epochs"])
    ]
    text = render_table(headers, rows)
    if report is not None:
        acc_rows = [[f, f"{report[f]:.4f}"] for f in ACC_FIELDS]
        acc_rows.append(["num_predicted_categories", str(report["num_predicted_categories"])])
        acc_rows.append(["category_count_error", str(report["category_count_error"])])
        text += "\n" + render_table(["metric", "value"], acc_rows)

    out = []
    txt = run_dir / "report.txt"
    txt.write_text(text, encoding="utf-8")
    out.append(txt)
    csv = run_dir / "metrics.csv"
    write_csv(csv, headers, rows)
    out.append(csv)

    fig_dir = run_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    epochs = list(range(len(record["epochs"])))

    def plot_losses(ax):
        for key in ("ce", "sup", "mm", "total"):
            ax.plot(epochs, [e[key] for e in record["epochs"]], label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
        ax.set_title("training losses")

    def plot_tau(ax):
        ax.plot(record["tau_trajectory"])
        ax.set_xlabel("batch")
        ax.set_ylabel("tau")
        ax.set_title("threshold trajectory")

    def plot_pseudo(ax):
        ax.bar(epochs, [e["pseudo_count"] for e in record["epochs"]])
        ax.set_xlabel("epoch")
        ax.set_ylabel("pseudo samples")
        ax.set_title("pseudo-unknowns per epoch")

    for name, fn in (("losses.png", plot_losses), ("tau.png", plot_tau),
                     ("pseudo_counts.png", plot_pseudo)):
        p = fig_dir / name
        _fig(p, fn)
        out.append(p)
    return out


def report_sweep(sweep_dir: Path) -> list[Path]:
    """Summarize a sweep directory (sweep.json produced by run_sweep)."""
    rows_data = json.loads((sweep_dir / "sweep.json").read_text(encoding="utf-8"))
    if not rows_data:
        raise ValueError(f"{sweep_dir}: sweep.json holds no rows")
    axis = rows_data[0]["axis"]
    headers = ["value", *ACC_FIELDS, "num_predicted_categories", "final_tau"]
    rows = [
        [str(r["value"]), *(f"{r[f]:.4f}" for f in ACC_FIELDS),
         str(r["num_predicted_categories"]), f"{r['final_tau']:.4f}"]
        for r in rows_data
    ]
    text = f"sweep over {axis}\n\n" + render_table(headers, rows)

    out = []
    txt = sweep_dir / "report.txt"
    txt.write_text(text, encoding="utf-8")
    out.append(txt)
    csv = sweep_dir / "metrics.csv"
    write_csv(csv, headers, rows)
    out.append(csv)

    def plot_acc(ax):
        xs = [float(r["value"]) for r in rows_data]
        for f in ("acc_all_strict", "acc_all_greedy", "acc_new_greedy"):
            ax.plot(xs, [r[f] for r in rows_data], marker="o", label=f)
        ax.set_xlabel(axis)
        ax.set_ylabel("accuracy")
        ax.legend()
        ax.set_title(f"accuracy vs {axis}")

    fig = sweep_dir / "accuracy.png"
    _fig(fig, plot_acc)
    out.append(fig)
    return out
