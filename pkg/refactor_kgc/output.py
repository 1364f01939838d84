"""Metric files and rich terminal summaries."""

import csv
import json
from pathlib import Path

from .config import RESULTS_FILE
from .errors import ArtifactError
from .models import Metrics

_CSV_COLUMNS = ("label", "protocol", "filtered", "mrr", "hits@1", "hits@3", "hits@10", "n_queries")


def metrics_json(m: Metrics) -> str:
    return json.dumps(m.to_dict(), sort_keys=True, indent=2) + "\n"


def emit_metrics(m: Metrics, path: str | Path, label: str = "") -> Path:
    """Overwrite `path` with canonical JSON and append one row to results.csv beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_json(m), encoding="utf-8")

    results = path.parent / RESULTS_FILE
    new_file = not results.exists()
    row = m.to_dict()
    with open(results, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(_CSV_COLUMNS)
        writer.writerow([label or path.stem] + [row[c] for c in _CSV_COLUMNS[1:]])
    return path


def emit_metrics_by_relation(by_rel: dict[str, Metrics], path: str | Path) -> Path:
    path = Path(path)
    data = {name: m.to_dict() for name, m in by_rel.items()}
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_metrics(path: str | Path) -> Metrics:
    path = Path(path)
    try:
        return Metrics.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise ArtifactError(f"cannot read metrics from {path}: {e}")


def print_rich_summary(title: str, results: dict[str, Metrics], metadata: dict) -> None:
    try:
        from rich import box
        from rich.console import Console
        from rich.panel import Panel
        from rich.table import Table
    except ImportError:
        return _print_plain_summary(title, results, metadata)

    console = Console()
    console.print()
    info = "\n".join(f"[bold]{k}:[/bold] {v}" for k, v in metadata.items())
    console.print(Panel(info or "-", title=title, border_style="blue", expand=False))

    table = Table(box=box.ROUNDED)
    table.add_column("Split", style="bold")
    table.add_column("Protocol")
    table.add_column("MRR", justify="right")
    table.add_column("Hits@1", justify="right")
    table.add_column("Hits@3", justify="right")
    table.add_column("Hits@10", justify="right")
    table.add_column("Queries", justify="right")
    for name, m in results.items():
        table.add_row(
            name, f"{m.protocol} ({'filtered' if m.filtered else 'raw'})",
            f"{m.mrr:.4f}", f"{m.hits1:.4f}", f"{m.hits3:.4f}", f"{m.hits10:.4f}", str(m.n_queries),
        )
    console.print(table)
    console.print()


def _print_plain_summary(title: str, results: dict[str, Metrics], metadata: dict) -> None:
    print(f"\n{'=' * 60}")
    print(title)
    print(f"{'=' * 60}")
    for k, v in metadata.items():
        print(f"{k}: {v}")
    for name, m in results.items():
        print(f"  {name:<12} MRR {m.mrr:.4f}  H@1 {m.hits1:.4f}  H@3 {m.hits3:.4f}  "
              f"H@10 {m.hits10:.4f}  n={m.n_queries}")
    print()


def print_divergence_table(rows: list[tuple[str, float]], bound: float) -> None:
    try:
        from rich import box
        from rich.console import Console
        from rich.table import Table
    except ImportError:
        for name, gap in rows:
            print(f"  {name:<28} {gap:.3e} {'ok' if gap <= bound else 'FAIL'}")
        return

    table = Table(title="GD vs message passing", box=box.ROUNDED)
    table.add_column("Setting", style="bold")
    table.add_column("Max divergence", justify="right")
    table.add_column("", width=4)
    for name, gap in rows:
        table.add_row(name, f"{gap:.3e}", "[green]ok[/green]" if gap <= bound else "[bold red]FAIL[/bold red]")
    Console().print(table)
