"""CSV tables, plot companion scripts, and plain-text summaries.

The table dialect is fixed: comma separator, ``.`` decimal point, one header
row, LF line endings, UTF-8. Float cells use Python's shortest round-trip
representation, so two runs that compute identical numbers emit byte-identical
files. Timestamps never appear in tables; a summary file may carry one, and
only in its header line.

Plot companions are plain scripts written next to each table. They read the
CSV with the standard library and only import a plotting backend when they
are themselves executed, so this package links no plotting dependency.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "format_cell",
    "csv_body",
    "write_csv",
    "write_plot_companion",
    "write_summary",
    "TableSpec",
]


def format_cell(value) -> str:
    """Render one cell deterministically.

    Floats use ``repr`` (shortest round-trip form, always ``.`` decimal),
    bools become ``true``/``false``, vectors join their components with
    ``;`` so the comma stays reserved for the column separator.
    """
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, np.ndarray):
        return ";".join(format_cell(v) for v in value.reshape(-1))
    if isinstance(value, (list, tuple)):
        return ";".join(format_cell(v) for v in value)
    return str(value)


def csv_body(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """The exact text a table file will contain."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_body(header, rows), encoding="utf-8", newline="")
    return path


@dataclass(frozen=True)
class TableSpec:
    """What a plot companion should draw from its table."""

    x: str
    ys: tuple[str, ...]
    title: str
    logy: bool = False


_PLOT_TEMPLATE = '''"""Plot companion for {csv_name}; run with any Python that has matplotlib."""
import csv
from pathlib import Path

HERE = Path(__file__).resolve().parent
ROWS = list(csv.DictReader(open(HERE / "{csv_name}", newline="")))
X_COL = {x!r}
Y_COLS = {ys!r}


def column(name):
    out = []
    for row in ROWS:
        try:
            out.append(float(row[name]))
        except ValueError:
            out.append(float("nan"))
    return out


def main():
    try:
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; raw columns follow")
        for name in (X_COL, *Y_COLS):
            print(name, column(name))
        return
    xs = column(X_COL)
    for name in Y_COLS:
        plt.plot(xs, column(name), marker="o", label=name)
    plt.xlabel(X_COL)
    plt.legend()
    plt.title({title!r})
{log_line}    plt.savefig(HERE / "{stem}.png", dpi=150)
    print("wrote", HERE / "{stem}.png")


if __name__ == "__main__":
    main()
'''


def write_plot_companion(csv_path, spec: TableSpec) -> Path:
    """Write ``<table>_plot.py`` next to the table; contents are static."""
    csv_path = Path(csv_path)
    script = csv_path.with_name(csv_path.stem + "_plot.py")
    log_line = "    plt.yscale(\"log\")\n" if spec.logy else ""
    script.write_text(
        _PLOT_TEMPLATE.format(
            csv_name=csv_path.name,
            x=spec.x,
            ys=tuple(spec.ys),
            title=spec.title,
            stem=csv_path.stem,
            log_line=log_line,
        ),
        encoding="utf-8",
        newline="",
    )
    return script


def write_summary(path, title: str, lines: Iterable[str], *,
                  stamped: bool = True) -> Path:
    """Write a plain-text report; the timestamp lives only in the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if stamped:
        stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        header = f"# {title} (generated {stamp})"
    else:
        header = f"# {title}"
    body = "\n".join([header, *lines])
    path.write_text(body + "\n", encoding="utf-8", newline="")
    return path
