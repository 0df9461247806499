"""Side-by-side strategy comparisons on identical data, seeds and batch order."""
from __future__ import annotations

import csv
import io
import json
import os
from typing import Optional

from .cohort import RunReport, train
from .config import RunConfig, StrategySpec
from .errors import ConfigError


def _baseline(specs, subject, strategy):
    for k, s in enumerate(specs):
        if k != subject and s.strategy == strategy:
            return k
    return None


def attach_deltas(reports: list, specs: list, subject: Optional[int] = None) -> RunReport:
    """Fill ``imp_ind`` / ``imp_dml`` on the subject report (default: the last entry).

    Deltas are per-net final accuracy differences in percentage points.
    """
    subject = len(reports) - 1 if subject is None else subject
    sub = reports[subject]
    for attr, strategy in (("imp_ind", "independent"), ("imp_dml", "dml")):
        k = _baseline(specs, subject, strategy)
        if k is not None:
            base = reports[k]
            setattr(sub, attr, [a - b for a, b in zip(sub.final_acc, base.final_acc)])
    return sub


def compare(cfg: RunConfig, train_ds, test_ds, output_dir: Optional[str] = None, keep_steps: bool = False):
    specs = list(cfg.strategies)
    if len(specs) < 2:
        raise ConfigError("compare needs at least two entries under 'strategies'")
    reports = []
    for k, spec in enumerate(specs):
        sub_dir = None if output_dir is None else os.path.join(output_dir, f"{k}_{spec.label}")
        reports.append(train(cfg.for_strategy(spec), train_ds, test_ds, output_dir=sub_dir,
                             keep_steps=keep_steps, label=spec.label))
    attach_deltas(reports, specs)
    if output_dir is not None:
        rows = comparison_rows(reports, specs)
        write_atomic(os.path.join(output_dir, "comparison.csv"), rows_to_csv(rows))
        write_atomic(os.path.join(output_dir, "comparison.txt"), format_table(rows))
        write_atomic(os.path.join(output_dir, "reports.json"),
                     json.dumps([r.to_dict() for r in reports], indent=2))
    return reports


def comparison_rows(reports: list, specs: list) -> list:
    headers = ["net"] + [f"{k}_{s.label}" for k, s in enumerate(specs)] + ["Imp-Ind", "Imp-DML"]
    sub = reports[-1]
    rows = [headers]
    for i in range(len(sub.final_acc)):
        row = [str(i)] + [f"{r.final_acc[i]:.2f}" for r in reports]
        row.append("" if sub.imp_ind is None else f"{sub.imp_ind[i]:.2f}")
        row.append("" if sub.imp_dml is None else f"{sub.imp_dml[i]:.2f}")
        rows.append(row)
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def format_table(rows) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_atomic(path, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


__all__ = ["compare", "attach_deltas", "comparison_rows", "format_table", "StrategySpec"]
