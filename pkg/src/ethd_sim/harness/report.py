"""CSV and text renderings of trial batches and colocation runs.

Every CSV starts with ``# <schema>/v<N>`` so downstream tools can check the
layout; timestamps are integer microseconds and floats use fixed precision,
so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
from typing import Iterable, List, Optional, Sequence

from ..controller import InteractionKind, Strategy
from .runner import ColocationReport, TrialBatchReport, TrialRecord

__all__ = [
    "LATENCY_SIGN_NOTE",
    "trials_csv",
    "summary_csv",
    "summary_table",
    "colocation_csv",
    "colocation_summary",
]

LATENCY_SIGN_NOTE = ("# latency = t_virtual_us - t_physical_us; positive means the virtual "
                     "collision registered after the physical contact")

_KIND_TITLE = {
    InteractionKind.HANDOVER: "Handover",
    InteractionKind.FIST_BUMP: "Fist Bump",
    InteractionKind.HIGH_FIVE: "High Five",
}


def _writer(buf):
    return csv.writer(buf, lineterminator="\n")


def _opt(v) -> str:
    return "" if v is None else str(v)


def _trial_row(kind: InteractionKind, strategy: Strategy, i: int, r: TrialRecord) -> list:
    cp = r.contact_point
    return [
        kind.value, strategy.value, i, r.seed, r.status,
        _opt(r.t_physical_us), _opt(r.t_virtual_us), _opt(r.latency_us),
        "" if r.latency_ms is None else f"{r.latency_ms:.3f}",
        "" if cp is None else f"{cp.x:.6f}",
        "" if cp is None else f"{cp.y:.6f}",
        "" if cp is None else f"{cp.z:.6f}",
        r.end_us, r.message,
    ]


def trials_csv(reports: Iterable[TrialBatchReport]) -> str:
    """One row per trial, grouped by condition."""
    buf = io.StringIO()
    buf.write("# trials/v1\n")
    buf.write(LATENCY_SIGN_NOTE + "\n")
    w = _writer(buf)
    w.writerow(["kind", "strategy", "trial", "seed", "status", "t_physical_us", "t_virtual_us",
                "latency_us", "latency_ms", "contact_x_m", "contact_y_m", "contact_z_m",
                "end_us", "message"])
    for rep in reports:
        for i, r in enumerate(rep.trials):
            w.writerow(_trial_row(rep.kind, rep.strategy, i, r))
    return buf.getvalue()


def _fmt(v: float) -> str:
    return "nan" if v != v else f"{v:.3f}"


def summary_csv(reports: Iterable[TrialBatchReport]) -> str:
    buf = io.StringIO()
    buf.write("# batch-summary/v1\n")
    buf.write(LATENCY_SIGN_NOTE + "\n")
    buf.write("# std uses the n-1 estimator; degenerate=1 marks n<2 where std is reported as 0\n")
    w = _writer(buf)
    w.writerow(["kind", "strategy", "trial_count", "failed", "mean_latency_ms",
                "std_latency_ms", "degenerate", "colocation_mean_mm", "colocation_std_mm"])
    for rep in reports:
        co = rep.colocation_error_mm
        w.writerow([rep.kind.value, rep.strategy.value, rep.trial_count, rep.failed,
                    _fmt(rep.mean_latency_ms), _fmt(rep.std_latency_ms), int(rep.degenerate),
                    "" if co is None else _fmt(co[0]), "" if co is None else _fmt(co[1])])
    return buf.getvalue()


def summary_table(reports: Sequence[TrialBatchReport]) -> str:
    """Mean latency +/- std (ms), interaction kinds by row, strategies by column."""
    cells = {(r.kind, r.strategy): r for r in reports}
    header = ["Interaction", "Static", "Dynamic"]
    rows = []
    for kind in InteractionKind:
        row = [_KIND_TITLE[kind]]
        for strategy in (Strategy.STATIC, Strategy.DYNAMIC):
            rep = cells.get((kind, strategy))
            if rep is None:
                row.append("-")
            elif rep.trial_count == 0:
                row.append(f"no completed trials ({rep.failed} failed)")
            else:
                cell = f"{rep.mean_latency_ms:.2f} ± {rep.std_latency_ms:.2f} (n={rep.trial_count})"
                if rep.degenerate:
                    cell += " [n<2]"
                if rep.failed:
                    cell += f" [{rep.failed} failed]"
                row.append(cell)
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(3)]
    lines = ["Mean contact latency, ms (virtual minus physical)"]
    lines.append("  ".join(h.ljust(wd) for h, wd in zip(header, widths)))
    lines.append("  ".join("-" * wd for wd in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(wd) for c, wd in zip(r, widths)))
    return "\n".join(lines) + "\n"


def colocation_csv(report: ColocationReport, probes_per: int) -> str:
    buf = io.StringIO()
    buf.write("# colocation/v1\n")
    w = _writer(buf)
    w.writerow(["registration", "probe", "seed", "samples", "accepted", "error_mm",
                "residual_rms_mm"])
    for i, row in enumerate(report.rows):
        seed, n, acc, _, rms = row
        for j in range(probes_per):
            err = report.measurements_mm[i * probes_per + j]
            w.writerow([i, j, seed, n, acc, f"{err:.6f}", rms])
    return buf.getvalue()


def colocation_summary(report: ColocationReport, label: Optional[str] = None) -> str:
    head = f"{label}: " if label else ""
    return (f"{head}colocation error {report.mean_mm:.2f} ± {report.std_mm:.2f} mm "
            f"over {report.count} measurements\n")
