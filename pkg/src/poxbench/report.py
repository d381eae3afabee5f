"""Artifact writers for experiment reports.

Everything written here is a pure function of the report contents; wall
clock timings go to a separate ``timings.log`` so the other files are
byte-reproducible. Each file carries the digest of the config that made it.
"""

from __future__ import annotations

import csv
import io
import json
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .experiment import ExperimentReport, VariantComparison, format_aggregate_table
from .metrics import METRIC_NAMES

QUARTILE_RULE = "linear interpolation between order statistics (type 7)"


def _banner(report: ExperimentReport) -> list[str]:
    lines = [f"config_digest={report.config_digest}", f"protocol={report.config.protocol}"]
    if report.leaky:
        lines.insert(0, "LEAKY PROTOCOL: test rows share source images with training rows; scores are inflated")
    return lines


def _csv_text(header_lines: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def five_number(values: Sequence[float]) -> dict:
    """Quartiles (type 7) with Tukey whiskers at 1.5 IQR."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise InputError("cannot summarise an empty vector")
    q1, med, q3 = (float(np.quantile(v, q, method="linear")) for q in (0.25, 0.5, 0.75))
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {
        "n": int(v.size),
        "min": float(v[0]),
        "q1": q1,
        "median": med,
        "q3": q3,
        "max": float(v[-1]),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": [float(x) for x in v if x < inside.min() or x > inside.max()],
    }


def emit_boxplot_data(report: ExperimentReport, path: Path | str, svg: Path | str | None = None) -> Path:
    """Per-model kappa vectors and their five-number summaries as CSV.

    The file holds a summary table, a blank line, then one row per model
    with the raw fold values. With ``svg`` a static boxplot is drawn too.
    """
    models = list(report.models)
    if not models or not report.records:
        raise InputError("report has no model results to plot")
    path = Path(path)
    vectors = {m: report.kappas(m) for m in models}
    k = max(len(v) for v in vectors.values())
    summary_rows = [["model", "n", "min", "q1", "median", "q3", "max", "whisker_low", "whisker_high", "outliers"]]
    for m in models:
        s = five_number(vectors[m])
        summary_rows.append(
            [m, s["n"]] + [_num(s[key]) for key in ("min", "q1", "median", "q3", "max", "whisker_low", "whisker_high")]
            + [";".join(_num(x) for x in s["outliers"])]
        )
    header = _banner(report) + [
        f"boxplot data for Cohen's kappa per fold; quartiles: {QUARTILE_RULE}; whiskers: Tukey 1.5 IQR",
    ]
    raw_rows = [["model"] + [f"fold_{f}" for f in range(k)]]
    raw_rows += [[m] + [_num(x) for x in vectors[m]] for m in models]
    text = _csv_text(header, summary_rows) + "\n" + _csv_text([], raw_rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    if svg is not None:
        _draw_boxplot(report, vectors, Path(svg))
    return path


def read_boxplot_data(path: Path | str) -> tuple[list[dict], dict[str, list[float]]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    blank = lines.index("")
    summary = list(csv.DictReader(lines[:blank]))
    raw = {row[0]: [float(x) for x in row[1:] if x] for row in list(csv.reader(lines[blank + 1 :]))[1:]}
    return summary, raw


def _draw_boxplot(report: ExperimentReport, vectors: dict, path: Path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigurationError("drawing the boxplot needs matplotlib (pip install 'artifact[plot]')") from exc
    with matplotlib.rc_context({"svg.hashsalt": report.config_digest, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.boxplot([vectors[m] for m in vectors], whis=1.5)
        ax.set_xticks(range(1, len(vectors) + 1), list(vectors))
        ax.set_ylabel("Cohen's kappa")
        title = f"{report.config.name} ({report.variant})"
        ax.set_title(title + (" LEAKY" if report.leaky else ""))
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)


def metrics_csv(report: ExperimentReport) -> str:
    rows = [["variant", "model", "split", "fold"] + list(METRIC_NAMES)]
    for r in sorted(report.records + report.validation_records, key=lambda r: (r.split != "test", r.model, r.fold)):
        rows.append([r.variant, r.model, r.split, r.fold] + [_num(getattr(r, m)) for m in METRIC_NAMES])
    return _csv_text(_banner(report) + ["test rows are the fixed hold-out; validation rows are excluded from tables"], rows)


def kappa_csv(report: ExperimentReport, model: str) -> str:
    rows = [["fold", "kappa"]] + [[r.fold, _num(r.kappa)] for r in report.model_records(model)]
    return _csv_text(_banner(report) + [f"model={model}", f"variant={report.variant}"], rows)


def significance_csv(report: ExperimentReport) -> str:
    sig = report.significance
    rows = [["test", "first", "second", "method", "statistic", "p_value", "reject", "correction"]]
    for m in report.models:
        res = sig.normality.get(m)
        if res is None:
            rows.append(["normality", m, "", "shapiro-wilk", "", "", "", "none"])
        else:
            rows.append(["normality", m, "", res.method, _num(res.statistic), f"{res.p_value:.4f}", res.reject, "none"])
    for (a, b), res in sig.pairs.items():
        rows.append(["rank", a, b, res.method, _num(res.statistic), f"{res.p_value:.4f}", res.reject, res.correction])
    header = _banner(report) + [
        f"alpha={report.config.alpha}; two-sided; exact Mann-Whitney when n1+n2 <= {sig.exact_max_n} without ties"
    ]
    return _csv_text(header, rows)


def audit_text(report: ExperimentReport) -> str:
    lines = _banner(report) + [report.audit.summary()]
    lines += [f"violation: {v}" for v in report.audit.violations]
    if report.leaky:
        per_rep = report.stage_sizes.get("contamination_per_repetition", [])
        lines.append("contamination per repetition: " + ", ".join(f"{c:.4f}" for c in per_rep))
    return "\n".join(lines) + "\n"


def report_text(report: ExperimentReport) -> str:
    cfg = report.config
    out = _banner(report)
    out += [
        f"experiment: {cfg.name}",
        f"variant: {cfg.variant}" + (f" ({cfg.smoteenn_mode})" if cfg.variant == "smoteenn" else ""),
        f"models: {', '.join(cfg.models)}",
        f"k: {cfg.k}  hold-out fraction: {cfg.holdout_fraction}  seed: {cfg.seed}",
        "",
        "split: " + json.dumps(report.split_summary, sort_keys=True),
        "stage sizes: " + json.dumps({k: v for k, v in report.stage_sizes.items() if k != "folds"}, sort_keys=True),
    ]
    fold_sizes = report.stage_sizes.get("folds")
    if fold_sizes:
        out.append("training rows per fold: " + ", ".join(str(f["train_rows"]) for f in fold_sizes))
    metric_scope = "fixed hold-out test set" if not report.leaky else "leaky test split"
    out += [
        "",
        f"mean ± SD over {cfg.k} folds ({metric_scope})",
        format_aggregate_table(report, "sd"),
        "",
        f"mean ± SE over {cfg.k} folds ({metric_scope})",
        format_aggregate_table(report, "se"),
        "",
    ]
    sig = report.significance
    if sig is not None:
        out.append("normality of kappa (Shapiro-Wilk)")
        for m in cfg.models:
            res = sig.normality.get(m)
            if res is None:
                out.append(f"  {m}: not tested")
            else:
                out.append(f"  {m}: W={res.statistic:.4f} p={res.p_value:.4f} {'non-normal' if res.reject else 'normal'}")
        out.append(f"pairwise Mann-Whitney U on kappa (alpha={cfg.alpha}, correction={sig.correction})")
        if not sig.pairs:
            out.append("  (single model, no pairs)")
        for (a, b), res in sig.pairs.items():
            flag = "significant" if res.reject else "not significant"
            out.append(f"  {a} vs {b}: U={res.statistic:g} p={res.p_value:.4f} [{res.method}] {flag}")
        out += [f"  note: {n}" for n in sig.notes]
        out.append("")
    out.append(report.audit.summary())
    delta = report.overestimation()
    if delta:
        out.append("")
        out.append("overestimation versus the honest protocol (leaky mean minus honest mean)")
        for m, d in delta.items():
            out.append(f"  {m}: accuracy {100 * d['accuracy']:+.2f} points, kappa {100 * d['kappa']:+.2f} points")
    return "\n".join(out) + "\n"


def comparison_csv(comparisons: Sequence[VariantComparison], digests: Sequence[str]) -> str:
    rows = [["model", "first", "second", "direction", "mean_kappa_difference", "method", "U", "p_value", "reject"]]
    for c in comparisons:
        rows.append(
            [c.model, c.first, c.second, c.direction, _num(c.mean_difference), c.result.method,
             _num(c.result.statistic), f"{c.result.p_value:.4f}", c.result.reject]
        )
    return _csv_text([f"config_digests={','.join(digests)}", "Mann-Whitney U on per-fold kappa, two-sided"], rows)


def write_report(report: ExperimentReport, out_dir: Path | str, svg: bool = False) -> Path:
    """Write the full artifact set under ``out_dir`` and return it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.txt": report_text(report),
        "metrics.csv": metrics_csv(report),
        "significance.csv": significance_csv(report),
        "audit.txt": audit_text(report),
        "report.json": json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n",
    }
    for m in report.models:
        files[f"kappa_{m}.csv"] = kappa_csv(report, m)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    emit_boxplot_data(report, out / "boxplot.csv", out / "boxplot.svg" if svg else None)
    log_timings(report, out / "timings.log")
    if report.honest is not None:
        write_report(report.honest, out / "honest", svg)
    return out


def log_timings(report: ExperimentReport, path: Path) -> None:
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    parts = " ".join(f"{k}={v:.3f}s" for k, v in sorted(report.timings.items()))
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(f"{stamp} config_digest={report.config_digest} {parts}\n")


def load_report(path: Path | str) -> ExperimentReport:
    """Rebuild a report from ``report.json`` (or a directory holding one)."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not a report: {exc}") from exc
    return ExperimentReport.from_dict(data)
