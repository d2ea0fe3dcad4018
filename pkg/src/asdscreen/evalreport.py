"""Confusion-matrix metrics and serialized run reports.

ASD is the positive class everywhere.  Sensitivity is recall of the ASD
class, precision is the positive predictive value.  A 0/0 metric (e.g.
sensitivity on a test set without positives) is reported as the undefined
marker ``None`` rather than 0 or an exception, so degenerate evaluation
sets stay visible.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .datamodel import Label
from .errors import ValidationError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValidationError("confusion matrix cells must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricTriple:
    """Accuracy, sensitivity and precision; None marks an undefined 0/0."""

    accuracy: Optional[float]
    sensitivity: Optional[float]
    precision: Optional[float]

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} {value} outside [0, 1]")

    def as_dict(self) -> dict[str, Optional[float]]:
        return {
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "precision": self.precision,
        }


def confusion(decisions: Iterable[tuple[int, int]]) -> ConfusionMatrix:
    """Count (predicted, actual) pairs; ASD is positive."""
    tp = fp = tn = fn = 0
    count = 0
    for predicted, actual in decisions:
        if predicted not in (Label.ASD, Label.NON_ASD) or actual not in (
            Label.ASD,
            Label.NON_ASD,
        ):
            raise ValidationError(
                f"decision pair ({predicted}, {actual}) is not fully labeled"
            )
        count += 1
        if actual == Label.ASD:
            if predicted == Label.ASD:
                tp += 1
            else:
                fn += 1
        else:
            if predicted == Label.ASD:
                fp += 1
            else:
                tn += 1
    if count == 0:
        raise ValidationError("cannot build a confusion matrix from no decisions")
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def metrics(c: ConfusionMatrix) -> MetricTriple:
    """Accuracy, sensitivity, precision from counts; 0/0 yields None."""
    if c.total == 0:
        raise ValidationError("confusion matrix is empty")

    def ratio(num: int, denom: int) -> Optional[float]:
        return num / denom if denom else None

    return MetricTriple(
        accuracy=(c.tp + c.tn) / c.total,
        sensitivity=ratio(c.tp, c.tp + c.fn),
        precision=ratio(c.tp, c.tp + c.fp),
    )


@dataclass(frozen=True)
class RunReport:
    """Everything needed to audit one train/evaluate/fuse run."""

    run_id: str
    module: str  # "tabular" | "image" | "hybrid"
    provenance: dict
    hyperparameters: dict
    metric_triple: MetricTriple
    matrix: ConfusionMatrix
    strategy: Optional[str] = None
    weights: Optional[dict] = None
    meta: dict = field(default_factory=dict)  # timestamps etc., never compared

    def __post_init__(self):
        if self.module not in ("tabular", "image", "hybrid"):
            raise ValidationError(f"unknown module identity {self.module!r}")
        recomputed = metrics(self.matrix)
        if recomputed != self.metric_triple:
            raise ValidationError(
                f"report metrics {self.metric_triple} do not match the embedded "
                f"confusion matrix (recomputed {recomputed})"
            )


def emit_report(report: RunReport) -> str:
    """Deterministic JSON rendering with stable key order."""
    doc = {
        "format_version": FORMAT_VERSION,
        "run_id": report.run_id,
        "module": report.module,
        "provenance": report.provenance,
        "hyperparameters": report.hyperparameters,
        "metrics": report.metric_triple.as_dict(),
        "confusion": {
            "tp": report.matrix.tp,
            "fp": report.matrix.fp,
            "tn": report.matrix.tn,
            "fn": report.matrix.fn,
        },
        "strategy": report.strategy,
        "weights": report.weights,
        "meta": report.meta,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def parse_report(text: str) -> RunReport:
    """Parse emitted JSON; fails if metrics and matrix disagree."""
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported report format_version {doc.get('format_version')!r}"
        )
    m = doc["metrics"]
    c = doc["confusion"]
    return RunReport(
        run_id=doc["run_id"],
        module=doc["module"],
        provenance=doc["provenance"],
        hyperparameters=doc["hyperparameters"],
        metric_triple=MetricTriple(m["accuracy"], m["sensitivity"], m["precision"]),
        matrix=ConfusionMatrix(tp=c["tp"], fp=c["fp"], tn=c["tn"], fn=c["fn"]),
        strategy=doc.get("strategy"),
        weights=doc.get("weights"),
        meta=doc.get("meta", {}),
    )


def write_report(report: RunReport, path: Path | str) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(emit_report(report))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_report(path: Path | str) -> RunReport:
    return parse_report(Path(path).read_text(encoding="utf-8"))


def _pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{100.0 * value:.1f}%"


def render_summary(report: RunReport) -> str:
    """Human-readable summary with percentages at one decimal place."""
    lines = [
        f"run:         {report.run_id}",
        f"module:      {report.module}",
    ]
    prov = report.provenance
    if prov:
        n = prov.get("n_total", "?")
        lines.append(
            f"samples:     {n} (ASD {prov.get('n_asd', '?')}"
            f" / non-ASD {prov.get('n_nonasd', '?')})"
        )
        if prov.get("augmented"):
            lines.append("validation:  augmented with extra images")
    if report.strategy:
        w = report.weights or {}
        lines.append(
            f"strategy:    {report.strategy}"
            f" (w_tabular={w.get('w_tabular', 0.5):.6f},"
            f" w_image={w.get('w_image', 0.5):.6f})"
        )
    c = report.matrix
    lines += [
        f"confusion:   tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}",
        f"accuracy:    {_pct(report.metric_triple.accuracy)}",
        f"sensitivity: {_pct(report.metric_triple.sensitivity)}",
        f"precision:   {_pct(report.metric_triple.precision)}",
    ]
    return "\n".join(lines) + "\n"


def comparison_csv(reports: list[RunReport]) -> str:
    """Side-by-side metric table across runs."""
    lines = ["run_id,module,strategy,n_train_or_total,accuracy,sensitivity,precision"]
    for r in reports:
        n = r.provenance.get("n_total", "")
        cells = [
            r.run_id,
            r.module,
            r.strategy or "",
            str(n),
            *(
                "" if v is None else f"{v!r}"
                for v in (
                    r.metric_triple.accuracy,
                    r.metric_triple.sensitivity,
                    r.metric_triple.precision,
                )
            ),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
