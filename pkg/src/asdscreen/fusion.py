"""Late fusion of per-subject probabilities from the two modules.

Three weighting strategies are supported: a plain average, weights
proportional to each module's training-set size, and weights proportional
to each module's count of ASD-positive training subjects.  Counts come from
model provenance captured at training time, never from hand-typed numbers.

A fused probability at exactly the decision threshold maps to ASD: a
pre-screening tool should err toward flagging subjects for follow-up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .datamodel import Label, Provenance
from .errors import PairingError, ValidationError
from .evalreport import MetricTriple

STRATEGIES = ("simple", "by-train-count", "by-asd-count")

_WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class PredictionScore:
    """One module's ASD probability for one subject."""

    subject_id: str
    module: str  # "tabular" | "image"
    p: float

    def __post_init__(self):
        if self.module not in ("tabular", "image"):
            raise ValidationError(f"unknown module {self.module!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(
                f"probability {self.p} for {self.subject_id!r} outside [0, 1]"
            )


@dataclass(frozen=True)
class FusionWeights:
    w_tabular: float
    w_image: float
    strategy: str

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if min(self.w_tabular, self.w_image) < 0:
            raise ValidationError("fusion weights must be non-negative")
        if abs(self.w_tabular + self.w_image - 1.0) > _WEIGHT_SUM_TOL:
            raise ValidationError(
                f"weights {self.w_tabular} + {self.w_image} do not sum to 1"
            )

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "w_tabular": self.w_tabular,
            "w_image": self.w_image,
        }


@dataclass(frozen=True)
class FusedDecision:
    subject_id: str
    p_fused: float
    label: Label
    weights: FusionWeights
    threshold: float


def weights_simple() -> FusionWeights:
    """Plain average of the two modules."""
    return FusionWeights(0.5, 0.5, "simple")


def weights_by_train_count(n_tabular: int, n_image: int) -> FusionWeights:
    """Weights proportional to each module's training-set size."""
    if n_tabular < 1 or n_image < 1:
        raise ValidationError("training counts must be at least 1")
    w = n_tabular / (n_tabular + n_image)
    return FusionWeights(w, 1.0 - w, "by-train-count")


def weights_by_asd_count(a_tabular: int, a_image: int) -> FusionWeights:
    """Weights proportional to each module's ASD-positive training count."""
    if a_tabular < 1 or a_image < 1:
        raise ValidationError("ASD counts must be at least 1")
    w = a_tabular / (a_tabular + a_image)
    return FusionWeights(w, 1.0 - w, "by-asd-count")


def weights_for(
    strategy: str, tab_provenance: Provenance, img_provenance: Provenance
) -> FusionWeights:
    """Derive strategy weights from the two models' training provenance."""
    if strategy == "simple":
        return weights_simple()
    if strategy == "by-train-count":
        return weights_by_train_count(tab_provenance.n_total, img_provenance.n_total)
    if strategy == "by-asd-count":
        return weights_by_asd_count(tab_provenance.n_asd, img_provenance.n_asd)
    raise ValidationError(f"unknown strategy {strategy!r}")


def fuse(
    p_tab: PredictionScore,
    p_img: PredictionScore,
    weights: FusionWeights,
    threshold: float = 0.5,
) -> FusedDecision:
    """Weighted average of the two probabilities, thresholded to a label."""
    if p_tab.subject_id != p_img.subject_id:
        raise PairingError(
            f"cannot fuse {p_tab.subject_id!r} with {p_img.subject_id!r}"
        )
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    fused = weights.w_tabular * p_tab.p + weights.w_image * p_img.p
    # keep the convex combination inside its envelope despite roundoff
    lo, hi = min(p_tab.p, p_img.p), max(p_tab.p, p_img.p)
    fused = min(max(fused, lo), hi)
    label = Label.ASD if fused >= threshold else Label.NON_ASD
    return FusedDecision(
        subject_id=p_tab.subject_id,
        p_fused=fused,
        label=label,
        weights=weights,
        threshold=threshold,
    )


def aggregate_metrics(
    m_tab: MetricTriple, m_img: MetricTriple, weights: FusionWeights
) -> MetricTriple:
    """Componentwise convex combination of two modules' metric triples.

    This averages module-level metrics rather than per-subject
    probabilities; ``fuse`` is the per-subject operation.
    """

    def combine(name: str, a: Optional[float], b: Optional[float]) -> float:
        if a is None or b is None:
            raise ValidationError(f"{name} is undefined on one side, cannot combine")
        return weights.w_tabular * a + weights.w_image * b

    return MetricTriple(
        accuracy=combine("accuracy", m_tab.accuracy, m_img.accuracy),
        sensitivity=combine("sensitivity", m_tab.sensitivity, m_img.sensitivity),
        precision=combine("precision", m_tab.precision, m_img.precision),
    )


def _index_scores(scores: list[PredictionScore], module: str) -> dict[str, PredictionScore]:
    indexed: dict[str, PredictionScore] = {}
    for s in scores:
        if s.module != module:
            raise ValidationError(
                f"expected only {module!r} scores on this side, got {s.module!r}"
            )
        if s.subject_id in indexed:
            raise ValidationError(f"duplicate subject {s.subject_id!r} in scores")
        indexed[s.subject_id] = s
    return indexed


def run_hybrid(
    tab_scores: list[PredictionScore],
    img_scores: list[PredictionScore],
    strategy: str,
    tab_provenance: Provenance,
    img_provenance: Provenance,
    threshold: float = 0.5,
) -> list[FusedDecision]:
    """Fuse two per-subject score lists; output ordered by subject id."""
    tab = _index_scores(tab_scores, "tabular")
    img = _index_scores(img_scores, "image")
    missing_img = sorted(set(tab) - set(img))
    missing_tab = sorted(set(img) - set(tab))
    if missing_img or missing_tab:
        raise PairingError(
            f"subject sets differ: missing from image side {missing_img}, "
            f"missing from tabular side {missing_tab}",
            missing_left=missing_tab,
            missing_right=missing_img,
        )
    weights = weights_for(strategy, tab_provenance, img_provenance)
    return [
        fuse(tab[sid], img[sid], weights, threshold) for sid in sorted(tab)
    ]


# ---------------------------------------------------------------------------
# Score and decision interchange (CSV)
# ---------------------------------------------------------------------------


def write_scores_csv(scores: list[PredictionScore]) -> str:
    lines = ["subject_id,module,probability"]
    lines += [f"{s.subject_id},{s.module},{s.p!r}" for s in scores]
    return "\n".join(lines) + "\n"


def read_scores_csv(text: str) -> list[PredictionScore]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split(",") != ["subject_id", "module", "probability"]:
        raise ValidationError(
            "score file must start with header 'subject_id,module,probability'"
        )
    scores = []
    for row_no, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != 3:
            raise ValidationError(f"score row {row_no}: expected 3 cells")
        try:
            p = float(cells[2])
        except ValueError:
            raise ValidationError(
                f"score row {row_no}: bad probability {cells[2]!r}"
            ) from None
        scores.append(PredictionScore(subject_id=cells[0], module=cells[1], p=p))
    return scores


def write_decisions_csv(
    decisions: list[FusedDecision],
    tab_scores: list[PredictionScore],
    img_scores: list[PredictionScore],
) -> str:
    tab = {s.subject_id: s for s in tab_scores}
    img = {s.subject_id: s for s in img_scores}
    lines = ["subject_id,p_tabular,p_image,w_tabular,w_image,p_fused,label"]
    for d in decisions:
        token = "ASD" if d.label == Label.ASD else "NonASD"
        lines.append(
            ",".join(
                (
                    d.subject_id,
                    repr(tab[d.subject_id].p),
                    repr(img[d.subject_id].p),
                    repr(d.weights.w_tabular),
                    repr(d.weights.w_image),
                    repr(d.p_fused),
                    token,
                )
            )
        )
    return "\n".join(lines) + "\n"
