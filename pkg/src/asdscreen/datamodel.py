"""Core domain types: ADOS records, datasets, recoding, and splitting.

Everything here is immutable after construction (frozen dataclasses, numpy
arrays flagged read-only) and safe to share across workers.

Conventions used throughout the package:

* Feature vectors are 1-D float64 arrays; a dataset's feature matrix is the
  (n_samples, n_features) stack of them.
* Images are (height, width, channels) float64 arrays with values in [0, 1];
  an image dataset's tensor is the (n, h, w, c) stack.
* Labels are int8: 1 = ASD (positive class), 0 = non-ASD, -1 = unlabeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .errors import ValidationError

#: Raw checklist scores: 0-3 measure severity, 7-9 is the not-applicable band.
VALID_RAW_SCORES = frozenset({0, 1, 2, 3, 7, 8, 9})

#: Highest severity score; divisor for scaling encoded features into [0, 1].
MAX_SEVERITY = 3


class Label(IntEnum):
    UNLABELED = -1
    NON_ASD = 0
    ASD = 1


class ModuleId(IntEnum):
    """ADOS module: 2 for non-fluent children, 3 for fluent children."""

    MODULE2 = 2
    MODULE3 = 3

    @property
    def feature_count(self) -> int:
        return 5 if self is ModuleId.MODULE2 else 10


@dataclass(frozen=True)
class AdosRecord:
    """One subject's raw checklist item scores plus diagnosis label."""

    subject_id: str
    module_id: ModuleId
    scores: dict[str, int]
    label: Label = Label.UNLABELED

    def __post_init__(self):
        for code, raw in self.scores.items():
            if raw not in VALID_RAW_SCORES:
                raise ValidationError(
                    f"subject {self.subject_id!r}, item {code!r}: score {raw} "
                    f"is not in the 0-3 severity band or the 7-9 band"
                )
        expected = ModuleId(self.module_id).feature_count
        if len(self.scores) != expected:
            raise ValidationError(
                f"subject {self.subject_id!r}: module {int(self.module_id)} "
                f"records carry exactly {expected} items, got {len(self.scores)}"
            )

    @property
    def feature_codes(self) -> frozenset[str]:
        return frozenset(self.scores)


@dataclass(frozen=True)
class Provenance:
    """Sample counts recorded with every dataset and trained model."""

    n_total: int
    n_asd: int
    n_nonasd: int
    augmented: bool = False

    def __post_init__(self):
        if min(self.n_total, self.n_asd, self.n_nonasd) < 0:
            raise ValidationError("provenance counts must be non-negative")
        if self.n_asd + self.n_nonasd > self.n_total:
            raise ValidationError(
                f"labeled counts {self.n_asd}+{self.n_nonasd} exceed total "
                f"{self.n_total}"
            )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """A tabular or image sample collection with label and count metadata.

    ``X`` is (n, d) for kind="tabular" and (n, h, w, c) for kind="image".
    """

    kind: str
    X: np.ndarray
    y: np.ndarray
    subject_ids: tuple[str, ...]
    provenance: Provenance = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in ("tabular", "image"):
            raise ValidationError(f"unknown dataset kind {self.kind!r}")
        expected_ndim = 2 if self.kind == "tabular" else 4
        if self.X.ndim != expected_ndim:
            raise ValidationError(
                f"{self.kind} dataset needs a {expected_ndim}-D sample array, "
                f"got shape {self.X.shape}"
            )
        object.__setattr__(self, "X", _freeze(np.asarray(self.X, dtype=np.float64)))
        object.__setattr__(self, "y", _freeze(np.asarray(self.y, dtype=np.int8)))
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        if not (len(self.X) == len(self.y) == len(self.subject_ids)):
            raise ValidationError("X, y and subject_ids lengths disagree")
        if self.X.size and not np.isfinite(self.X).all():
            raise ValidationError("sample values must be finite")
        counted = _count_labels(self.y)
        if self.provenance is None:
            object.__setattr__(self, "provenance", counted)
        else:
            stored = replace(self.provenance, augmented=False)
            if stored != counted:
                raise ValidationError(
                    f"stored provenance {self.provenance} disagrees with "
                    f"recounted {counted}"
                )

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        if self.kind != "tabular":
            raise ValidationError("n_features is only defined for tabular data")
        return self.X.shape[1]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        if self.kind != "image":
            raise ValidationError("image_shape is only defined for image data")
        return self.X.shape[1:]

    def take(self, indices: np.ndarray) -> "Dataset":
        """A new dataset holding the given rows, counts recomputed."""
        indices = np.asarray(indices)
        return Dataset(
            kind=self.kind,
            X=self.X[indices],
            y=self.y[indices],
            subject_ids=tuple(self.subject_ids[i] for i in indices),
            provenance=replace(
                _count_labels(self.y[indices]), augmented=self.provenance.augmented
            ),
        )


def _count_labels(y: np.ndarray) -> Provenance:
    return Provenance(
        n_total=int(len(y)),
        n_asd=int(np.sum(y == Label.ASD)),
        n_nonasd=int(np.sum(y == Label.NON_ASD)),
    )


@dataclass(frozen=True)
class SplitPair:
    """A train/test partition together with the parameters that made it."""

    train: Dataset
    test: Dataset
    seed: int
    ratio: float


def recode_score(raw: int) -> int:
    """Map a raw item score onto the severity scale.

    Scores 0-3 pass through; the 7-9 not-applicable band carries no severity
    signal and is recoded to 0.
    """
    if raw not in VALID_RAW_SCORES:
        raise ValidationError(
            f"score {raw} is not in the 0-3 severity band or the 7-9 band"
        )
    return raw if raw <= MAX_SEVERITY else 0


def encode_record(record: AdosRecord, codebook: tuple[str, ...] | list[str]) -> np.ndarray:
    """Encode one record as a float vector in codebook order.

    Each component is the recoded score scaled into [0, 1] by dividing by 3,
    so values always lie in {0, 1/3, 2/3, 1}.
    """
    codebook = tuple(codebook)
    missing = [c for c in codebook if c not in record.scores]
    extra = [c for c in record.scores if c not in codebook]
    if missing or extra:
        raise SchemaError(
            f"subject {record.subject_id!r}: feature codes do not match "
            f"codebook (missing {missing or 'none'}, extra {extra or 'none'})"
        )
    return np.array(
        [recode_score(record.scores[c]) / MAX_SEVERITY for c in codebook],
        dtype=np.float64,
    )


def split_dataset(
    dataset: Dataset, ratio: float, seed: int, stratify: bool = False
) -> SplitPair:
    """Partition a dataset into train/test via a seeded shuffle.

    The train side receives floor(ratio * n) samples.  With ``stratify`` the
    per-class proportions are preserved as closely as the floor allows; the
    overall train size is unchanged.
    """
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(dataset)
    if n < 2:
        raise ValidationError(f"cannot split a dataset of {n} sample(s)")
    n_train = math.floor(ratio * n)
    rng = np.random.default_rng(seed)
    if stratify:
        train_idx, test_idx = _stratified_split_indices(dataset.y, n_train, rng)
    else:
        perm = rng.permutation(n)
        train_idx, test_idx = perm[:n_train], perm[n_train:]
    return SplitPair(
        train=dataset.take(train_idx),
        test=dataset.take(test_idx),
        seed=seed,
        ratio=ratio,
    )


def _stratified_split_indices(
    y: np.ndarray, n_train: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    classes = sorted(set(int(v) for v in y))
    quotas: dict[int, int] = {}
    remainders: list[tuple[float, int]] = []
    for cls in classes:
        exact = n_train * np.sum(y == cls) / len(y)
        quotas[cls] = math.floor(exact)
        remainders.append((exact - quotas[cls], cls))
    # Hand leftover slots to the classes with the largest fractional share;
    # ties resolved by class value so the allocation stays deterministic.
    leftover = n_train - sum(quotas.values())
    for _, cls in sorted(remainders, key=lambda t: (-t[0], t[1]))[:leftover]:
        quotas[cls] += 1
    train_parts, test_parts = [], []
    for cls in classes:
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        train_parts.append(members[: quotas[cls]])
        test_parts.append(members[quotas[cls]:])
    return np.concatenate(train_parts), np.concatenate(test_parts)
