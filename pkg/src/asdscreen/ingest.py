"""Dataset ingestion: ADOS CSV parsing, netpbm image decoding, synthesis.

The CSV dialect is deliberately minimal: comma separator, no quoting, UTF-8,
LF or CRLF line endings.  Images travel as binary PGM (P5, one channel) or
PPM (P6, three channels) with maxval 255 and a single whitespace byte between
the header and the payload.

The synthetic generators stand in for clinical datasets that cannot be
redistributed.  Both are pure functions of their config: the tabular one
draws integer item scores from per-class categorical distributions, the
image one paints a localized intensity blob whose contrast is class-dependent.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .datamodel import (
    AdosRecord,
    Dataset,
    Label,
    ModuleId,
    Provenance,
    encode_record,
)
from .errors import DecodeError, SchemaError, ValidationError

DEFAULT_LABEL_ENCODING = {"ASD": Label.ASD, "NonASD": Label.NON_ASD}

#: Item codes used by the synthetic generators; real codebooks are
#: user-supplied configuration.
DEFAULT_CODEBOOKS = {
    5: ("A1", "A2", "B1", "B2", "B3"),
    10: ("A1", "A2", "A3", "B1", "B2", "B3", "B4", "C1", "C2", "D1"),
}

_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of an ADOS score table."""

    id_column: str
    label_column: str
    feature_columns: tuple[str, ...]
    label_encoding: dict[str, Label] = field(
        default_factory=lambda: dict(DEFAULT_LABEL_ENCODING)
    )

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if not self.feature_columns:
            raise SchemaError("schema needs at least one feature column")
        if len(set(self.feature_columns)) != len(self.feature_columns):
            raise SchemaError("feature columns contain duplicates")
        names = {self.id_column, self.label_column, *self.feature_columns}
        if len(names) != 2 + len(self.feature_columns):
            raise SchemaError("id, label and feature column names must differ")

    @property
    def label_tokens(self) -> dict[Label, str]:
        return {label: token for token, label in self.label_encoding.items()}


@dataclass(frozen=True)
class SynthesisConfig:
    """Parameters of the deterministic synthetic generators."""

    n_samples: int
    asd_fraction: float = 0.5
    feature_count: int = 10
    class_separation: float = 1.0
    seed: int = 0
    image_height: int = 16
    image_width: int = 16
    image_channels: int = 1

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValidationError("n_samples must be positive")
        if not 0.0 <= self.asd_fraction <= 1.0:
            raise ValidationError("asd_fraction must lie in [0, 1]")
        if self.class_separation < 0:
            raise ValidationError("class_separation must be non-negative")

    @property
    def n_asd(self) -> int:
        # round-half-up so the derived count is platform-independent
        return int(math.floor(self.asd_fraction * self.n_samples + 0.5))


# ---------------------------------------------------------------------------
# ADOS CSV
# ---------------------------------------------------------------------------


def _split_rows(text: str) -> list[list[str]]:
    rows = []
    for line in text.splitlines():
        if line.strip() == "":
            continue
        rows.append([cell.strip() for cell in line.split(",")])
    return rows


def read_ados_records(
    text: str, schema: CsvSchema, module_id: ModuleId
) -> list[AdosRecord]:
    """Parse CSV text into raw score records, preserving row order."""
    rows = _split_rows(text)
    if not rows:
        raise SchemaError("empty input: a header row is required")
    header = rows[0]
    wanted = (schema.id_column, schema.label_column, *schema.feature_columns)
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"header is missing column(s) {missing}")
    col = {name: header.index(name) for name in wanted}

    records = []
    for row_no, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise SchemaError(
                f"row {row_no}: expected {len(header)} cells, got {len(row)}"
            )
        token = row[col[schema.label_column]]
        if token not in schema.label_encoding:
            raise ValidationError(f"row {row_no}: unknown label token {token!r}")
        scores = {}
        for code in schema.feature_columns:
            cell = row[col[code]]
            try:
                scores[code] = int(cell)
            except ValueError:
                raise ValidationError(
                    f"row {row_no}: item {code!r} has non-integer score {cell!r}"
                ) from None
        try:
            record = AdosRecord(
                subject_id=row[col[schema.id_column]],
                module_id=module_id,
                scores=scores,
                label=schema.label_encoding[token],
            )
        except ValidationError as exc:
            raise ValidationError(f"row {row_no}: {exc}") from None
        records.append(record)
    return records


def write_ados_csv(records: list[AdosRecord], schema: CsvSchema) -> str:
    """Render records back to CSV text (inverse of read_ados_records)."""
    tokens = schema.label_tokens
    lines = [",".join((schema.id_column, schema.label_column, *schema.feature_columns))]
    for r in records:
        cells = [r.subject_id, tokens[r.label]]
        cells += [str(r.scores[c]) for c in schema.feature_columns]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def records_to_dataset(
    records: list[AdosRecord], codebook: tuple[str, ...]
) -> Dataset:
    """Encode records into a tabular dataset, counts recomputed."""
    codebook = tuple(codebook)
    if records:
        X = np.stack([encode_record(r, codebook) for r in records])
    else:
        X = np.empty((0, len(codebook)))
    return Dataset(
        kind="tabular",
        X=X,
        y=np.array([int(r.label) for r in records], dtype=np.int8),
        subject_ids=tuple(r.subject_id for r in records),
    )


def parse_ados_csv(text: str, schema: CsvSchema, module_id: ModuleId) -> Dataset:
    """Parse CSV text straight into an encoded tabular dataset."""
    records = read_ados_records(text, schema, module_id)
    return records_to_dataset(records, schema.feature_columns)


# ---------------------------------------------------------------------------
# Binary PGM / PPM
# ---------------------------------------------------------------------------


def decode_image(data: bytes) -> np.ndarray:
    """Decode a binary PGM/PPM payload into an (h, w, c) array in [0, 1]."""
    magic = bytes(data[:2])
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise DecodeError(f"bad magic number {magic!r}", byte_offset=0)

    pos = 2
    values = []
    for name in ("width", "height", "maxval"):
        while pos < len(data) and data[pos] in _WHITESPACE:
            pos += 1
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE:
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise DecodeError(
                f"header token {name!r} is not a positive integer", byte_offset=start
            )
        values.append((int(token), start))
    (width, _), (height, _), (maxval, maxval_at) = values
    if width < 1 or height < 1:
        raise DecodeError(f"degenerate dimensions {width}x{height}", byte_offset=2)
    if maxval != 255:
        raise DecodeError(f"maxval {maxval} unsupported, need 255", byte_offset=maxval_at)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise DecodeError("expected single whitespace after maxval", byte_offset=pos)
    pos += 1

    expected = width * height * channels
    payload = data[pos:]
    if len(payload) != expected:
        raise DecodeError(
            f"payload has {len(payload)} bytes, {expected} expected",
            byte_offset=pos,
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(height, width, channels)


def encode_image(image: np.ndarray) -> bytes:
    """Encode an (h, w, c) array in [0, 1] as binary PGM (c=1) or PPM (c=3)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValidationError(f"expected (h, w, 1|3) array, got shape {image.shape}")
    if image.size and (image.min() < 0 or image.max() > 1):
        raise ValidationError("pixel values must lie in [0, 1]")
    h, w, c = image.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + b"\n" + f"{w} {h}\n255\n".encode("ascii")
    payload = np.rint(image * 255.0).astype(np.uint8).tobytes()
    return header + payload


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def _interleaved_labels(cfg: SynthesisConfig, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros(cfg.n_samples, dtype=np.int8)
    labels[: cfg.n_asd] = 1
    return labels[rng.permutation(cfg.n_samples)]


def _score_distribution(separation: float, positive: bool) -> np.ndarray:
    scores = np.arange(4, dtype=np.float64)
    sign = 1.0 if positive else -1.0
    logits = sign * separation * (scores - 1.5)
    p = np.exp(logits - logits.max())
    return p / p.sum()


def synth_tabular_records(
    cfg: SynthesisConfig,
) -> tuple[list[AdosRecord], tuple[str, ...]]:
    """Generate raw score records; ASD samples skew toward higher severity."""
    if cfg.feature_count not in DEFAULT_CODEBOOKS:
        raise ValidationError(
            f"feature_count must be one of {sorted(DEFAULT_CODEBOOKS)}, "
            f"got {cfg.feature_count}"
        )
    codebook = DEFAULT_CODEBOOKS[cfg.feature_count]
    module = ModuleId.MODULE2 if cfg.feature_count == 5 else ModuleId.MODULE3
    rng = np.random.default_rng(cfg.seed)
    labels = _interleaved_labels(cfg, rng)

    p_pos = _score_distribution(cfg.class_separation, positive=True)
    p_neg = _score_distribution(cfg.class_separation, positive=False)
    scores = np.empty((cfg.n_samples, cfg.feature_count), dtype=np.int64)
    for i, label in enumerate(labels):
        p = p_pos if label == Label.ASD else p_neg
        scores[i] = rng.choice(4, size=cfg.feature_count, p=p)

    width = max(4, len(str(cfg.n_samples)))
    records = [
        AdosRecord(
            subject_id=f"s{i:0{width}d}",
            module_id=module,
            scores={code: int(scores[i, j]) for j, code in enumerate(codebook)},
            label=Label(int(labels[i])),
        )
        for i in range(cfg.n_samples)
    ]
    return records, codebook


def synth_tabular(cfg: SynthesisConfig) -> Dataset:
    """Deterministic synthetic tabular dataset (see synth_tabular_records)."""
    records, codebook = synth_tabular_records(cfg)
    return records_to_dataset(records, codebook)


def synth_images(cfg: SynthesisConfig) -> Dataset:
    """Deterministic synthetic image dataset.

    Every image is background plus pixel noise plus one Gaussian intensity
    blob at a random position; ASD-labeled images get extra blob contrast
    proportional to class_separation, so separation 0 makes the classes
    indistinguishable while large separation makes even a linear probe on
    raw pixels accurate.
    """
    h, w, c = cfg.image_height, cfg.image_width, cfg.image_channels
    if h < 8 or w < 8:
        raise ValidationError(f"image dimensions must be at least 8x8, got {h}x{w}")
    if c not in (1, 3):
        raise ValidationError(f"image_channels must be 1 or 3, got {c}")
    rng = np.random.default_rng(cfg.seed)
    labels = _interleaved_labels(cfg, rng)

    n = cfg.n_samples
    cy = rng.uniform(0.2 * h, 0.8 * h, size=n)
    cx = rng.uniform(0.2 * w, 0.8 * w, size=n)
    noise = rng.normal(0.0, 0.05, size=(n, h, w, c))

    sigma = min(h, w) / 5.0
    base, blob_amp, contrast_gain = 0.25, 0.15, 0.10
    amp = blob_amp + contrast_gain * cfg.class_separation * (labels == Label.ASD)

    yy = np.arange(h, dtype=np.float64)[None, :, None]
    xx = np.arange(w, dtype=np.float64)[None, None, :]
    blob = np.exp(
        -((yy - cy[:, None, None]) ** 2 + (xx - cx[:, None, None]) ** 2)
        / (2.0 * sigma**2)
    )
    images = base + noise + amp[:, None, None, None] * blob[..., None]
    np.clip(images, 0.0, 1.0, out=images)

    width = max(4, len(str(n)))
    ids = tuple(f"s{i:0{width}d}" for i in range(n))
    return Dataset(kind="image", X=images, y=labels, subject_ids=ids)


def synth_paired(
    tab_cfg: SynthesisConfig, img_cfg: SynthesisConfig
) -> tuple[Dataset, Dataset]:
    """Generate a subject-paired tabular/image dataset couple.

    The two generators run independently; samples are then matched by class
    and given shared subject ids, yielding one cohort with both a score
    sheet and an image per subject (the shape of a combined evaluation set).
    """
    if tab_cfg.n_samples != img_cfg.n_samples or tab_cfg.n_asd != img_cfg.n_asd:
        raise ValidationError("paired synthesis needs matching sample and ASD counts")
    tab = synth_tabular(tab_cfg)
    img = synth_images(img_cfg)

    def by_class(d: Dataset) -> np.ndarray:
        # ASD block first, original order retained within each class
        return np.concatenate(
            [np.flatnonzero(d.y == Label.ASD), np.flatnonzero(d.y == Label.NON_ASD)]
        )

    tab_sorted = tab.take(by_class(tab))
    img_sorted = img.take(by_class(img))
    width = max(4, len(str(tab_cfg.n_samples)))
    ids = tuple(f"p{i:0{width}d}" for i in range(tab_cfg.n_samples))
    paired_tab = Dataset("tabular", tab_sorted.X, tab_sorted.y, ids)
    paired_img = Dataset("image", img_sorted.X, img_sorted.y, ids)
    return paired_tab, paired_img


# ---------------------------------------------------------------------------
# Dataset directories and manifests
# ---------------------------------------------------------------------------


def dataset_manifest(kind: str, cfg: SynthesisConfig, files: dict[str, bytes]) -> dict:
    """Reproducibility manifest: config echo plus payload digests."""
    digests = {name: hashlib.sha256(blob).hexdigest() for name, blob in files.items()}
    combined = "\n".join(f"{name}:{digests[name]}" for name in sorted(digests))
    return {
        "kind": kind,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "files": digests,
        "sha256": hashlib.sha256(combined.encode("ascii")).hexdigest(),
        "format_version": 1,
    }


def default_schema(codebook: tuple[str, ...]) -> CsvSchema:
    return CsvSchema(id_column="id", label_column="label", feature_columns=codebook)


def schema_from_header(text: str) -> CsvSchema:
    """Infer the default schema (id, label, rest are features) from a header."""
    rows = _split_rows(text)
    if not rows:
        raise SchemaError("empty input: a header row is required")
    header = rows[0]
    if header[:2] != ["id", "label"] or len(header) < 3:
        raise SchemaError(
            "expected header starting with 'id,label' followed by feature columns"
        )
    return default_schema(tuple(header[2:]))


def load_tabular_dataset(path: Path | str) -> Dataset:
    """Load an ADOS CSV file (or directory containing ados.csv)."""
    path = Path(path)
    if path.is_dir():
        path = path / "ados.csv"
    text = path.read_text(encoding="utf-8")
    schema = schema_from_header(text)
    module = ModuleId.MODULE2 if len(schema.feature_columns) == 5 else ModuleId.MODULE3
    return parse_ados_csv(text, schema, module)


def write_tabular_dataset(
    directory: Path | str, records: list[AdosRecord], codebook: tuple[str, ...]
) -> dict[str, bytes]:
    """Write ados.csv under directory; returns {relative name: bytes written}."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = write_ados_csv(records, default_schema(tuple(codebook))).encode("utf-8")
    (directory / "ados.csv").write_bytes(blob)
    return {"ados.csv": blob}


def write_image_dataset(directory: Path | str, dataset: Dataset) -> dict[str, bytes]:
    """Write images/<id>.pgm|ppm plus labels.csv; returns written blobs."""
    if dataset.kind != "image":
        raise ValidationError("write_image_dataset needs an image dataset")
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    ext = "pgm" if dataset.image_shape[2] == 1 else "ppm"
    files: dict[str, bytes] = {}
    lines = ["subject_id,label"]
    for i, sid in enumerate(dataset.subject_ids):
        blob = encode_image(dataset.X[i])
        name = f"images/{sid}.{ext}"
        (directory / name).write_bytes(blob)
        files[name] = blob
        token = "ASD" if dataset.y[i] == Label.ASD else "NonASD"
        lines.append(f"{sid},{token}")
    labels_blob = ("\n".join(lines) + "\n").encode("utf-8")
    (directory / "labels.csv").write_bytes(labels_blob)
    files["labels.csv"] = labels_blob
    return files


def load_image_dataset(path: Path | str) -> Dataset:
    """Load a directory written by write_image_dataset."""
    path = Path(path)
    rows = _split_rows((path / "labels.csv").read_text(encoding="utf-8"))
    if not rows or rows[0] != ["subject_id", "label"]:
        raise SchemaError("labels.csv must start with header 'subject_id,label'")
    ids, labels, images = [], [], []
    for sid, token in rows[1:]:
        if token not in DEFAULT_LABEL_ENCODING:
            raise ValidationError(f"unknown label token {token!r} for {sid!r}")
        candidates = [path / "images" / f"{sid}.pgm", path / "images" / f"{sid}.ppm"]
        existing = next((p for p in candidates if p.exists()), None)
        if existing is None:
            raise ValidationError(f"no image file found for subject {sid!r}")
        images.append(decode_image(existing.read_bytes()))
        ids.append(sid)
        labels.append(int(DEFAULT_LABEL_ENCODING[token]))
    if not images:
        raise ValidationError("image dataset is empty")
    return Dataset(
        kind="image",
        X=np.stack(images),
        y=np.array(labels, dtype=np.int8),
        subject_ids=tuple(ids),
    )
