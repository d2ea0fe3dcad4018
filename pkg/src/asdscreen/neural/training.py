"""Training loop with plateau-driven lr decay and best-weight checkpointing."""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..datamodel import Dataset, Label, Provenance
from ..errors import DivergenceError, TrainingError, ValidationError
from .layers import (
    Conv,
    DenseBlock,
    FullyConnected,
    GlobalAvgPool,
    MaxPool,
    ReLU,
    SigmoidHead,
    Transition,
)
from .network import CallbackConfig, NetConfig, Network, bce_from_logits

DIVERGENCE_LIMIT = 1e12
NET_FORMAT_VERSION = 1

_EVAL_CHUNK = 256


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass(frozen=True)
class TrainedNet:
    """Best-checkpoint parameters plus the full training history.

    ``params`` holds the values of the epoch with the highest validation
    accuracy (earliest such epoch on ties), not the final epoch's.
    """

    config: NetConfig
    params: tuple[np.ndarray, ...]
    history: tuple[EpochStats, ...]
    best_epoch: int
    provenance: Provenance

    def __post_init__(self):
        frozen = []
        for p in self.params:
            p = np.array(p, dtype=np.float64)  # private copy
            p.flags.writeable = False
            frozen.append(p)
        object.__setattr__(self, "params", tuple(frozen))

    @property
    def best_val_acc(self) -> float:
        return self.history[self.best_epoch - 1].val_acc

    def network(self) -> Network:
        net = Network(self.config)
        if [p.shape for p in net.params] != [p.shape for p in self.params]:
            raise ValidationError("stored parameters do not fit the configuration")
        net.params = [p.copy() for p in self.params]
        return net

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        return _forward_chunked(self.network(), np.asarray(images, dtype=np.float64))


def _forward_chunked(net: Network, x: np.ndarray) -> np.ndarray:
    outs = [
        net.forward(x[start : start + _EVAL_CHUNK])
        for start in range(0, len(x), _EVAL_CHUNK)
    ]
    return np.concatenate(outs) if outs else np.empty(0)


def _check_image_dataset(d: Dataset, name: str, input_shape) -> None:
    if d.kind != "image":
        raise ValidationError(f"{name} dataset must hold images")
    if len(d) == 0:
        raise TrainingError(f"{name} dataset is empty")
    if d.image_shape != tuple(input_shape):
        raise ValidationError(
            f"{name} image shape {d.image_shape} does not match configured "
            f"input {tuple(input_shape)}"
        )
    if np.any(d.y == Label.UNLABELED):
        raise TrainingError(f"{name} dataset contains unlabeled samples")


def _evaluate(net: Network, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    logits = np.concatenate(
        [
            net.forward_logits(x[start : start + _EVAL_CHUNK])
            for start in range(0, len(x), _EVAL_CHUNK)
        ]
    )
    loss = bce_from_logits(logits, y.astype(np.float64))
    acc = float(np.mean((logits > 0.0) == (y == 1)))
    return loss, acc


def train_net(train: Dataset, val: Dataset, config: NetConfig) -> TrainedNet:
    """Mini-batch gradient descent with the validation callback.

    After every epoch the validation accuracy is measured; parameters are
    checkpointed on strict improvement, and `patience` epochs without
    improvement multiply the learning rate by the decay factor (never below
    min_lr).  The returned parameters are the best checkpoint.
    """
    _check_image_dataset(train, "train", config.input_shape)
    _check_image_dataset(val, "val", config.input_shape)

    net = Network(config)
    shuffle_rng = np.random.default_rng((config.init_seed, 1))
    x_train, y_train = train.X, train.y.astype(np.float64)
    x_val, y_val = val.X, val.y.astype(np.float64)

    lr = config.initial_lr
    cb = config.callback
    best_acc = -math.inf
    best_params: list[np.ndarray] = [p.copy() for p in net.params]
    best_epoch = 0
    plateau = 0
    history: list[EpochStats] = []

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(x_train))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            xb, yb = x_train[batch], y_train[batch]
            loss, grads = net.backward(xb, yb)
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise DivergenceError(f"training loss {loss}", iteration=epoch)
            correct += int(np.sum((net.last_logits_ > 0.0) == (yb == 1)))
            loss_sum += loss * len(batch)
            for p, g in zip(net.params, grads):
                p -= lr * g
        val_loss, val_acc = _evaluate(net, x_val, y_val)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=loss_sum / len(order),
                train_acc=correct / len(order),
                val_loss=val_loss,
                val_acc=val_acc,
                lr=lr,
            )
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = [p.copy() for p in net.params]
            best_epoch = epoch
            plateau = 0
        else:
            plateau += 1
            if plateau >= cb.patience:
                lr = max(lr * cb.lr_decay_factor, cb.min_lr)
                plateau = 0

    return TrainedNet(
        config=config,
        params=tuple(best_params),
        history=tuple(history),
        best_epoch=best_epoch,
        provenance=train.provenance,
    )


def predict_image(trained: TrainedNet, image: np.ndarray) -> float:
    """Probability for a single (h, w, c) image: forward on a batch of one."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != tuple(trained.config.input_shape):
        raise ValidationError(
            f"image shape {image.shape} does not match configured "
            f"input {tuple(trained.config.input_shape)}"
        )
    return float(trained.predict_proba(image[None])[0])


def augment_validation(val: Dataset, extra: Dataset) -> Dataset:
    """Concatenate extra images into a validation set, flagging the result.

    The augmented flag rides in provenance and propagates into run reports.
    Duplicate subject ids across the two inputs are kept, with a warning.
    """
    for d, name in ((val, "val"), (extra, "extra")):
        if d.kind != "image":
            raise ValidationError(f"{name} dataset must hold images")
    if len(extra) and len(val) and val.image_shape != extra.image_shape:
        raise ValidationError(
            f"image shapes {val.image_shape} and {extra.image_shape} differ"
        )
    duplicates = sorted(set(val.subject_ids) & set(extra.subject_ids))
    if duplicates:
        warnings.warn(
            f"augmented validation keeps {len(duplicates)} duplicate subject "
            f"id(s): {duplicates[:5]}{'...' if len(duplicates) > 5 else ''}",
            stacklevel=2,
        )
    combined_y = np.concatenate([val.y, extra.y])
    return Dataset(
        kind="image",
        X=np.concatenate([val.X, extra.X]),
        y=combined_y,
        subject_ids=val.subject_ids + extra.subject_ids,
        provenance=Provenance(
            n_total=len(combined_y),
            n_asd=int(np.sum(combined_y == Label.ASD)),
            n_nonasd=int(np.sum(combined_y == Label.NON_ASD)),
            augmented=True,
        ),
    )


# ---------------------------------------------------------------------------
# History export and persistence
# ---------------------------------------------------------------------------


def history_csv(trained: TrainedNet) -> str:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc,lr"]
    lines += [
        f"{h.epoch},{h.train_loss!r},{h.train_acc!r},{h.val_loss!r},"
        f"{h.val_acc!r},{h.lr!r}"
        for h in trained.history
    ]
    return "\n".join(lines) + "\n"


_LAYER_TAGS = {
    Conv: "conv",
    ReLU: "relu",
    MaxPool: "maxpool",
    DenseBlock: "dense_block",
    Transition: "transition",
    GlobalAvgPool: "global_avg_pool",
    FullyConnected: "fully_connected",
    SigmoidHead: "sigmoid_head",
}


def _layer_to_dict(layer) -> dict:
    doc = {"type": _LAYER_TAGS[type(layer)]}
    doc.update(layer.__dict__)
    return doc


def _layer_from_dict(doc: dict):
    kwargs = {k: v for k, v in doc.items() if k != "type"}
    for cls, tag in _LAYER_TAGS.items():
        if tag == doc["type"]:
            return cls(**kwargs)
    raise ValidationError(f"unknown layer type {doc['type']!r}")


def save_net(trained: TrainedNet, directory: Path | str) -> None:
    """manifest.json plus a little-endian float64 parameter blob.

    Each tensor in the blob is prefixed by a uint32 rank and uint32 dims,
    in declaration order.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = trained.config
    manifest = {
        "format_version": NET_FORMAT_VERSION,
        "config": {
            "layers": [_layer_to_dict(layer) for layer in cfg.layers],
            "input_shape": list(cfg.input_shape),
            "init_seed": cfg.init_seed,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "initial_lr": cfg.initial_lr,
            "callback": {
                "lr_decay_factor": cfg.callback.lr_decay_factor,
                "patience": cfg.callback.patience,
                "min_lr": cfg.callback.min_lr,
            },
        },
        "best_epoch": trained.best_epoch,
        "provenance": {
            "n_total": trained.provenance.n_total,
            "n_asd": trained.provenance.n_asd,
            "n_nonasd": trained.provenance.n_nonasd,
            "augmented": trained.provenance.augmented,
        },
        "history": [h.__dict__ for h in trained.history],
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    chunks = []
    for p in trained.params:
        chunks.append(struct.pack("<I", p.ndim))
        chunks.append(struct.pack(f"<{p.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    (directory / "params.bin").write_bytes(b"".join(chunks))


def load_net(directory: Path | str) -> TrainedNet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format_version") != NET_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported network format_version {manifest.get('format_version')!r}"
        )
    cfg_doc = manifest["config"]
    config = NetConfig(
        layers=tuple(_layer_from_dict(d) for d in cfg_doc["layers"]),
        input_shape=tuple(cfg_doc["input_shape"]),
        init_seed=cfg_doc["init_seed"],
        batch_size=cfg_doc["batch_size"],
        epochs=cfg_doc["epochs"],
        initial_lr=cfg_doc["initial_lr"],
        callback=CallbackConfig(**cfg_doc["callback"]),
    )
    blob = (directory / "params.bin").read_bytes()
    params = []
    pos = 0
    while pos < len(blob):
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        count = int(np.prod(dims)) if ndim else 1
        params.append(
            np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
            .astype(np.float64)
            .reshape(dims)
        )
        pos += 8 * count
    prov = manifest["provenance"]
    return TrainedNet(
        config=config,
        params=tuple(params),
        history=tuple(EpochStats(**h) for h in manifest["history"]),
        best_epoch=manifest["best_epoch"],
        provenance=Provenance(
            n_total=prov["n_total"],
            n_asd=prov["n_asd"],
            n_nonasd=prov["n_nonasd"],
            augmented=prov.get("augmented", False),
        ),
    )
