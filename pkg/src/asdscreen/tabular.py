"""Categorical-score classifiers: logistic regression and a linear SVM.

Both are trained from scratch with deterministic full-batch (sub)gradient
descent from zero-initialized parameters, so identical inputs always yield
bit-identical models.  The SVM follows the Pegasos schedule (step 1/(lambda*t))
and gains a probability output through sigmoid calibration of its margins,
making its scores fusable with the image module's.

Estimators follow the scikit-learn protocol (fit / predict / predict_proba /
get_params); ``predict_proba`` returns the usual (n, 2) column layout with
the ASD probability in column 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .datamodel import Dataset, Label, Provenance, split_dataset
from .errors import DivergenceError, TrainingError, ValidationError

#: Abort training when the objective exceeds this or stops being finite.
DIVERGENCE_LIMIT = 1e12

#: Sigmoid argument clamp: keeps probabilities strictly inside (0, 1) in
#: float64 while leaving |z| < 36 untouched.
_SIGMOID_CLAMP = 36.0

_CALIBRATION_LR = 0.5
_CALIBRATION_EPOCHS = 5000

MODEL_FORMAT_VERSION = 1


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_SIGMOID_CLAMP, _SIGMOID_CLAMP)))


def _validate_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ValidationError(f"X must be 2-D, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise ValidationError(f"y shape {y.shape} does not match X rows {len(X)}")
    if not np.isfinite(X).all():
        raise ValidationError("X contains non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 (non-ASD) or 1 (ASD)")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set contains a single class")
    return X, y.astype(np.float64)


def _provenance(y: np.ndarray) -> Provenance:
    return Provenance(
        n_total=int(len(y)),
        n_asd=int(np.sum(y == 1)),
        n_nonasd=int(np.sum(y == 0)),
    )


# ---------------------------------------------------------------------------
# Objectives and gradients (shared by training and the gradient-check tests)
# ---------------------------------------------------------------------------


def logreg_loss(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """L2-regularized mean binary cross-entropy, computed stably."""
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))


def logreg_grad(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float
) -> tuple[np.ndarray, float]:
    residual = sigmoid(X @ w + b) - y
    grad_w = X.T @ residual / len(y) + l2 * w
    grad_b = float(np.mean(residual))
    return grad_w, grad_b


def svm_objective(
    w: np.ndarray, b: float, X: np.ndarray, y_pm: np.ndarray, lam: float
) -> float:
    """lambda/2 * ||w||^2 + mean hinge loss; labels are +/-1."""
    margins = y_pm * (X @ w + b)
    return float(0.5 * lam * np.dot(w, w) + np.mean(np.maximum(0.0, 1.0 - margins)))


def svm_subgrad(
    w: np.ndarray, b: float, X: np.ndarray, y_pm: np.ndarray, lam: float
) -> tuple[np.ndarray, float]:
    margins = y_pm * (X @ w + b)
    violating = margins < 1.0
    grad_w = lam * w - X[violating].T @ y_pm[violating] / len(y_pm)
    grad_b = -float(np.sum(y_pm[violating])) / len(y_pm)
    return grad_w, grad_b


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


class _LinearClassifierBase(BaseEstimator, ClassifierMixin):
    """Shared prediction surface for the two linear models."""

    def _check_fitted(self):
        if getattr(self, "weights_", None) is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.weights_):
            raise ValidationError(
                f"expected (n, {len(self.weights_)}) inputs, got shape {X.shape}"
            )
        return X @ self.weights_ + self.bias_

    def _asd_probability(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, X) -> np.ndarray:
        p = self._asd_probability(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        # probability above 1/2 <=> ASD; an exact 1/2 stays non-ASD here,
        # fusion applies its own (>=) rule at the configured threshold
        return (self._asd_probability(X) > 0.5).astype(np.int8)

    @property
    def classes_(self) -> np.ndarray:
        self._check_fitted()
        return np.array([0, 1], dtype=np.int8)


class LogisticRegressionGD(_LinearClassifierBase):
    """Binary logistic regression via full-batch gradient descent.

    Parameters
    ----------
    learning_rate : step size of every descent iteration.
    epochs : number of full-batch iterations.
    l2 : L2 penalty on the weights (never the bias).
    """

    def __init__(self, learning_rate: float = 0.1, epochs: int = 500, l2: float = 0.0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2

    def fit(self, X, y):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.l2 < 0:
            raise ValidationError("l2 must be non-negative")
        X, y = _validate_xy(X, y)
        w = np.zeros(X.shape[1])
        b = 0.0
        losses = []
        for t in range(1, self.epochs + 1):
            losses.append(logreg_loss(w, b, X, y, self.l2))
            if not np.isfinite(losses[-1]) or losses[-1] > DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"loss {losses[-1]} exceeded {DIVERGENCE_LIMIT:g}", iteration=t
                )
            grad_w, grad_b = logreg_grad(w, b, X, y, self.l2)
            w = w - self.learning_rate * grad_w
            b = b - self.learning_rate * grad_b
        losses.append(logreg_loss(w, b, X, y, self.l2))
        if not np.isfinite(losses[-1]) or losses[-1] > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"loss {losses[-1]} exceeded {DIVERGENCE_LIMIT:g}",
                iteration=self.epochs,
            )
        self.weights_ = w
        self.bias_ = b
        self.loss_history_ = tuple(losses)
        self.provenance_ = _provenance(y)
        self.n_features_in_ = X.shape[1]
        return self

    def _asd_probability(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


class PegasosSVM(_LinearClassifierBase):
    """Linear SVM trained by deterministic full-batch subgradient descent.

    The step size follows the Pegasos schedule 1/(svm_lambda * t).  After
    training, a sigmoid is fitted over the training margins
    (``calibrate``) so the model can emit probabilities.

    Parameters
    ----------
    svm_lambda : hinge regularization strength; also sets the step size.
    epochs : number of subgradient iterations.
    """

    def __init__(self, svm_lambda: float = 0.01, epochs: int = 1000):
        self.svm_lambda = svm_lambda
        self.epochs = epochs

    def fit(self, X, y):
        if self.svm_lambda <= 0:
            raise ValidationError("svm_lambda must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        X, y = _validate_xy(X, y)
        y_pm = 2.0 * y - 1.0
        w = np.zeros(X.shape[1])
        b = 0.0
        objectives = []
        for t in range(1, self.epochs + 1):
            objectives.append(svm_objective(w, b, X, y_pm, self.svm_lambda))
            if not np.isfinite(objectives[-1]) or objectives[-1] > DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"objective {objectives[-1]} exceeded {DIVERGENCE_LIMIT:g}",
                    iteration=t,
                )
            grad_w, grad_b = svm_subgrad(w, b, X, y_pm, self.svm_lambda)
            step = 1.0 / (self.svm_lambda * t)
            w = w - step * grad_w
            b = b - step * grad_b
        objectives.append(svm_objective(w, b, X, y_pm, self.svm_lambda))
        self.weights_ = w
        self.bias_ = b
        self.objective_history_ = tuple(objectives)
        self.calibration_ = calibrate(X @ w + b, y)
        self.provenance_ = _provenance(y)
        self.n_features_in_ = X.shape[1]
        return self

    def _asd_probability(self, X) -> np.ndarray:
        a, b_cal = self.calibration_
        return sigmoid(a * self.decision_function(X) + b_cal)

    def hinge_loss(self, X, y) -> float:
        """Mean hinge loss of the fitted model (regularizer excluded)."""
        self._check_fitted()
        margins = (2.0 * np.asarray(y, dtype=np.float64) - 1.0) * self.decision_function(X)
        return float(np.mean(np.maximum(0.0, 1.0 - margins)))


def calibrate(margins, labels) -> tuple[float, float]:
    """Fit sigmoid(a * margin + b) to labels by 1-D logistic regression."""
    margins = np.asarray(margins, dtype=np.float64).reshape(-1, 1)
    labels = np.asarray(labels)
    if margins.shape[0] != labels.shape[0]:
        raise ValidationError("margins and labels lengths disagree")
    model = LogisticRegressionGD(
        learning_rate=_CALIBRATION_LR, epochs=_CALIBRATION_EPOCHS, l2=0.0
    )
    model.fit(margins, labels)
    return float(model.weights_[0]), float(model.bias_)


# ---------------------------------------------------------------------------
# Dataset-level training and persistence
# ---------------------------------------------------------------------------


def _tabular_xy(train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    if train.kind != "tabular":
        raise ValidationError("expected a tabular dataset")
    if len(train) == 0:
        raise TrainingError("training set is empty")
    if np.any(train.y == Label.UNLABELED):
        raise TrainingError("training set contains unlabeled samples")
    return train.X, train.y


def train_logreg(
    train: Dataset, learning_rate: float = 0.1, epochs: int = 500, l2: float = 0.0
) -> LogisticRegressionGD:
    X, y = _tabular_xy(train)
    return LogisticRegressionGD(learning_rate, epochs, l2).fit(X, y)


def train_linear_svm(
    train: Dataset, svm_lambda: float = 0.01, epochs: int = 1000
) -> PegasosSVM:
    X, y = _tabular_xy(train)
    return PegasosSVM(svm_lambda, epochs).fit(X, y)


def model_to_dict(model: _LinearClassifierBase) -> dict:
    model._check_fitted()
    if isinstance(model, LogisticRegressionGD):
        kind, calibration = "logreg", None
    elif isinstance(model, PegasosSVM):
        kind = "linear_svm"
        calibration = {"a": model.calibration_[0], "b": model.calibration_[1]}
    else:
        raise ValidationError(f"unsupported model type {type(model).__name__}")
    p = model.provenance_
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": kind,
        "weights": [float(v) for v in model.weights_],
        "bias": float(model.bias_),
        "calibration": calibration,
        "provenance": {"n_total": p.n_total, "n_asd": p.n_asd, "n_nonasd": p.n_nonasd},
    }


def model_from_dict(doc: dict) -> _LinearClassifierBase:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported model format_version {doc.get('format_version')!r}"
        )
    kind = doc["kind"]
    if kind == "logreg":
        model: _LinearClassifierBase = LogisticRegressionGD()
        if doc.get("calibration") is not None:
            raise ValidationError("logreg models carry no calibration pair")
    elif kind == "linear_svm":
        model = PegasosSVM()
        cal = doc.get("calibration")
        if cal is None:
            raise ValidationError("linear_svm models require a calibration pair")
        model.calibration_ = (float(cal["a"]), float(cal["b"]))
    else:
        raise ValidationError(f"unknown model kind {kind!r}")
    model.weights_ = np.asarray(doc["weights"], dtype=np.float64)
    model.bias_ = float(doc["bias"])
    prov = doc["provenance"]
    model.provenance_ = Provenance(
        n_total=prov["n_total"], n_asd=prov["n_asd"], n_nonasd=prov["n_nonasd"]
    )
    model.n_features_in_ = len(model.weights_)
    return model


def save_model(model: _LinearClassifierBase, path: Path | str) -> None:
    Path(path).write_text(
        json.dumps(model_to_dict(model), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def load_model(path: Path | str) -> _LinearClassifierBase:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Learning-rate sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    grid: tuple[float, ...]
    accuracies: tuple[float, ...]
    best_rate: float

    def __post_init__(self):
        if self.best_rate not in self.grid:
            raise ValidationError("best_rate must be a grid member")
        best_idx = self.grid.index(self.best_rate)
        top = max(self.accuracies)
        if self.accuracies[best_idx] != top:
            raise ValidationError("best_rate must attain the maximum accuracy")
        if self.best_rate != min(
            r for r, a in zip(self.grid, self.accuracies) if a == top
        ):
            raise ValidationError("ties must resolve to the smallest rate")


def lr_sweep(
    dataset: Dataset,
    grid,
    kind: str = "logreg",
    split_seed: int = 0,
    split_ratio: float = 0.8,
    epochs: int = 300,
    l2: float = 0.0,
) -> SweepResult:
    """Accuracy-vs-rate curve on one fixed train/test split.

    Every grid point trains on the identical split so the curve isolates the
    rate.  For ``kind="logreg"`` the grid sets the descent step size; for
    ``kind="linear_svm"`` it sets the regularization strength, which is that
    model's step-size-controlling knob.
    """
    grid = tuple(float(r) for r in grid)
    if not grid:
        raise ValidationError("rate grid must be non-empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("rate grid must be strictly increasing")
    if kind not in ("logreg", "linear_svm"):
        raise ValidationError(f"unknown model kind {kind!r}")

    pair = split_dataset(dataset, split_ratio, split_seed)
    X_train, y_train = _tabular_xy(pair.train)
    X_test, y_test = pair.test.X, pair.test.y

    accuracies = []
    for rate in grid:
        if kind == "logreg":
            model: _LinearClassifierBase = LogisticRegressionGD(
                learning_rate=rate, epochs=epochs, l2=l2
            )
        else:
            model = PegasosSVM(svm_lambda=rate, epochs=epochs)
        try:
            model.fit(X_train, y_train)
        except TrainingError as exc:
            raise type(exc)(f"rate {rate:g}: {exc}") from exc
        accuracies.append(float(np.mean(model.predict(X_test) == y_test)))

    best = max(accuracies)
    best_rate = next(r for r, a in zip(grid, accuracies) if a == best)
    return SweepResult(grid=grid, accuracies=tuple(accuracies), best_rate=best_rate)


def sweep_csv(result: SweepResult) -> str:
    lines = ["rate,accuracy"]
    lines += [f"{r!r},{a!r}" for r, a in zip(result.grid, result.accuracies)]
    return "\n".join(lines) + "\n"
