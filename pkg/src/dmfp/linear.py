"""Calibrated linear base classifiers and logistic competence models.

Base classifiers are linear SVMs trained by mini-batch subgradient descent on
the L2-regularized hinge loss, calibrated with Platt scaling over stratified
cross-validation folds. Probabilities from the folds are averaged.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from dmfp.data import Modality, PrivacyLabel
from dmfp.errors import TrainingError


class LossKind(enum.Enum):
    HINGE = "hinge"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.1
    l2_penalty: float = 1e-4
    seed: int = 0
    folds: int = 3
    batch_size: int = 32
    balanced: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError("epochs must be positive")
        # zero is allowed: it leaves the model at its all-zero initialization
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be nonnegative")
        if self.l2_penalty < 0:
            raise TrainingError("l2_penalty must be nonnegative")
        if self.folds < 1 or self.batch_size < 1:
            raise TrainingError("folds and batch_size must be positive")


@dataclass(frozen=True)
class ProbabilityPair:
    private: float
    public: float

    def __post_init__(self):
        if not (0.0 <= self.private <= 1.0 and 0.0 <= self.public <= 1.0):
            raise ValueError(f"probabilities out of range: {self.private}, {self.public}")
        if abs(self.private + self.public - 1.0) > 1e-9:
            raise ValueError("probability pair must sum to 1")

    @classmethod
    def from_private(cls, p: float) -> "ProbabilityPair":
        p = float(p)
        return cls(p, 1.0 - p)

    @property
    def max(self) -> float:
        return max(self.private, self.public)

    def label(self, tie_to_private: bool = False) -> PrivacyLabel:
        """Argmax label; an exact 0.5 goes to public unless ``tie_to_private``."""
        if self.private > self.public or (tie_to_private and self.private == self.public):
            return PrivacyLabel.PRIVATE
        return PrivacyLabel.PUBLIC

    def as_tuple(self) -> tuple[float, float]:
        return (self.private, self.public)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    loss_kind: LossKind

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or not math.isfinite(self.bias):
            raise TrainingError("model parameters must be a finite vector and scalar")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return len(self.weights)

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise TrainingError(f"feature dimension {X.shape[-1]} does not match model dimension {self.dim}")
        return X @ self.weights + self.bias

    def proba(self, X) -> np.ndarray:
        """Positive-class probability; only meaningful for logistic models."""
        return _sigmoid(self.decision(X))

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias, "loss_kind": self.loss_kind.value}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(np.array(d["weights"], dtype=np.float64), d["bias"], LossKind(d["loss_kind"]))


@dataclass(frozen=True)
class ConstantModel:
    """Stand-in for a model whose training labels were all identical."""

    rate: float
    dim: int

    def proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise TrainingError(f"feature dimension {X.shape[-1]} does not match model dimension {self.dim}")
        return np.full(X.shape[:-1], self.rate)

    def to_dict(self) -> dict:
        return {"constant": self.rate, "dim": self.dim}


def model_from_dict(d: dict):
    if "constant" in d:
        return ConstantModel(float(d["constant"]), int(d["dim"]))
    return LinearModel.from_dict(d)


@dataclass(frozen=True)
class PlattSigmoid:
    """p(private | score) = 1 / (1 + exp(a * score + b))."""

    a: float
    b: float

    def __call__(self, scores) -> np.ndarray:
        return _sigmoid(-(self.a * np.asarray(scores, dtype=np.float64) + self.b))


def _label_bits(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, PrivacyLabel):
            out.append(lab.bit)
        else:
            out.append(1 if int(lab) else 0)
    return np.array(out, dtype=np.int64)


def _platt_objective(a, b, s, t):
    f = a * s + b
    return float(np.sum(np.where(f >= 0, t * f + np.log1p(np.exp(-np.abs(f))),
                                 (t - 1) * f + np.log1p(np.exp(-np.abs(f))))))


def platt_fit(scores, labels, max_iter: int = 100) -> PlattSigmoid:
    """Fit a Platt sigmoid with Newton's method and backtracking line search.

    Targets are smoothed to (N+ + 1)/(N+ + 2) and 1/(N- + 2). The slope is
    constrained to a <= 0 so a higher score never lowers the private
    probability; if the unconstrained optimum has a > 0 the constrained
    optimum is the flat prior.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _label_bits(labels)
    if len(s) != len(y):
        raise TrainingError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("Platt scaling needs both classes")
    hi, lo = (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0)
    t = np.where(y == 1, hi, lo)
    prior_b = math.log((n_neg + 1.0) / (n_pos + 1.0))
    flat = PlattSigmoid(0.0, math.log((1.0 - t.mean()) / t.mean()))
    if np.ptp(s) == 0:
        return flat

    a, b = 0.0, prior_b
    fval = _platt_objective(a, b, s, t)
    sigma = 1e-12
    for _ in range(max_iter):
        f = a * s + b
        p = _sigmoid(-f)  # P(private)
        d2 = p * (1.0 - p)
        h11 = sigma + np.dot(s * s, d2)
        h22 = sigma + d2.sum()
        h21 = np.dot(s, d2)
        d1 = t - p
        g1 = np.dot(s, d1)
        g2 = d1.sum()
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = _platt_objective(na, nb, s, t)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            break
    if a > 0:
        return flat
    return PlattSigmoid(float(a), float(b))


@dataclass(frozen=True)
class CalibratedClassifier:
    folds: tuple[tuple[LinearModel, PlattSigmoid], ...]
    modality: Modality | None = None

    def __post_init__(self):
        if not self.folds:
            raise TrainingError("a calibrated classifier needs at least one fold")
        object.__setattr__(self, "folds", tuple(tuple(f) for f in self.folds))

    @property
    def dim(self) -> int:
        return self.folds[0][0].dim

    def proba_private(self, X) -> np.ndarray:
        """Mean over folds of each fold's calibrated private probability."""
        X = np.asarray(X, dtype=np.float64)
        probs = [sig(model.decision(X)) for model, sig in self.folds]
        return np.mean(probs, axis=0)

    def to_dict(self) -> dict:
        return {
            "modality": None if self.modality is None else self.modality.value,
            "folds": [{"model": m.to_dict(), "sigmoid": {"a": s.a, "b": s.b}} for m, s in self.folds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedClassifier":
        folds = tuple((LinearModel.from_dict(f["model"]), PlattSigmoid(**f["sigmoid"])) for f in d["folds"])
        mod = None if d.get("modality") is None else Modality(d["modality"])
        return cls(folds, mod)


def predict_proba(clf: CalibratedClassifier, x) -> ProbabilityPair:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != clf.dim:
        raise TrainingError(f"input has dimension {x.shape}, classifier expects {clf.dim}")
    return ProbabilityPair.from_private(float(clf.proba_private(x[None, :])[0]))


# -- optimizers -------------------------------------------------------------

def _sgd(X, y01, cfg: TrainConfig, loss: LossKind) -> LinearModel:
    """Mini-batch subgradient descent from zero.

    The step at update t is lr / (R * (1 + lr * lambda * t)) where R is the
    root of one plus the mean squared row norm, so long binary competence
    vectors do not blow up the first updates.
    """
    n, d = X.shape
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(d)
    b = 0.0
    if cfg.learning_rate == 0:
        return LinearModel(w, b, loss)
    ypm = 2.0 * y01 - 1.0
    if cfg.balanced:
        n_pos = max(int(y01.sum()), 1)
        n_neg = max(n - int(y01.sum()), 1)
        sw = np.where(y01 == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))
    else:
        sw = np.ones(n)
    radius = math.sqrt(1.0 + float(np.mean(np.einsum("ij,ij->i", X, X))))
    lam = cfg.l2_penalty
    bs = min(cfg.batch_size, n)
    t = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            xb, wb = X[idx], sw[idx]
            z = xb @ w + b
            if loss is LossKind.HINGE:
                active = (ypm[idx] * z) < 1.0
                coef = -(ypm[idx] * wb) * active
            else:
                coef = (_sigmoid(z) - y01[idx]) * wb
            gw = lam * w + coef @ xb / len(idx)
            gb = coef.mean()
            eta = cfg.learning_rate / (radius * (1.0 + cfg.learning_rate * lam * t))
            w = w - eta * gw
            b = b - eta * gb
            t += 1
    return LinearModel(w, b, loss)


def _check_training_data(X, y, min_per_class: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise TrainingError("features must be a 2-D matrix")
    if X.shape[1] == 0:
        raise TrainingError("features have zero dimensions")
    if len(X) != len(y):
        raise TrainingError(f"{len(X)} feature rows but {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise TrainingError("features contain non-finite values")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("training labels contain a single class")
    if min(n_pos, n_neg) < min_per_class:
        raise TrainingError(f"need at least {min_per_class} examples of each class, "
                            f"got {n_pos} private and {n_neg} public")
    return X, y


def stratified_folds(y01: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold index per example; each class is dealt round-robin after a shuffle."""
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y01), dtype=np.int64)
    for cls in (1, 0):
        idx = np.flatnonzero(y01 == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


def train_linear_svm(X, labels, cfg: TrainConfig) -> LinearModel:
    y = _label_bits(labels)
    X, y = _check_training_data(X, y, 1)
    return _sgd(X, y, cfg, LossKind.HINGE)


def train_calibrated(features, labels, cfg: TrainConfig = TrainConfig(),
                     modality: Modality | None = None) -> CalibratedClassifier:
    """Train ``cfg.folds`` SVMs, each calibrated on its held-out fold."""
    y = _label_bits(labels)
    X, y = _check_training_data(features, y, cfg.folds)
    if cfg.folds == 1:
        model = _sgd(X, y, cfg, LossKind.HINGE)
        return CalibratedClassifier(((model, platt_fit(model.decision(X), y)),), modality)
    fold = stratified_folds(y, cfg.folds, cfg.seed)
    parts = []
    for k in range(cfg.folds):
        held = fold == k
        if len(np.unique(y[held])) < 2 or len(np.unique(y[~held])) < 2:
            raise TrainingError(f"fold {k} contains a single class; use stratified folding "
                                f"with at least {cfg.folds} examples per class")
        fold_cfg = TrainConfig(**{**asdict(cfg), "seed": cfg.seed + k})
        model = _sgd(X[~held], y[~held], fold_cfg, LossKind.HINGE)
        parts.append((model, platt_fit(model.decision(X[held]), y[held])))
    return CalibratedClassifier(tuple(parts), modality)


def train_logistic(features, labels, cfg: TrainConfig = TrainConfig()) -> LinearModel:
    y = _label_bits(labels)
    X, y = _check_training_data(features, y, 1)
    return _sgd(X, y, cfg, LossKind.LOGISTIC)


@dataclass(frozen=True)
class ConstantClassifier:
    """Predicts a fixed private probability; used for single-class partitions."""

    rate: float
    dim: int
    modality: Modality | None = None

    def proba_private(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.full(X.shape[0], self.rate)

    def to_dict(self) -> dict:
        return {"constant": self.rate, "dim": self.dim,
                "modality": None if self.modality is None else self.modality.value}


def classifier_from_dict(d: dict):
    if "constant" in d:
        mod = None if d.get("modality") is None else Modality(d["modality"])
        return ConstantClassifier(float(d["constant"]), int(d["dim"]), mod)
    return CalibratedClassifier.from_dict(d)
