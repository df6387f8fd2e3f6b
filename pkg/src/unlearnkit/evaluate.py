"""Utility, loss-based membership inference forgetting score, and NoMUS."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .data import DatasetBundle
from .errors import InputError
from .model import ModelState, forward, per_sample_loss

EVAL_CHUNK = 512
# losses are heavy-tailed; classifiers see log(loss + LOG_EPS)
LOG_EPS = 1e-8


@dataclass
class EvalReport:
    epoch: int
    utility_pct: float
    forget_pct: float
    nomus_pct: float
    mia_accuracy: float | None = None

    @classmethod
    def from_metrics(cls, epoch: int, utility_pct: float, forget_pct: float, mia_accuracy: float | None = None):
        return cls(epoch, utility_pct, forget_pct, nomus(utility_pct, forget_pct), mia_accuracy)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MIAResult:
    classifier_accuracy: float
    forget_score: float
    fold_accuracies: list[float] = field(default_factory=list)


@torch.no_grad()
def predict_logits(model: ModelState, images: torch.Tensor) -> torch.Tensor:
    chunks = [forward(model, images[i : i + EVAL_CHUNK]) for i in range(0, len(images), EVAL_CHUNK)]
    return torch.cat(chunks) if chunks else torch.empty(0, model.config.num_outputs)


@torch.no_grad()
def sample_losses(model: ModelState, images: torch.Tensor, labels: torch.Tensor) -> np.ndarray:
    logits = predict_logits(model, images)
    return per_sample_loss(logits, labels, model.config.task_kind).double().numpy()


def accuracy_pct(logits: torch.Tensor, labels: torch.Tensor, task_kind: str) -> float:
    """Top-1 accuracy, or mean per-attribute accuracy for multilabel tasks."""
    if len(labels) == 0:
        raise InputError("accuracy of an empty split is undefined")
    if task_kind == "multilabel":
        correct = ((logits > 0).to(labels.dtype) == labels).double().mean()
    else:
        correct = (logits.argmax(dim=1) == labels).double().mean()
    return 100.0 * float(correct)


def utility(model: ModelState, images: torch.Tensor, labels: torch.Tensor) -> float:
    if len(labels) == 0:
        raise InputError("test split is empty")
    return accuracy_pct(predict_logits(model, images), labels, model.config.task_kind)


def nomus(utility_pct: float, forget_pct: float) -> float:
    if not 0.0 <= utility_pct <= 100.0:
        raise InputError(f"utility must lie in [0, 100], got {utility_pct}")
    if not 0.0 <= forget_pct <= 50.0:
        raise InputError(f"forget score must lie in [0, 50], got {forget_pct}")
    return 0.5 * utility_pct + 0.5 * (100.0 - 2.0 * forget_pct)


class ThresholdClassifier:
    """Linear classifier on one scalar, ``predict 1 iff sign * (x - t) <= 0``,
    fitted by exact minimization of training error.

    Cuts are scored by ``max(acc, 1 - acc)``, which does not depend on which
    group is called positive; among equally good cuts the lowest one wins.
    """

    def fit(self, x: np.ndarray, y: np.ndarray) -> "ThresholdClassifier":
        x = np.asarray(x, dtype=np.float64).ravel()
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], np.asarray(y)[order]
        n = len(xs)
        ones = np.concatenate([[0], np.cumsum(ys)])
        zeros = np.concatenate([[0], np.cumsum(1 - ys)])
        # correct count when everything at or below cut i is predicted 1
        below = ones + (zeros[-1] - zeros)
        score = np.maximum(below, n - below)
        valid = np.ones(n + 1, dtype=bool)
        valid[1:n] = xs[1:] != xs[:-1]
        i = int(np.argmax(np.where(valid, score, -1)))
        if i == 0:
            self.threshold_ = -np.inf
        elif i == n:
            self.threshold_ = np.inf
        else:
            self.threshold_ = 0.5 * (xs[i - 1] + xs[i])
        self.low_is_positive_ = bool(below[i] >= n - below[i])
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        low = np.asarray(x, dtype=np.float64).ravel() <= self.threshold_
        return (low if self.low_is_positive_ else ~low).astype(int)


def _make_classifier(kind: str):
    if kind == "threshold":
        return ThresholdClassifier()
    if kind == "logistic":
        return make_pipeline(StandardScaler(), LogisticRegression())
    raise InputError(f"unknown MIA classifier {kind!r}")


def mia_from_losses(
    forget_losses: Sequence[float],
    unseen_losses: Sequence[float],
    folds: int = 5,
    seed: int = 0,
    repeats: int = 5,
    classifier: str = "threshold",
) -> MIAResult:
    """Cross-validated accuracy of a classifier that tells forget losses
    (label 1) from unseen losses (label 0).

    The larger group is downsampled to the smaller one, then stratified
    ``folds``-fold cross-validation is repeated ``repeats`` times and the
    held-out accuracies are averaged. Both groups share one fold pattern, so
    swapping the two groups leaves the result unchanged.
    """
    f = np.asarray(forget_losses, dtype=np.float64)
    u = np.asarray(unseen_losses, dtype=np.float64)
    if len(f) == 0 or len(u) == 0:
        raise InputError("both forget and unseen losses are required")
    if folds < 2 or min(len(f), len(u)) < folds:
        raise InputError(f"each split needs at least {folds} samples for {folds}-fold validation")
    rng = np.random.default_rng(seed)
    n = min(len(f), len(u))
    f = f[np.sort(rng.choice(len(f), n, replace=False))] if len(f) > n else f
    u = u[np.sort(rng.choice(len(u), n, replace=False))] if len(u) > n else u

    x = np.log(np.concatenate([f, u]) + LOG_EPS).reshape(-1, 1)
    y = np.concatenate([np.ones(n, dtype=int), np.zeros(n, dtype=int)])
    accs = []
    for _ in range(repeats):
        pattern = rng.permutation(n) % folds
        fold = np.concatenate([pattern, pattern])
        for k in range(folds):
            train, test = fold != k, fold == k
            clf = _make_classifier(classifier).fit(x[train], y[train])
            accs.append(float((clf.predict(x[test]) == y[test]).mean()))
    acc = float(np.mean(accs))
    return MIAResult(classifier_accuracy=acc, forget_score=abs(acc - 0.5) * 100.0, fold_accuracies=accs)


def mia_forget_score(
    model: ModelState,
    forget: tuple[torch.Tensor, torch.Tensor],
    unseen: tuple[torch.Tensor, torch.Tensor],
    folds: int = 5,
    seed: int = 0,
) -> MIAResult:
    return mia_from_losses(sample_losses(model, *forget), sample_losses(model, *unseen), folds, seed)


def select_best_epoch(reports: Sequence[EvalReport]) -> EvalReport:
    if not reports:
        raise InputError("no reports to select from")
    best = reports[0]
    for r in reports[1:]:
        if r.nomus_pct > best.nomus_pct:
            best = r
    return best


def evaluate(model: ModelState, bundle: DatasetBundle, epoch: int, folds: int = 5, seed: int = 0) -> EvalReport:
    u = utility(model, *bundle.arrays("test"))
    mia = mia_forget_score(model, bundle.arrays("forget"), bundle.arrays("unseen"), folds, seed)
    return EvalReport.from_metrics(epoch, u, mia.forget_score, mia.classifier_accuracy)


def export_losses(path: str | Path, forget_losses: Sequence[float], unseen_losses: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "loss"])
        w.writerows(("forget", repr(float(x))) for x in forget_losses)
        w.writerows(("unseen", repr(float(x))) for x in unseen_losses)
