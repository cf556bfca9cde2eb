"""Downstream evaluation: k-means clustering (ACC / NMI) and classification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

DEFAULT_RESTARTS = 10
DEFAULT_L2 = 1e-4


@dataclass(frozen=True)
class ClusterResult:
    assignments: np.ndarray
    acc: float
    nmi: float


@dataclass(frozen=True)
class ClassifyResult:
    accuracy: float
    micro_f1: float
    macro_f1: float


# -- k-means -----------------------------------------------------------------

def wcss(y: np.ndarray, assignments: np.ndarray) -> float:
    """Within-cluster sum of squared distances to the cluster means."""
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    for c in np.unique(assignments):
        pts = y[assignments == c]
        total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def _sq_dists(y: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (y * y).sum(1)[:, None] - 2.0 * y @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus(y: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    n = y.shape[0]
    centers = np.empty((c, y.shape[1]))
    centers[0] = y[rng.integers(n)]
    closest = _sq_dists(y, centers[:1]).ravel()
    for j in range(1, c):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[j] = y[idx]
        closest = np.minimum(closest, _sq_dists(y, centers[j : j + 1]).ravel())
    return centers


def lloyd(y: np.ndarray, c: int, rng: np.random.Generator, max_iter: int = 300, tol: float = 1e-10):
    """One k-means++ seeded Lloyd run; returns ``(assignments, wcss, history)``.

    The objective is checked after every assignment and update step and
    must never increase.
    """
    centers = _plus_plus(y, c, rng)
    history: list[float] = []
    labels = None
    for _ in range(max_iter):
        d = _sq_dists(y, centers)
        new_labels = d.argmin(axis=1)
        # an emptied cluster takes the point farthest from its center
        counts = np.bincount(new_labels, minlength=c)
        for empty in np.flatnonzero(counts == 0):
            far = int(d[np.arange(len(y)), new_labels].argmax())
            new_labels[far] = empty
            d[far] = 0.0
            counts = np.bincount(new_labels, minlength=c)
        for j in range(c):
            centers[j] = y[new_labels == j].mean(axis=0)
        obj = wcss(y, new_labels)
        if history and obj > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means objective increased: {history[-1]!r} -> {obj!r}")
        history.append(obj)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        if len(history) > 1 and history[-2] - obj <= tol * max(history[-2], 1e-300):
            labels = new_labels
            break
        labels = new_labels
    return labels, history[-1], history


def kmeans(y, c: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> np.ndarray:
    """Best-of-``restarts`` k-means assignments (lowest WCSS)."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if c < 1 or c > n:
        raise ValueError(f"cluster count c = {c} must lie in [1, n = {n}]")
    if c == n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    best, best_obj = None, np.inf
    for _ in range(max(restarts, 1)):
        labels, obj, _ = lloyd(y, c, rng)
        if obj < best_obj:
            best, best_obj = labels, obj
    return best


# -- clustering metrics --------------------------------------------------------

def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    m = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(m, (ai, bi), 1)
    return m


def cluster_accuracy(assignments, labels) -> float:
    """Fraction matched under the best one-to-one cluster/label mapping."""
    m = _contingency(np.asarray(assignments), np.asarray(labels))
    rows, cols = linear_sum_assignment(-m)
    return float(m[rows, cols].sum()) / float(m.sum())


def normalized_mutual_info(a, b) -> float:
    """``I(a; b) / sqrt(H(a) H(b))`` in nats."""
    m = _contingency(np.asarray(a), np.asarray(b)).astype(np.float64)
    n = m.sum()
    pa = m.sum(1) / n
    pb = m.sum(0) / n
    ha = -np.sum(pa * np.log(pa))
    hb = -np.sum(pb * np.log(pb))
    if ha == 0.0 or hb == 0.0:
        return 1.0 if ha == hb else 0.0
    nz = m > 0
    pab = m[nz] / n
    mi = np.sum(pab * np.log(pab / np.outer(pa, pb)[nz]))
    return float(np.clip(mi / np.sqrt(ha * hb), 0.0, 1.0))


def clustering_metrics(assignments, labels) -> tuple[float, float]:
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    if assignments.size == 0:
        raise ValueError("empty input")
    if assignments.shape != labels.shape:
        raise ValueError("assignments and labels differ in length")
    return cluster_accuracy(assignments, labels), normalized_mutual_info(assignments, labels)


def evaluate_clustering(y, labels, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> ClusterResult:
    labels = np.asarray(labels)
    c = np.unique(labels).size
    assignments = kmeans(y, c, restarts, seed)
    acc, nmi = clustering_metrics(assignments, labels)
    return ClusterResult(assignments, acc, nmi)


# -- logistic regression ------------------------------------------------------

def softmax_loss_grad(w: np.ndarray, x: np.ndarray, onehot: np.ndarray, l2: float):
    """Mean cross-entropy plus ``l2/2 ||W||^2`` (bias excluded) and its gradient.

    ``w`` has shape ``(f + 1, C)``; the last row is the bias.
    """
    n = x.shape[0]
    logits = x @ w[:-1] + w[-1]
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - (logits * onehot).sum(1))) + 0.5 * l2 * float((w[:-1] ** 2).sum())
    p = np.exp(logits - lse[:, None])
    r = (p - onehot) / n
    grad = np.empty_like(w)
    grad[:-1] = x.T @ r + l2 * w[:-1]
    grad[-1] = r.sum(0)
    return loss, grad


def fit_logreg(x, y, n_classes: int, l2: float = DEFAULT_L2, tol: float = 1e-7, max_iter: int = 2000):
    """Full-batch gradient descent with Armijo backtracking."""
    x = np.asarray(x, dtype=np.float64)
    onehot = np.eye(n_classes)[np.asarray(y)]
    w = np.zeros((x.shape[1] + 1, n_classes))
    loss, grad = softmax_loss_grad(w, x, onehot, l2)
    step = 1.0
    for _ in range(max_iter):
        gnorm2 = float((grad * grad).sum())
        if np.sqrt(gnorm2) < tol:
            break
        while True:
            trial = w - step * grad
            t_loss, t_grad = softmax_loss_grad(trial, x, onehot, l2)
            if t_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        w, loss, grad = trial, t_loss, t_grad
        step *= 2.0
    return w


def predict_logreg(w: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.argmax(x @ w[:-1] + w[-1], axis=1)


def stratified_folds(labels, folds: int, seed: int = 0) -> np.ndarray:
    """Fold index per sample; each class is dealt round-robin after shuffling."""
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < folds:
        bad = classes[counts.argmin()]
        raise ValueError(f"stratification error: class {bad} has {counts.min()} samples, fewer than {folds} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        fold_of[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return fold_of


def f1_scores(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> tuple[float, float]:
    """``(micro_f1, macro_f1)`` for single-label multiclass predictions."""
    tp = np.bincount(truth[pred == truth], minlength=n_classes).astype(np.float64)
    fp = np.bincount(pred, minlength=n_classes) - tp
    fn = np.bincount(truth, minlength=n_classes) - tp
    micro = 2 * tp.sum() / (2 * tp.sum() + fp.sum() + fn.sum())
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    present = (tp + fn) > 0
    return float(micro), float(per_class[present].mean())


def train_eval_classifier(y, labels, folds: int = 10, seed: int = 0, l2: float = DEFAULT_L2) -> ClassifyResult:
    """Stratified k-fold logistic regression; metrics averaged over folds.

    Features are standardized with the training fold's mean and deviation.
    """
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes[0] != 0 or classes[-1] != classes.size - 1:
        raise ValueError("labels must cover every class 0..C-1")
    n_classes = classes.size
    fold_of = stratified_folds(labels, folds, seed)
    accs, micros, macros = [], [], []
    for f in range(folds):
        train, test = fold_of != f, fold_of == f
        if np.unique(labels[train]).size != n_classes:
            raise ValueError(f"stratification error: a class is missing from training fold {f}")
        mu = y[train].mean(0)
        sd = y[train].std(0)
        sd[sd == 0] = 1.0
        w = fit_logreg((y[train] - mu) / sd, labels[train], n_classes, l2)
        pred = predict_logreg(w, (y[test] - mu) / sd)
        acc = float(np.mean(pred == labels[test]))
        micro, macro = f1_scores(pred, labels[test], n_classes)
        if not np.isclose(micro, acc, rtol=0, atol=1e-12):
            raise AssertionError(f"micro-F1 {micro} differs from accuracy {acc}")
        accs.append(acc)
        micros.append(micro)
        macros.append(macro)
    return ClassifyResult(float(np.mean(accs)), float(np.mean(micros)), float(np.mean(macros)))
