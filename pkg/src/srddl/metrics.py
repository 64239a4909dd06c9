"""Evaluation metrics and the two comparison baselines.

The mutual-information estimator is a fixed-grid histogram (16 equal-width
bins per axis over each variable's observed range, base-2 logarithm). Its
absolute values depend on that binning choice and are not comparable across
estimators; report writers must say so in their output headers.

Both baselines consume the same prediction-head implementation as the hybrid
model: there is exactly one forward/backward code path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .data import Cohort
from .factorization import Hyperparameters
from .network import AdamState, NetworkWeights, adam_step, backward, forward, masked_mse
from .training import ModelState, fit

logger = logging.getLogger("srddl.metrics")

MI_BINS = 16
MI_NOTE = (
    "MI: 2-D histogram estimator, 16 equal-width bins per axis, base-2 log; "
    "absolute values are estimator-specific and not comparable to other "
    "published numbers"
)
DTI_WEIGHT_NOTE = (
    "PCA baseline weights each correlation feature by the magnitude of the "
    "corresponding off-diagonal Laplacian entry (sign discarded)"
)


def median_absolute_error(pred, truth) -> float:
    """Median of |pred - truth|; an even count averages the two middle values."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {pred.shape} and {truth.shape}")
    if pred.size == 0:
        raise ValueError("cannot take the median of zero residuals")
    return float(np.median(np.abs(pred - truth)))


def mutual_information(pred, truth, bins: int = MI_BINS) -> float:
    """Histogram mutual information in bits.

    Equal-width binning over each variable's own range; empty cells
    contribute zero. Constant inputs occupy a single bin and give MI = 0.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {pred.shape} and {truth.shape}")
    if pred.size < 2:
        raise ValueError("mutual information needs at least 2 samples")
    joint, _, _ = np.histogram2d(pred, truth, bins=bins)
    n = joint.sum()
    p_joint = joint / n
    p_row = p_joint.sum(axis=1, keepdims=True)
    p_col = p_joint.sum(axis=0, keepdims=True)
    mask = p_joint > 0
    ratio = np.ones_like(p_joint)
    ratio[mask] = p_joint[mask] / (p_row @ p_col)[mask]
    return float(np.sum(p_joint[mask] * np.log2(ratio[mask])))


# ---------------------------------------------------------------------------
# baseline: structure-weighted correlation features + PCA + the shared head
# ---------------------------------------------------------------------------

@dataclass
class PcaLstmModel:
    """PCA projection of structure-weighted correlation features feeding the
    shared sequence head."""

    mean: np.ndarray          # (F,)
    components: np.ndarray    # (K, F), orthonormal rows
    weights: NetworkWeights
    score_names: tuple[str, ...]
    history: list
    p: int
    m: int


def _upper_indices(p):
    return np.triu_indices(p, k=1)


def weighted_feature_windows(subject) -> np.ndarray:
    """(T, P(P-1)/2) upper-triangle correlations weighted by |Laplacian|."""
    iu = _upper_indices(subject.connectome.p)
    lap_weight = np.abs(subject.structure.laplacian[iu])
    return subject.connectome.gammas[:, iu[0], iu[1]] * lap_weight


def fit_pca(feature_rows: np.ndarray, k: int):
    """Mean + top-k orthonormal components of stacked feature rows."""
    mean = feature_rows.mean(axis=0)
    centered = feature_rows - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    available = vt.shape[0]
    if k > available:
        raise ValueError(f"asked for {k} components, only {available} available")
    return mean, vt[:k]


def pca_project(features, mean, components):
    return (features - mean) @ components.T


def baseline_pca_lstm(cohort: Cohort, hyper: Hyperparameters) -> PcaLstmModel:
    """Train the PCA + sequence-head baseline on a training cohort.

    The PCA basis is fit on the training windows only; the head is the same
    implementation the hybrid model trains, run for the same total number of
    epochs at the same schedule.
    """
    from .training import _resolve_structures

    subjects = sorted(cohort.subjects, key=lambda s: s.subject_id)
    subjects, _ = _resolve_structures(subjects)
    stacked = np.vstack([weighted_feature_windows(s) for s in subjects])
    mean, components = fit_pca(stacked, hyper.k)

    rng = np.random.default_rng(hyper.seed)
    weights = NetworkWeights.initialize(hyper.k, cohort.m, hyper.hidden_width, rng)
    adam = AdamState(lr=hyper.lr_network, decay=hyper.lr_decay,
                     decay_every=hyper.lr_decay_every)
    sequences = {
        s.subject_id: pca_project(weighted_feature_windows(s), mean, components)
        for s in subjects
    }
    n_epochs = hyper.epochs_outer * hyper.epochs_network
    history = []
    for epoch in range(n_epochs):
        order = rng.permutation(len(subjects))
        total = 0.0
        for j in order:
            subject = subjects[j]
            seq = sequences[subject.subject_id]
            trace = forward(seq, weights)
            total += masked_mse(trace, subject.severity)
            grads, _ = backward(trace, seq, weights, subject.severity)
            adam_step(weights.arrays, grads, adam, epoch=epoch)
        history.append({"iteration": epoch, "network_loss": total})
    return PcaLstmModel(mean=mean, components=components, weights=weights,
                        score_names=cohort.score_names, history=history,
                        p=cohort.p, m=cohort.m)


def baseline_pca_predict(subject, model: PcaLstmModel):
    """(severity estimate, attention weights) from the PCA baseline."""
    from .data import SeverityVector

    features = weighted_feature_windows(subject)
    seq = pca_project(features, model.mean, model.components)
    trace = forward(seq, model.weights)
    estimate = SeverityVector(
        scores=trace.prediction.copy(),
        observed=np.ones(model.m, dtype=bool),
        score_names=model.score_names,
    )
    return estimate, trace.attention


# ---------------------------------------------------------------------------
# baseline: factorization without the prediction gradient, then a frozen head
# ---------------------------------------------------------------------------

def baseline_decoupled(cohort: Cohort, hyper: Hyperparameters,
                       threads: int = 1) -> ModelState:
    """Two-stage baseline: factorize with the trade-off set to zero, then
    train the head further on the frozen loadings.

    The factorization stage is exactly ``fit`` with ``lambda_tradeoff=0`` and
    the same seed, so its loadings and basis match that run bit for bit; the
    extra head epochs never touch the basis or the loadings.
    """
    stage_hyper = replace(hyper, lambda_tradeoff=0.0)
    model = fit(cohort, stage_hyper, threads=threads)
    head_epochs = hyper.head_epochs
    if head_epochs is None:
        head_epochs = hyper.epochs_outer * hyper.epochs_network
    subjects = {s.subject_id: s for s in cohort.subjects}
    rng = np.random.default_rng(hyper.seed + 1)
    for _ in range(head_epochs):
        order = rng.permutation(len(model.subject_ids))
        for j in order:
            sid = model.subject_ids[j]
            seq = model.loadings[sid].c
            trace = forward(seq, model.weights)
            grads, _ = backward(trace, seq, model.weights, subjects[sid].severity)
            adam_step(model.weights.arrays, grads, model.adam_network,
                      epoch=model.network_epochs_done)
        model.network_epochs_done += 1
    return model
