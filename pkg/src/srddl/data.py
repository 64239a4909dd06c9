"""Cohort data model: windowed connectivity, structural graphs, severity scores.

The pipeline represented here turns per-region signal matrices into sequences
of symmetric PSD correlation residuals, pairs them with a normalized graph
Laplacian built from a binary structural adjacency, and attaches a
(possibly partially observed) vector of clinical scores per subject.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger("srddl.data")

SYM_TOL = 1e-10
PSD_TOL = 1e-8


class CohortFormatError(ValueError):
    """Raised when cohort data violates a structural contract."""


class ZeroVarianceError(ValueError):
    """A channel is constant inside a correlation window."""


def _check_symmetric(mat, tol, what):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise CohortFormatError(f"{what}: expected a square matrix, got shape {mat.shape}")
    if np.abs(mat - mat.T).max(initial=0.0) > tol:
        raise CohortFormatError(f"{what}: matrix is not symmetric within {tol:g}")


@dataclass
class RoiTimeSeries:
    """Raw per-region signals for one subject.

    samples is (P, T_raw): one row per region, one column per time sample.
    repetition_interval is carried as acquisition metadata only.
    """

    subject_id: str
    samples: np.ndarray
    repetition_interval: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise CohortFormatError(f"{self.subject_id}: samples must be 2-D (P, T_raw)")
        if self.samples.shape[0] < 2:
            raise CohortFormatError(f"{self.subject_id}: need at least 2 regions")
        if not np.isfinite(self.samples).all():
            raise CohortFormatError(f"{self.subject_id}: non-finite samples")

    @property
    def p(self) -> int:
        return self.samples.shape[0]

    @property
    def t_raw(self) -> int:
        return self.samples.shape[1]


@dataclass
class DynamicConnectome:
    """Sequence of symmetric PSD correlation-residual matrices for one subject."""

    subject_id: str
    gammas: np.ndarray  # (T, P, P)

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=float)
        if self.gammas.ndim != 3 or self.gammas.shape[1] != self.gammas.shape[2]:
            raise CohortFormatError(
                f"{self.subject_id}: gammas must be (T, P, P), got {self.gammas.shape}"
            )
        if self.gammas.shape[0] < 1:
            raise CohortFormatError(f"{self.subject_id}: need at least one window")
        asym = np.abs(self.gammas - np.transpose(self.gammas, (0, 2, 1))).max()
        if asym > SYM_TOL:
            raise CohortFormatError(
                f"{self.subject_id}: window matrices asymmetric by {asym:.2e}"
            )
        eigmin = min(np.linalg.eigvalsh(g)[0] for g in self.gammas)
        if eigmin < -PSD_TOL:
            raise CohortFormatError(
                f"{self.subject_id}: window matrix has eigenvalue {eigmin:.2e} < -{PSD_TOL:g}"
            )

    @property
    def n_windows(self) -> int:
        return self.gammas.shape[0]

    @property
    def p(self) -> int:
        return self.gammas.shape[1]


@dataclass
class StructuralLaplacian:
    """Normalized graph Laplacian from a binary structural adjacency.

    ``adjacency is None`` marks a subject whose structural scan is absent;
    the matrix must then be imputed from training subjects before use.
    """

    subject_id: str
    laplacian: np.ndarray | None
    adjacency: np.ndarray | None
    imputed: bool = False

    def __post_init__(self):
        if self.adjacency is None:
            if self.laplacian is not None:
                raise CohortFormatError(
                    f"{self.subject_id}: laplacian given without adjacency"
                )
            return
        self.adjacency = np.asarray(self.adjacency, dtype=float)
        self.laplacian = np.asarray(self.laplacian, dtype=float)
        _check_adjacency(self.adjacency, self.subject_id)
        _check_symmetric(self.laplacian, SYM_TOL, f"{self.subject_id}: laplacian")
        eigmin = np.linalg.eigvalsh(self.laplacian)[0]
        if eigmin < -1e-10:
            raise CohortFormatError(
                f"{self.subject_id}: laplacian eigenvalue {eigmin:.2e} < -1e-10"
            )

    @property
    def is_missing(self) -> bool:
        return self.adjacency is None

    @property
    def p(self) -> int:
        if self.laplacian is None:
            raise CohortFormatError(f"{self.subject_id}: structural matrix is missing")
        return self.laplacian.shape[0]

    @classmethod
    def missing(cls, subject_id: str) -> "StructuralLaplacian":
        return cls(subject_id=subject_id, laplacian=None, adjacency=None, imputed=False)


def _check_adjacency(adjacency, subject_id=""):
    tag = f"{subject_id}: " if subject_id else ""
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise CohortFormatError(f"{tag}adjacency must be square, got {adjacency.shape}")
    if np.any(adjacency != adjacency.T):
        raise CohortFormatError(f"{tag}adjacency is not symmetric")
    if not np.isin(adjacency, (0.0, 1.0)).all():
        raise CohortFormatError(f"{tag}adjacency entries must be 0 or 1")
    if np.any(np.diag(adjacency) != 0):
        raise CohortFormatError(f"{tag}adjacency diagonal must be zero")


@dataclass
class SeverityVector:
    """Clinical scores with a per-entry observed mask.

    Unobserved entries hold an arbitrary sentinel (NaN by convention) and are
    never consumed as data: every reader must gate on ``observed``.
    """

    scores: np.ndarray
    observed: np.ndarray
    score_names: tuple[str, ...]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        self.score_names = tuple(self.score_names)
        if not (len(self.scores) == len(self.observed) == len(self.score_names)):
            raise CohortFormatError(
                f"scores/observed/names length mismatch: "
                f"{len(self.scores)}/{len(self.observed)}/{len(self.score_names)}"
            )

    @property
    def m(self) -> int:
        return len(self.scores)


@dataclass
class Subject:
    connectome: DynamicConnectome
    structure: StructuralLaplacian
    severity: SeverityVector

    def __post_init__(self):
        if self.connectome.subject_id != self.structure.subject_id:
            raise CohortFormatError(
                f"subject id mismatch: {self.connectome.subject_id!r} vs "
                f"{self.structure.subject_id!r}"
            )
        if not self.structure.is_missing and self.structure.p != self.connectome.p:
            raise CohortFormatError(
                f"{self.subject_id}: structural matrix is {self.structure.p}x"
                f"{self.structure.p} but connectome has P={self.connectome.p}"
            )

    @property
    def subject_id(self) -> str:
        return self.connectome.subject_id


@dataclass
class Cohort:
    """All subjects of a study; shared region count P and score count M."""

    subjects: list[Subject]
    p: int
    m: int
    score_names: tuple[str, ...]

    def __post_init__(self):
        self.score_names = tuple(self.score_names)
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise CohortFormatError("duplicate subject ids in cohort")
        for s in self.subjects:
            if s.connectome.p != self.p:
                raise CohortFormatError(
                    f"{s.subject_id}: P={s.connectome.p} does not match cohort P={self.p}"
                )
            if s.severity.m != self.m:
                raise CohortFormatError(
                    f"{s.subject_id}: M={s.severity.m} does not match cohort M={self.m}"
                )
            if s.severity.score_names != self.score_names:
                raise CohortFormatError(f"{s.subject_id}: score names differ from cohort")

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def subset(self, subject_ids) -> "Cohort":
        wanted = set(subject_ids)
        picked = [s for s in self.subjects if s.subject_id in wanted]
        if len(picked) != len(wanted):
            missing = wanted - {s.subject_id for s in picked}
            raise KeyError(f"unknown subject ids: {sorted(missing)}")
        return Cohort(picked, self.p, self.m, self.score_names)


# ---------------------------------------------------------------------------
# preprocessing operations
# ---------------------------------------------------------------------------

def window_count(t_raw: int, window_length: int, stride: int) -> int:
    """Number of sliding windows fitting in a series of length ``t_raw``."""
    return (t_raw - window_length) // stride + 1


def sliding_window_correlations(
    series: RoiTimeSeries, window_length: int, stride: int
) -> np.ndarray:
    """Pearson correlation matrix of every sliding window.

    Parameters
    ----------
    series : RoiTimeSeries
        (P, T_raw) signal matrix.
    window_length : int
        Samples per window, >= 2.
    stride : int
        Shift between consecutive window starts, >= 1.

    Returns
    -------
    (T, P, P) array of correlation matrices with unit diagonal, where
    T = (T_raw - window_length) // stride + 1.

    Raises
    ------
    ZeroVarianceError
        If any channel is constant inside a window; the message names the
        subject, window index and region.
    """
    if window_length < 2:
        raise ValueError(f"window_length must be >= 2, got {window_length}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    x = series.samples
    if series.t_raw < window_length:
        raise ValueError(
            f"{series.subject_id}: series length {series.t_raw} shorter than "
            f"window {window_length}"
        )
    n_windows = window_count(series.t_raw, window_length, stride)
    out = np.empty((n_windows, series.p, series.p))
    for w in range(n_windows):
        seg = x[:, w * stride : w * stride + window_length]
        flat = np.ptp(seg, axis=1) == 0
        if flat.any():
            roi = int(np.flatnonzero(flat)[0])
            raise ZeroVarianceError(
                f"subject {series.subject_id!r}: zero-variance channel in window "
                f"{w} (ROI {roi})"
            )
        corr = np.corrcoef(seg)
        corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
        np.fill_diagonal(corr, 1.0)
        out[w] = corr
    return out


def subtract_principal_component(gamma: np.ndarray) -> np.ndarray:
    """Remove the top eigenpair: returns ``gamma - lam1 * v1 v1^T``.

    The input must be symmetric and PSD within tolerance. The residual keeps
    the remaining spectrum, so it stays PSD, and is orthogonal to the removed
    eigenvector. A degenerate top eigenvalue is resolved by whichever
    eigenvector the solver returns.
    """
    gamma = np.asarray(gamma, dtype=float)
    _check_symmetric(gamma, SYM_TOL, "eigen-subtraction input")
    eigvals, eigvecs = np.linalg.eigh(gamma)
    if eigvals[0] < -PSD_TOL:
        raise ValueError(
            f"eigen-subtraction input has eigenvalue {eigvals[0]:.2e} < -{PSD_TOL:g}"
        )
    lam1 = eigvals[-1]
    v1 = eigvecs[:, -1]
    residual = gamma - lam1 * np.outer(v1, v1)
    return (residual + residual.T) / 2.0


def connectome_from_timeseries(
    series: RoiTimeSeries,
    window_length: int,
    stride: int,
    residualize: bool = True,
) -> DynamicConnectome:
    """Window a raw series and (optionally) drop each window's top eigenpair."""
    corrs = sliding_window_correlations(series, window_length, stride)
    if residualize:
        corrs = np.stack([subtract_principal_component(c) for c in corrs])
    return DynamicConnectome(subject_id=series.subject_id, gammas=corrs)


def build_normalized_laplacian(
    adjacency: np.ndarray, subject_id: str = "", imputed: bool = False
) -> StructuralLaplacian:
    """Normalized Laplacian ``I - Dg^{-1/2} A Dg^{-1/2}`` of a binary graph.

    Rows and columns of isolated nodes (degree zero) are left all zero,
    including the diagonal, which keeps the matrix PSD; such nodes are
    reported through the module logger.
    """
    adjacency = np.asarray(adjacency, dtype=float)
    _check_adjacency(adjacency, subject_id)
    degrees = adjacency.sum(axis=1)
    isolated = degrees == 0
    if isolated.any() and not isolated.all():
        logger.warning(
            "%s: %d isolated node(s) in structural graph; their Laplacian "
            "rows are zeroed", subject_id or "<anon>", int(isolated.sum())
        )
    with np.errstate(divide="ignore"):
        dinv = 1.0 / np.sqrt(degrees)
    dinv[isolated] = 0.0
    lap = np.diag((~isolated).astype(float)) - dinv[:, None] * adjacency * dinv[None, :]
    lap = (lap + lap.T) / 2.0
    return StructuralLaplacian(
        subject_id=subject_id, laplacian=lap, adjacency=adjacency, imputed=imputed
    )


def impute_adjacency(training_adjacencies) -> np.ndarray:
    """Majority-vote adjacency over training graphs; ties (exactly 0.5) become 1."""
    mats = [np.asarray(a, dtype=float) for a in training_adjacencies]
    if not mats:
        raise ValueError("cannot impute from an empty training list")
    for a in mats:
        _check_adjacency(a)
    vote = (np.mean(mats, axis=0) >= 0.5).astype(float)
    vote = np.maximum(vote, vote.T)  # mean of symmetric inputs is symmetric; keep exact
    np.fill_diagonal(vote, 0.0)
    return vote


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Shape and noise knobs for a simulated cohort.

    laplacian selects "graph" (random binary adjacency of the given edge
    density, normalized Laplacian) or "identity" (L = I, adjacency set to the
    complete graph). dti_missing marks that many subjects as lacking a
    structural scan so the imputation path can be exercised.
    """

    p: int = 20
    k_true: int = 5
    n_subjects: int = 12
    t_windows: int = 20
    m_scores: int = 3
    noise: float = 0.0
    score_noise: float = 0.0
    edge_density: float = 0.4
    laplacian: str = "graph"
    dti_missing: int = 0

    def validate(self):
        if self.k_true > self.p:
            raise ValueError(f"k_true={self.k_true} exceeds p={self.p}")
        if min(self.p, self.k_true, self.n_subjects, self.t_windows, self.m_scores) < 1:
            raise ValueError("all dimensions must be positive")
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if not 0.0 <= self.edge_density <= 1.0:
            raise ValueError("edge_density must lie in [0, 1]")
        if self.laplacian not in ("graph", "identity"):
            raise ValueError(f"unknown laplacian mode {self.laplacian!r}")
        if self.noise < 0 or self.score_noise < 0:
            raise ValueError("noise levels must be nonnegative")
        if not 0 <= self.dti_missing < self.n_subjects:
            raise ValueError("dti_missing must be in [0, n_subjects)")


@dataclass
class SyntheticTruth:
    """Generating quantities of a simulated cohort, for oracle tests."""

    basis: np.ndarray  # (P, K_true), orthonormal columns
    loadings: dict[str, np.ndarray] = field(default_factory=dict)  # id -> (T, K_true)
    score_weights: np.ndarray | None = None  # (M, K_true)
    score_bias: np.ndarray | None = None  # (M,)
    config: SynthConfig | None = None


def _smooth_nonnegative_walk(rng, t, k):
    # ReLU of a smoothed random walk: phases of activity separated by
    # stretches pinned at zero.
    steps = rng.normal(scale=0.35, size=(t, k))
    walk = np.cumsum(steps, axis=0) + rng.normal(loc=0.8, scale=0.5, size=(1, k))
    kernel = np.ones(5) / 5.0
    padded = np.vstack([walk[:1].repeat(2, axis=0), walk, walk[-1:].repeat(2, axis=0)])
    smooth = np.stack(
        [np.convolve(padded[:, j], kernel, mode="valid") for j in range(k)], axis=1
    )
    return np.maximum(smooth, 0.0)


def _random_adjacency(rng, p, density):
    upper = rng.random((p, p)) < density
    adj = np.triu(upper, k=1).astype(float)
    return adj + adj.T


def generate_synthetic_cohort(config: SynthConfig, seed: int):
    """Simulate a cohort from a planted orthonormal basis.

    Each window matrix is ``B_true diag(c_t) B_true^T`` plus symmetric noise
    re-projected onto the PSD cone; scores come from a fixed linear map of the
    time-averaged loadings. Deterministic given the seed.

    Returns
    -------
    (Cohort, SyntheticTruth)
    """
    config.validate()
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(config.p, config.k_true)))
    score_w = rng.normal(scale=2.0, size=(config.m_scores, config.k_true))
    score_b = rng.normal(scale=1.0, size=config.m_scores)
    truth = SyntheticTruth(basis=basis, score_weights=score_w, score_bias=score_b,
                           config=config)
    names = tuple(f"score_{j}" for j in range(config.m_scores))

    subjects = []
    width = len(str(config.n_subjects - 1))
    for i in range(config.n_subjects):
        sid = f"sub-{i:0{width}d}"
        c_true = _smooth_nonnegative_walk(rng, config.t_windows, config.k_true)
        gammas = np.einsum("pk,tk,qk->tpq", basis, c_true, basis)
        if config.noise > 0:
            e = rng.normal(scale=config.noise, size=gammas.shape)
            gammas = gammas + (e + np.transpose(e, (0, 2, 1))) / 2.0
            gammas = np.stack([_project_psd(g) for g in gammas])
        if config.laplacian == "identity":
            adjacency = np.ones((config.p, config.p)) - np.eye(config.p)
            structure = StructuralLaplacian(
                subject_id=sid, laplacian=np.eye(config.p), adjacency=adjacency
            )
        else:
            adjacency = _random_adjacency(rng, config.p, config.edge_density)
            structure = build_normalized_laplacian(adjacency, subject_id=sid)
        if i >= config.n_subjects - config.dti_missing:
            structure = StructuralLaplacian.missing(sid)
        scores = score_w @ c_true.mean(axis=0) + score_b
        if config.score_noise > 0:
            scores = scores + rng.normal(scale=config.score_noise, size=config.m_scores)
        severity = SeverityVector(
            scores=scores, observed=np.ones(config.m_scores, dtype=bool),
            score_names=names,
        )
        truth.loadings[sid] = c_true
        subjects.append(
            Subject(
                connectome=DynamicConnectome(subject_id=sid, gammas=gammas),
                structure=structure,
                severity=severity,
            )
        )
    cohort = Cohort(subjects, p=config.p, m=config.m_scores, score_names=names)
    return cohort, truth


def _project_psd(mat):
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.maximum(vals, 0.0)
    return (vecs * vals) @ vecs.T
