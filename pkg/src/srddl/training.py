"""Coupled training of the factorization and the prediction head.

One outer iteration cycles through: the Procrustes basis update, Adam epochs
on the loading sequences (parametric gradient plus the trade-off-scaled head
input gradient), Adam epochs on the head weights (batch size 1, stepped
learning-rate schedule), and primal-dual rounds on the splitting variables.
Convergence is declared on the constrained objective together with the
relative coupling residual.

Unseen subjects get loadings from per-window nonnegative QPs against the
trained basis, then a severity estimate from a single head forward pass.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import (
    Cohort,
    SeverityVector,
    StructuralLaplacian,
    Subject,
    build_normalized_laplacian,
    impute_adjacency,
)
from .factorization import (
    ConstraintState,
    Hyperparameters,
    LoadingSequence,
    augmented_penalty,
    check_orthonormal,
    loading_objective_gradient,
    procrustes_target_terms,
    procrustes_update,
    qp_build,
    qp_solve,
    srddl_loss,
    update_constraint_dual,
    update_constraint_primal,
    weighted_frobenius,
)
from .network import AdamState, NetworkWeights, adam_step, backward, forward, masked_mse

logger = logging.getLogger("srddl.training")

HISTORY_FIELDS = ("iteration", "srddl_loss", "network_loss", "penalty",
                  "objective", "residual", "ortho_error")


class DivergenceError(RuntimeError):
    """The training objective left the finite range."""


@dataclass
class FoldAssignment:
    """subject_id -> fold index partition with near-equal fold sizes."""

    mapping: dict[str, int]
    n_folds: int

    def __post_init__(self):
        folds = np.array(sorted(self.mapping.values()))
        if folds.size == 0:
            raise ValueError("empty fold assignment")
        if folds.min() < 0 or folds.max() >= self.n_folds:
            raise ValueError("fold indices out of range")
        counts = np.bincount(list(self.mapping.values()), minlength=self.n_folds)
        if counts.min() == 0:
            raise ValueError("a fold has zero subjects")
        if counts.max() - counts.min() > 1:
            raise ValueError(f"fold sizes differ by more than 1: {counts.tolist()}")

    def fold_of(self, subject_id: str) -> int:
        return self.mapping[subject_id]

    def members(self, fold: int) -> list[str]:
        return sorted(sid for sid, f in self.mapping.items() if f == fold)


def assign_folds(subject_ids, n_folds: int, seed: int) -> FoldAssignment:
    """Seeded round-robin partition over a shuffled subject list."""
    ids = sorted(subject_ids)
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if len(ids) < n_folds:
        raise ValueError(f"{len(ids)} subjects cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    return FoldAssignment(
        mapping={ids[j]: i % n_folds for i, j in enumerate(order)}, n_folds=n_folds
    )


@dataclass
class ModelState:
    """Everything the fit produces; sufficient to predict and to resume."""

    basis: np.ndarray
    subject_ids: list[str]
    loadings: dict[str, LoadingSequence]
    constraints: dict[str, ConstraintState]
    weights: NetworkWeights
    adam_network: AdamState
    adam_loadings: dict[str, AdamState]
    hyper: Hyperparameters
    history: list[dict]
    score_names: tuple[str, ...]
    p: int
    m: int
    imputation_adjacency: np.ndarray | None = None
    network_epochs_done: int = 0
    loading_epochs_done: int = 0


def _resolve_structures(subjects, template=None):
    """Impute missing structural graphs from the observed training ones."""
    observed = [s.structure.adjacency for s in subjects if not s.structure.is_missing]
    if template is None:
        if observed:
            template = impute_adjacency(observed)
        elif any(s.structure.is_missing for s in subjects):
            raise ValueError(
                "cannot impute structural graphs: no subject has an observed one"
            )
    resolved = []
    for s in subjects:
        if s.structure.is_missing:
            logger.info("imputing structural graph for %s", s.subject_id)
            structure = build_normalized_laplacian(
                template, subject_id=s.subject_id, imputed=True
            )
            resolved.append(Subject(s.connectome, structure, s.severity))
        else:
            resolved.append(s)
    return resolved, template


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _evaluate(subjects, basis, loadings, states, weights, hyper):
    recon_factored = 0.0
    recon_split = 0.0
    penalty = 0.0
    network = 0.0
    residual_num = 0.0
    residual_den = 0.0
    for s in subjects:
        sid = s.subject_id
        gammas = s.connectome.gammas
        lap = s.structure.laplacian
        ls = loadings[sid]
        st = states[sid]
        t_n = gammas.shape[0]
        recon_factored += srddl_loss(basis, ls, gammas, lap)
        split = gammas - np.matmul(st.d, basis.T)
        recon_split += float(np.sum(split * np.matmul(lap, split))) / t_n
        penalty += augmented_penalty(basis, ls, st)
        trace = forward(ls.c, weights)
        network += masked_mse(trace, s.severity)
        gap = st.d - ls.c[:, None, :] * basis
        residual_num += float(np.linalg.norm(gap))
        residual_den += max(float(np.linalg.norm(st.d)), 1e-12)
    objective = recon_split + hyper.lambda_tradeoff * network + penalty
    return {
        "srddl_loss": recon_factored,
        "network_loss": network,
        "penalty": penalty,
        "objective": objective,
        "residual": residual_num / residual_den,
    }


def fit(cohort: Cohort, hyper: Hyperparameters, threads: int = 1) -> ModelState:
    """Alternating minimization of the joint factorization/prediction objective.

    Deterministic given the hyperparameter seed; invariant to the order in
    which subjects appear in the cohort (they are canonicalized by id).

    Raises
    ------
    DivergenceError
        If the objective becomes non-finite; the message carries the recent
        iteration history.
    """
    if len(cohort) == 0:
        raise ValueError("cannot fit an empty cohort")
    if hyper.k > cohort.p:
        raise ValueError(f"k={hyper.k} exceeds the region count P={cohort.p}")
    subjects = sorted(cohort.subjects, key=lambda s: s.subject_id)
    subjects, imputation_template = _resolve_structures(subjects)
    ids = [s.subject_id for s in subjects]

    rng = np.random.default_rng(hyper.seed)
    p, k = cohort.p, hyper.k
    basis, _ = np.linalg.qr(rng.normal(size=(p, k)))
    loadings = {}
    states = {}
    adam_loadings = {}
    for s in subjects:
        t_n = s.connectome.n_windows
        c_hat = rng.uniform(0.01, 0.1, size=(t_n, k))
        loadings[s.subject_id] = LoadingSequence(c_hat=c_hat)
        d0 = np.maximum(c_hat, 0.0)[:, None, :] * basis
        states[s.subject_id] = ConstraintState(
            d=d0, lam=np.zeros_like(d0), gamma=hyper.gamma
        )
        adam_loadings[s.subject_id] = AdamState(
            lr=hyper.lr_loadings, decay=hyper.lr_decay,
            decay_every=hyper.lr_decay_every)
    weights = NetworkWeights.initialize(k, cohort.m, hyper.hidden_width, rng)
    adam_network = AdamState(lr=hyper.lr_network, decay=hyper.lr_decay,
                             decay_every=hyper.lr_decay_every)

    history = []
    stats = _evaluate(subjects, basis, loadings, states, weights, hyper)
    stats.update(iteration=0, ortho_error=check_orthonormal(basis))
    history.append(stats)

    model = ModelState(
        basis=basis, subject_ids=ids, loadings=loadings, constraints=states,
        weights=weights, adam_network=adam_network, adam_loadings=adam_loadings,
        hyper=hyper, history=history, score_names=cohort.score_names,
        p=p, m=cohort.m, imputation_adjacency=imputation_template,
    )

    for outer in range(1, hyper.epochs_outer + 1):
        # basis update: orthogonal Procrustes on the summed target
        target = None
        for s in subjects:
            term = procrustes_target_terms(
                s.connectome.gammas, s.structure.laplacian,
                loadings[s.subject_id], states[s.subject_id],
            )
            target = term if target is None else target + term
        model.basis = procrustes_update(target)
        ortho_error = check_orthonormal(model.basis)

        _loading_epochs(model, subjects, threads)
        _network_epochs(model, subjects, rng)
        _dual_rounds(model, subjects, threads)

        stats = _evaluate(subjects, model.basis, loadings, states, model.weights, hyper)
        stats.update(iteration=outer, ortho_error=ortho_error)
        history.append(stats)
        if not np.isfinite(stats["objective"]):
            tail = "; ".join(
                f"iter {h['iteration']}: objective={h['objective']:.6g}"
                for h in history[-5:]
            )
            raise DivergenceError(f"objective became non-finite ({tail})")
        logger.info(
            "outer %d: objective=%.6g srddl=%.6g network=%.6g residual=%.3g",
            outer, stats["objective"], stats["srddl_loss"], stats["network_loss"],
            stats["residual"],
        )
        prev = history[-2]["objective"]
        rel_change = abs(prev - stats["objective"]) / max(abs(prev), 1e-12)
        if rel_change < hyper.tol and stats["residual"] < hyper.residual_tol:
            logger.info("converged after %d outer iterations", outer)
            break
    return model


def _loading_epochs(model, subjects, threads):
    hyper = model.hyper

    def update_one(subject):
        sid = subject.subject_id
        ls = model.loadings[sid]
        grad = loading_objective_gradient(
            ls.c_hat, model.basis, model.constraints[sid],
            subject.connectome.gammas, subject.structure.laplacian,
        )
        if hyper.lambda_tradeoff != 0:
            trace = forward(ls.c, model.weights)
            _, grad_inputs = backward(trace, ls.c, model.weights, subject.severity)
            grad = grad + hyper.lambda_tradeoff * grad_inputs * (ls.c_hat > 0)
        params = {"c_hat": ls.c_hat}
        adam_step(params, {"c_hat": grad}, model.adam_loadings[sid],
                  epoch=model.loading_epochs_done)
        model.loadings[sid] = LoadingSequence(c_hat=params["c_hat"])

    for _ in range(hyper.epochs_loadings):
        _map(update_one, subjects, threads)
        model.loading_epochs_done += 1


def _network_epochs(model, subjects, rng):
    hyper = model.hyper
    for _ in range(hyper.epochs_network):
        order = rng.permutation(len(subjects))
        for j in order:
            subject = subjects[j]
            ls = model.loadings[subject.subject_id]
            trace = forward(ls.c, model.weights)
            grads, _ = backward(trace, ls.c, model.weights, subject.severity)
            adam_step(model.weights.arrays, grads, model.adam_network,
                      epoch=model.network_epochs_done)
        model.network_epochs_done += 1


def _dual_rounds(model, subjects, threads):
    hyper = model.hyper

    def update_one(subject):
        # basis and loadings are fixed during the rounds, so the constant part
        # of the primal right-hand side and the Cholesky factor are hoisted
        sid = subject.subject_id
        st = model.constraints[sid]
        c = model.loadings[sid].c
        lap = subject.structure.laplacian
        gammas = subject.connectome.gammas
        p = lap.shape[0]
        t_n, k = c.shape
        bc = c[:, None, :] * model.basis
        rhs_const = 2.0 * np.matmul(np.matmul(lap, gammas), model.basis)
        rhs_const += st.gamma * bc
        factor = cho_factor(2.0 * lap + st.gamma * np.eye(p))
        for _ in range(hyper.dual_rounds):
            rhs = rhs_const - st.gamma * st.lam
            flat = np.moveaxis(rhs, 0, 2).reshape(p, t_n * k)
            solved = cho_solve(factor, flat)
            st.d = np.moveaxis(solved.reshape(p, k, t_n), 2, 0).copy()
            st.lam = st.lam + hyper.dual_step * (st.d - bc)

    _map(update_one, subjects, threads)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def infer_loadings(connectome, structure, basis,
                   qp_max_iter: int = 500) -> LoadingSequence:
    """Nonnegative loading sequence for a subject never seen in training.

    Each window is an independent nonnegative QP built from the trained basis
    and the subject's structural weighting.
    """
    if structure.is_missing:
        raise ValueError(
            f"{connectome.subject_id}: structural graph is missing; impute it "
            "before inference"
        )
    rows = []
    for gamma in connectome.gammas:
        problem = qp_build(basis, gamma, structure.laplacian)
        rows.append(qp_solve(problem, max_iter=qp_max_iter))
    return LoadingSequence(c_hat=np.stack(rows))


def _resolve_for_prediction(subject, model):
    if not subject.structure.is_missing:
        return subject
    if model.imputation_adjacency is None:
        raise ValueError(
            f"{subject.subject_id}: structural graph missing and the model has "
            "no imputation template"
        )
    structure = build_normalized_laplacian(
        model.imputation_adjacency, subject_id=subject.subject_id, imputed=True
    )
    return Subject(subject.connectome, structure, subject.severity)


def predict_with_trace(subject, model: ModelState):
    """(severity estimate, inferred loadings, forward trace) for one subject."""
    subject = _resolve_for_prediction(subject, model)
    loadings = infer_loadings(
        subject.connectome, subject.structure, model.basis,
        qp_max_iter=model.hyper.qp_max_iter,
    )
    trace = forward(loadings.c, model.weights)
    estimate = SeverityVector(
        scores=trace.prediction.copy(),
        observed=np.ones(model.m, dtype=bool),
        score_names=model.score_names,
    )
    return estimate, loadings, trace


def predict(subject, model: ModelState) -> SeverityVector:
    """Severity estimate for one subject (all entries marked observed)."""
    return predict_with_trace(subject, model)[0]


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CVResult:
    assignment: FoldAssignment
    rows: list[dict]            # fold, method, score, split, mae, mi
    pooled: list[dict]          # method, score, split, mae, mi
    predictions: list[dict]     # fold, method, split, subject_id, per-score values
    histories: dict             # (method, fold) -> history list
    attention: dict             # method -> subject_id -> (T,) weights on test pass


def _fit_method(method, train_cohort, hyper, threads):
    from . import metrics as _metrics

    if method == "hybrid":
        model = fit(train_cohort, hyper, threads=threads)
        return model, model.history
    if method == "decoupled":
        model = _metrics.baseline_decoupled(train_cohort, hyper, threads=threads)
        return model, model.history
    if method == "pca":
        model = _metrics.baseline_pca_lstm(train_cohort, hyper)
        return model, model.history
    raise ValueError(f"unknown method {method!r}")


def _predict_method(method, subject, model):
    from . import metrics as _metrics

    if method in ("hybrid", "decoupled"):
        estimate, _, trace = predict_with_trace(subject, model)
        return estimate, trace.attention
    if method == "pca":
        return _metrics.baseline_pca_predict(subject, model)
    raise ValueError(f"unknown method {method!r}")


def cross_validate(cohort: Cohort, hyper: Hyperparameters, folds: int = 5,
                   seed: int = 0, methods=("hybrid",),
                   assignment: FoldAssignment | None = None,
                   threads: int = 1) -> CVResult:
    """K-fold evaluation with train-only imputation and per-fold refits.

    Every subject is tested exactly once. Per-fold and pooled (over all test
    predictions) median-absolute-error and mutual-information rows are
    produced per method, score and split.
    """
    from .metrics import median_absolute_error, mutual_information

    if assignment is None:
        assignment = assign_folds(cohort.subject_ids, folds, seed)
    else:
        folds = assignment.n_folds
    rows = []
    pooled_acc = {}
    predictions = []
    histories = {}
    attention = {m: {} for m in methods}

    for fold in range(folds):
        test_ids = assignment.members(fold)
        train_ids = sorted(set(cohort.subject_ids) - set(test_ids))
        if not test_ids or not train_ids:
            raise ValueError(f"fold {fold} has an empty split")
        train_cohort = cohort.subset(train_ids)
        test_cohort = cohort.subset(test_ids)
        for method in methods:
            model, history = _fit_method(method, train_cohort, hyper, threads)
            histories[(method, fold)] = history
            for split, split_cohort in (("train", train_cohort), ("test", test_cohort)):
                preds = {}
                for subject in sorted(split_cohort.subjects,
                                      key=lambda s: s.subject_id):
                    estimate, att = _predict_method(method, subject, model)
                    preds[subject.subject_id] = (estimate, subject.severity)
                    if split == "test":
                        attention[method][subject.subject_id] = att
                    predictions.append({
                        "fold": fold, "method": method, "split": split,
                        "subject_id": subject.subject_id,
                        "predicted": estimate.scores.copy(),
                        "truth": subject.severity.scores.copy(),
                        "observed": subject.severity.observed.copy(),
                    })
                for j, score in enumerate(cohort.score_names):
                    pred, truth = _observed_pairs(preds.values(), j)
                    mae = median_absolute_error(pred, truth) if len(pred) else np.nan
                    mi = (mutual_information(pred, truth)
                          if len(pred) >= 2 else np.nan)
                    rows.append({"fold": fold, "method": method, "score": score,
                                 "split": split, "mae": mae, "mi": mi})
                    key = (method, score, split)
                    acc = pooled_acc.setdefault(key, ([], []))
                    acc[0].extend(pred)
                    acc[1].extend(truth)

    pooled = []
    for method in methods:
        for score in cohort.score_names:
            for split in ("train", "test"):
                pred, truth = pooled_acc[(method, score, split)]
                pooled.append({
                    "method": method, "score": score, "split": split,
                    "mae": median_absolute_error(pred, truth) if pred else np.nan,
                    "mi": mutual_information(pred, truth) if len(pred) >= 2 else np.nan,
                })
    return CVResult(assignment=assignment, rows=rows, pooled=pooled,
                    predictions=predictions, histories=histories,
                    attention=attention)


def _observed_pairs(pairs, score_index):
    pred, truth = [], []
    for estimate, severity in pairs:
        if severity.observed[score_index]:
            pred.append(float(estimate.scores[score_index]))
            truth.append(float(severity.scores[score_index]))
    return pred, truth


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

_EPOCH_STAMP = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH_STAMP)
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _blob(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(model: ModelState, path) -> Path:
    """Write a deterministic archive: JSON hyperparameters and index, raw
    little-endian float64 blobs for every tensor, CSV history."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"basis": model.basis}
    if model.imputation_adjacency is not None:
        arrays["imputation_adjacency"] = model.imputation_adjacency
    for name, arr in model.weights.arrays.items():
        arrays[f"weights/{name}"] = arr
    for name in sorted(model.adam_network.m):
        arrays[f"adam_network/m/{name}"] = model.adam_network.m[name]
        arrays[f"adam_network/v/{name}"] = model.adam_network.v[name]
    for sid in model.subject_ids:
        arrays[f"loadings/{sid}"] = model.loadings[sid].c_hat
        arrays[f"constraint_d/{sid}"] = model.constraints[sid].d
        arrays[f"constraint_lam/{sid}"] = model.constraints[sid].lam
        adam = model.adam_loadings[sid]
        if "c_hat" in adam.m:
            arrays[f"adam_loadings/{sid}/m"] = adam.m["c_hat"]
            arrays[f"adam_loadings/{sid}/v"] = adam.v["c_hat"]

    index = {
        name: {"shape": list(np.shape(arr)), "dtype": "<f8",
               "file": f"arrays/{name}.bin"}
        for name, arr in arrays.items()
    }
    meta = {
        "p": model.p,
        "m": model.m,
        "score_names": list(model.score_names),
        "subject_ids": list(model.subject_ids),
        "network": {"k": model.weights.k, "m": model.weights.m,
                    "width": model.weights.width},
        "network_epochs_done": model.network_epochs_done,
        "loading_epochs_done": model.loading_epochs_done,
        "adam_network_steps": model.adam_network.step_count,
        "adam_loading_steps": {
            sid: model.adam_loadings[sid].step_count for sid in model.subject_ids
        },
        "constraint_gamma": {
            sid: model.constraints[sid].gamma for sid in model.subject_ids
        },
    }
    hist_buf = _io.StringIO()
    writer = csv.DictWriter(hist_buf, fieldnames=HISTORY_FIELDS)
    writer.writeheader()
    for rec in model.history:
        writer.writerow({k: _fmt_hist(rec[k]) for k in HISTORY_FIELDS})

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _zip_write(zf, "hyper.json",
                   json.dumps(asdict(model.hyper), indent=1, sort_keys=True).encode())
        _zip_write(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
        _zip_write(zf, "arrays.json",
                   json.dumps(index, indent=1, sort_keys=True).encode())
        _zip_write(zf, "history.csv", hist_buf.getvalue().encode())
        for name in sorted(arrays):
            _zip_write(zf, index[name]["file"], _blob(arrays[name]))
    return path


def _fmt_hist(value):
    if isinstance(value, float):
        return np.format_float_scientific(value, precision=17)
    return value


def load_checkpoint(path) -> ModelState:
    """Rebuild a :class:`ModelState` from :func:`save_checkpoint` output."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        hyper = Hyperparameters(**json.loads(zf.read("hyper.json")))
        meta = json.loads(zf.read("meta.json"))
        index = json.loads(zf.read("arrays.json"))

        def arr(name):
            entry = index[name]
            raw = np.frombuffer(zf.read(entry["file"]), dtype="<f8")
            return raw.reshape(entry["shape"]).copy()

        net_meta = meta["network"]
        weights = NetworkWeights(
            arrays={name[len("weights/"):]: arr(name) for name in index
                    if name.startswith("weights/")},
            k=net_meta["k"], m=net_meta["m"], width=net_meta["width"],
        )
        adam_network = AdamState(lr=hyper.lr_network, decay=hyper.lr_decay,
                                 decay_every=hyper.lr_decay_every,
                                 step_count=meta["adam_network_steps"])
        for name in index:
            if name.startswith("adam_network/m/"):
                pname = name[len("adam_network/m/"):]
                adam_network.m[pname] = arr(name)
                adam_network.v[pname] = arr(f"adam_network/v/{pname}")

        loadings = {}
        constraints = {}
        adam_loadings = {}
        for sid in meta["subject_ids"]:
            loadings[sid] = LoadingSequence(c_hat=arr(f"loadings/{sid}"))
            constraints[sid] = ConstraintState(
                d=arr(f"constraint_d/{sid}"),
                lam=arr(f"constraint_lam/{sid}"),
                gamma=meta["constraint_gamma"][sid],
            )
            adam = AdamState(lr=hyper.lr_loadings, decay=hyper.lr_decay,
                             decay_every=hyper.lr_decay_every,
                             step_count=meta["adam_loading_steps"][sid])
            if f"adam_loadings/{sid}/m" in index:
                adam.m["c_hat"] = arr(f"adam_loadings/{sid}/m")
                adam.v["c_hat"] = arr(f"adam_loadings/{sid}/v")
            adam_loadings[sid] = adam

        history = []
        reader = csv.DictReader(_io.StringIO(zf.read("history.csv").decode()))
        for row in reader:
            history.append({
                "iteration": int(row["iteration"]),
                **{k: float(row[k]) for k in HISTORY_FIELDS if k != "iteration"},
            })
        imputation = (arr("imputation_adjacency")
                      if "imputation_adjacency" in index else None)
        basis = arr("basis")
    return ModelState(
        basis=basis,
        subject_ids=list(meta["subject_ids"]),
        loadings=loadings, constraints=constraints, weights=weights,
        adam_network=adam_network, adam_loadings=adam_loadings, hyper=hyper,
        history=history, score_names=tuple(meta["score_names"]),
        p=meta["p"], m=meta["m"], imputation_adjacency=imputation,
        network_epochs_done=meta["network_epochs_done"],
        loading_epochs_done=meta.get("loading_epochs_done", 0),
    )
