"""Command-line entry point: simulate cohorts, train, predict, cross-validate.

All outputs are plain CSV/JSON (plus the float-blob checkpoint archive with
its JSON index). Verbosity is controlled by the SRDDL_LOG environment
variable (DEBUG, INFO, WARNING, ERROR).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import SynthConfig, generate_synthetic_cohort
from .factorization import Hyperparameters
from .io import load_cohort, save_cohort
from .metrics import DTI_WEIGHT_NOTE, MI_NOTE
from .training import (
    cross_validate,
    fit,
    load_checkpoint,
    predict_with_trace,
    save_checkpoint,
)

logger = logging.getLogger("srddl.cli")

_FMT = "%.17g"


def _setup_logging():
    level_name = os.environ.get("SRDDL_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _add_hyper_flags(parser):
    parser.add_argument("--k", type=int, default=15, help="basis size (default 15)")
    parser.add_argument("--lambda", dest="lambda_tradeoff", type=float, default=3.0,
                        help="loss trade-off weight (default 3)")
    parser.add_argument("--gamma", type=float, default=1.0,
                        help="coupling penalty weight (default 1)")
    parser.add_argument("--epochs-outer", type=int, default=30)
    parser.add_argument("--epochs-loadings", type=int, default=10)
    parser.add_argument("--epochs-network", type=int, default=10)
    parser.add_argument("--dual-rounds", type=int, default=20)
    parser.add_argument("--lr-network", type=float, default=1e-4)
    parser.add_argument("--lr-loadings", type=float, default=0.05)
    parser.add_argument("--hidden-width", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for per-subject updates")


def _hyper_from_args(args) -> Hyperparameters:
    return Hyperparameters(
        k=args.k, lambda_tradeoff=args.lambda_tradeoff, gamma=args.gamma,
        epochs_outer=args.epochs_outer, epochs_loadings=args.epochs_loadings,
        epochs_network=args.epochs_network, dual_rounds=args.dual_rounds,
        lr_network=args.lr_network, lr_loadings=args.lr_loadings,
        hidden_width=args.hidden_width, seed=args.seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srddl",
        description="Structure-weighted dynamic dictionary learning with a "
                    "sequence-attention severity head",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a synthetic cohort directory")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--p", type=int, default=20, help="region count")
    p_sim.add_argument("--k-true", type=int, default=5, help="planted basis size")
    p_sim.add_argument("--n", type=int, default=12, help="subject count")
    p_sim.add_argument("--t", type=int, default=20, help="windows per subject")
    p_sim.add_argument("--m", type=int, default=3, help="score count")
    p_sim.add_argument("--noise", type=float, default=0.0)
    p_sim.add_argument("--score-noise", type=float, default=0.0)
    p_sim.add_argument("--edge-density", type=float, default=0.4)
    p_sim.add_argument("--laplacian", choices=("graph", "identity"),
                       default="graph")
    p_sim.add_argument("--dti-missing", type=int, default=0,
                       help="subjects to mark as lacking a structural scan")
    p_sim.add_argument("--seed", type=int, default=0)

    p_train = sub.add_parser("train", help="fit the hybrid model on a cohort")
    p_train.add_argument("--cohort", required=True)
    p_train.add_argument("--out", required=True)
    _add_hyper_flags(p_train)

    p_pred = sub.add_parser("predict", help="predict scores from a checkpoint")
    p_pred.add_argument("--cohort", required=True)
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--out", required=True)

    p_cv = sub.add_parser("crossval", help="k-fold cross-validated evaluation")
    p_cv.add_argument("--cohort", required=True)
    p_cv.add_argument("--out", required=True)
    p_cv.add_argument("--folds", type=int, default=5)
    p_cv.add_argument("--baseline", choices=("pca", "decoupled", "none"),
                      default="none")
    _add_hyper_flags(p_cv)
    return parser


def cmd_simulate(args) -> int:
    config = SynthConfig(
        p=args.p, k_true=args.k_true, n_subjects=args.n, t_windows=args.t,
        m_scores=args.m, noise=args.noise, score_noise=args.score_noise,
        edge_density=args.edge_density, laplacian=args.laplacian,
        dti_missing=args.dti_missing,
    )
    config.validate()
    cohort, truth = generate_synthetic_cohort(config, seed=args.seed)
    out = Path(args.out)
    save_cohort(cohort, out / "cohort")
    tdir = out / "truth"
    (tdir / "loadings").mkdir(parents=True, exist_ok=True)
    np.savetxt(tdir / "basis.csv", truth.basis, fmt=_FMT, delimiter=",")
    np.savetxt(tdir / "score_weights.csv", truth.score_weights, fmt=_FMT,
               delimiter=",")
    np.savetxt(tdir / "score_bias.csv", truth.score_bias.reshape(1, -1), fmt=_FMT,
               delimiter=",")
    for sid in sorted(truth.loadings):
        np.savetxt(tdir / "loadings" / f"{sid}.csv", truth.loadings[sid],
                   fmt=_FMT, delimiter=",")
    (tdir / "config.json").write_text(
        json.dumps({**asdict(config), "seed": args.seed}, indent=1, sort_keys=True)
    )
    windows = sorted({s.connectome.n_windows for s in cohort.subjects})
    print(f"simulated cohort: N={len(cohort)} P={cohort.p} M={cohort.m} "
          f"T_n={windows} K_true={config.k_true} -> {out / 'cohort'}")
    return 0


def _write_predictions(path: Path, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "score", "value"])
        for sid, score, value in rows:
            writer.writerow([sid, score, _FMT % value])


def cmd_train(args) -> int:
    cohort = load_cohort(args.cohort)
    hyper = _hyper_from_args(args)
    model = fit(cohort, hyper, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(model, out / "model.zip")
    _write_history_csv(out / "history.csv", {("hybrid", 0): model.history})
    rows = []
    for subject in sorted(cohort.subjects, key=lambda s: s.subject_id):
        estimate, _, _ = predict_with_trace(subject, model)
        for score, value in zip(model.score_names, estimate.scores):
            rows.append((subject.subject_id, score, value))
    _write_predictions(out / "predictions.csv", rows)
    print(f"trained on {len(cohort)} subjects; checkpoint at {ckpt}")
    print(f"final objective: {model.history[-1]['objective']:.6g} "
          f"after {model.history[-1]['iteration']} outer iterations")
    return 0


def cmd_predict(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    cohort = load_cohort(args.cohort)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for subject in sorted(cohort.subjects, key=lambda s: s.subject_id):
        estimate, _, _ = predict_with_trace(subject, model)
        for score, value in zip(model.score_names, estimate.scores):
            rows.append((subject.subject_id, score, value))
    _write_predictions(out / "predictions.csv", rows)
    print(f"wrote predictions for {len(cohort)} subjects to {out / 'predictions.csv'}")
    return 0


def _write_history_csv(path: Path, histories):
    fields = ["method", "fold", "iteration", "srddl_loss", "network_loss",
              "penalty", "objective", "residual", "ortho_error"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for (method, fold), history in sorted(histories.items()):
            for rec in history:
                writer.writerow([method, fold] + [
                    rec.get(k, "") if k == "iteration"
                    else (_FMT % rec[k] if k in rec else "")
                    for k in fields[2:]
                ])


def _write_attention_csv(path: Path, attention):
    # subjects x time matrix per method; shorter scans padded with nan
    rows = []
    for method in sorted(attention):
        for sid in sorted(attention[method]):
            rows.append((method, sid, attention[method][sid]))
    width = max((len(a) for _, _, a in rows), default=0)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "subject_id"] + [f"t{t}" for t in range(width)])
        for method, sid, att in rows:
            padded = list(att) + [np.nan] * (width - len(att))
            writer.writerow([method, sid] + [_FMT % v for v in padded])


def cmd_crossval(args) -> int:
    cohort = load_cohort(args.cohort)
    hyper = _hyper_from_args(args)
    methods = ("hybrid",) if args.baseline == "none" else ("hybrid", args.baseline)
    result = cross_validate(cohort, hyper, folds=args.folds, seed=args.seed,
                            methods=methods, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    header_notes = [f"# {MI_NOTE}"]
    if "pca" in methods:
        header_notes.append(f"# {DTI_WEIGHT_NOTE}")
    with (out / "metrics.csv").open("w", newline="") as fh:
        for note in header_notes:
            fh.write(note + "\n")
        writer = csv.writer(fh)
        writer.writerow(["fold", "method", "score", "split", "mae", "mi"])
        for row in result.rows:
            writer.writerow([row["fold"], row["method"], row["score"],
                             row["split"], _FMT % row["mae"], _FMT % row["mi"]])
    with (out / "metrics_pooled.csv").open("w", newline="") as fh:
        for note in header_notes:
            fh.write(note + "\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "score", "split", "mae", "mi"])
        for row in result.pooled:
            writer.writerow([row["method"], row["score"], row["split"],
                             _FMT % row["mae"], _FMT % row["mi"]])
    _write_history_csv(out / "history.csv", result.histories)
    _write_attention_csv(out / "attention.csv", result.attention)
    with (out / "predictions.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "method", "split", "subject_id", "score",
                         "predicted", "truth", "observed"])
        for rec in result.predictions:
            for j, score in enumerate(cohort.score_names):
                writer.writerow([
                    rec["fold"], rec["method"], rec["split"], rec["subject_id"],
                    score, _FMT % rec["predicted"][j], _FMT % rec["truth"][j],
                    int(rec["observed"][j]),
                ])
    meta = {"methods": list(methods), "folds": args.folds, "seed": args.seed,
            "notes": [MI_NOTE] + ([DTI_WEIGHT_NOTE] if "pca" in methods else [])}
    (out / "metrics_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    print(f"cross-validated {len(cohort)} subjects over {args.folds} folds; "
          f"outputs in {out}")
    for row in result.pooled:
        if row["split"] == "test":
            print(f"  {row['method']:>10s} {row['score']:>12s} test "
                  f"MAE={row['mae']:.4g} MI={row['mi']:.4g}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "crossval": cmd_crossval,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
