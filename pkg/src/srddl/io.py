"""Cohort directory serialization.

Layout (all plain CSV/JSON):

    <dir>/manifest.json        subjects, P, M, score names, optional window block
    <dir>/<subject>/gammas/<t>.csv      one P x P matrix per window, or
    <dir>/<subject>/timeseries.csv      raw P x T_raw signals (windowed on load)
    <dir>/<subject>/adjacency.csv       binary structural graph (absent if missing)
    <dir>/<subject>/scores.json         score values (null = unobserved) + mask

Matrices are written row-major, header-free, with 17 significant digits so a
save/load round trip is bit-exact for float64.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import (
    Cohort,
    CohortFormatError,
    DynamicConnectome,
    RoiTimeSeries,
    SeverityVector,
    StructuralLaplacian,
    Subject,
    build_normalized_laplacian,
    connectome_from_timeseries,
)

_FMT = "%.17g"


def _write_matrix(path: Path, mat):
    np.savetxt(path, np.atleast_2d(np.asarray(mat, dtype=float)), fmt=_FMT, delimiter=",")


def _read_matrix(path: Path) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"expected matrix file {path}")
    try:
        mat = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise CohortFormatError(f"malformed CSV {path}: {exc}") from exc
    return mat


def save_cohort(cohort: Cohort, directory) -> Path:
    """Write a cohort directory; returns the manifest path."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "p": cohort.p,
        "m": cohort.m,
        "score_names": list(cohort.score_names),
        "subjects": cohort.subject_ids,
    }
    for subject in cohort.subjects:
        sdir = root / subject.subject_id
        gdir = sdir / "gammas"
        gdir.mkdir(parents=True, exist_ok=True)
        for t, gamma in enumerate(subject.connectome.gammas):
            _write_matrix(gdir / f"{t:04d}.csv", gamma)
        if not subject.structure.is_missing:
            _write_matrix(sdir / "adjacency.csv", subject.structure.adjacency)
            _write_matrix(sdir / "laplacian.csv", subject.structure.laplacian)
            if subject.structure.imputed:
                (sdir / "adjacency.imputed").write_text("1\n")
        sev = subject.severity
        payload = {
            "values": [
                float(v) if obs else None for v, obs in zip(sev.scores, sev.observed)
            ],
            "observed": [bool(b) for b in sev.observed],
            "names": list(sev.score_names),
        }
        (sdir / "scores.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path


def _load_severity(sdir: Path, score_names) -> SeverityVector:
    spath = sdir / "scores.json"
    if not spath.exists():
        raise FileNotFoundError(f"expected scores file {spath}")
    try:
        payload = json.loads(spath.read_text())
    except json.JSONDecodeError as exc:
        raise CohortFormatError(f"malformed JSON {spath}: {exc}") from exc
    observed = np.asarray(payload["observed"], dtype=bool)
    values = np.array(
        [np.nan if v is None else float(v) for v in payload["values"]], dtype=float
    )
    names = tuple(payload.get("names", score_names))
    if names != tuple(score_names):
        raise CohortFormatError(f"{spath}: score names disagree with manifest")
    return SeverityVector(scores=values, observed=observed, score_names=names)


def _load_connectome(sdir: Path, sid: str, window) -> DynamicConnectome:
    gdir = sdir / "gammas"
    ts_path = sdir / "timeseries.csv"
    if gdir.is_dir():
        files = sorted(gdir.glob("*.csv"))
        if not files:
            raise CohortFormatError(f"{gdir} contains no window matrices")
        gammas = np.stack([_read_matrix(f) for f in files])
        return DynamicConnectome(subject_id=sid, gammas=gammas)
    if ts_path.exists():
        if window is None:
            raise CohortFormatError(
                f"{sid}: timeseries.csv present but manifest has no window block"
            )
        series = RoiTimeSeries(subject_id=sid, samples=_read_matrix(ts_path))
        return connectome_from_timeseries(
            series,
            window_length=int(window["length"]),
            stride=int(window["stride"]),
            residualize=bool(window.get("residualize", True)),
        )
    raise FileNotFoundError(f"{sid}: neither {gdir} nor {ts_path} exists")


def load_cohort(manifest_path) -> Cohort:
    """Load a cohort directory written by :func:`save_cohort`.

    ``manifest_path`` may point at the manifest file or its directory.
    Subjects with a ``timeseries.csv`` are windowed using the manifest's
    window block (length, stride, residualize).
    """
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CohortFormatError(f"malformed manifest {path}: {exc}") from exc
    root = path.parent
    p = int(manifest["p"])
    m = int(manifest["m"])
    score_names = tuple(manifest["score_names"])
    window = manifest.get("window")

    subjects = []
    for sid in manifest["subjects"]:
        sdir = root / sid
        if not sdir.is_dir():
            raise FileNotFoundError(f"subject directory missing: {sdir}")
        connectome = _load_connectome(sdir, sid, window)
        if connectome.p != p:
            raise CohortFormatError(
                f"{sid}: matrices are {connectome.p}x{connectome.p} but manifest "
                f"declares P={p}"
            )
        apath = sdir / "adjacency.csv"
        if apath.exists():
            adjacency = _read_matrix(apath)
            imputed = (sdir / "adjacency.imputed").exists()
            lap_path = sdir / "laplacian.csv"
            if lap_path.exists():
                structure = StructuralLaplacian(
                    subject_id=sid,
                    laplacian=_read_matrix(lap_path),
                    adjacency=adjacency,
                    imputed=imputed,
                )
            else:
                structure = build_normalized_laplacian(
                    adjacency, subject_id=sid, imputed=imputed
                )
        else:
            structure = StructuralLaplacian.missing(sid)
        severity = _load_severity(sdir, score_names)
        if severity.m != m:
            raise CohortFormatError(f"{sid}: {severity.m} scores, manifest says {m}")
        subjects.append(Subject(connectome=connectome, structure=structure,
                                severity=severity))
    return Cohort(subjects, p=p, m=m, score_names=score_names)
