"""JSON report written by ``otpower decompose`` and read by ``otpower verify``."""
from __future__ import annotations

import json

import numpy as np

from .sketch import ContractionBackend, SketchBackend
from .tpm import Decomposition

FORMAT = "otpower-report/1"


def backend_summary(backend: ContractionBackend) -> dict:
    out = {"kind": backend.kind}
    if isinstance(backend, SketchBackend):
        out["sketch_len"] = backend.sketch_len
        out["repetitions"] = backend.repetitions
        if backend.config is not None:
            out["epsilon"] = backend.config.epsilon
            out["delta"] = backend.config.delta
            out["seed"] = backend.config.seed
    return out


def build_report(
    result: Decomposition,
    backend: ContractionBackend,
    *,
    vector_offsets=None,
    timings: dict | None = None,
) -> dict:
    cfg = result.config
    report = {
        "format": FORMAT,
        "tensor": {"order": backend.order, "dim": backend.dim},
        "config": {
            "k": cfg.k,
            "T": result.T,
            "L": result.L,
            "epsilon": cfg.epsilon,
            "c0": cfg.c0,
            "c": cfg.c,
            "seed": cfg.seed,
            "guarantee_mode": cfg.guarantee_mode,
        },
        "backend": backend_summary(backend),
        "components": [
            {
                "index": i,
                "eigenvalue": float(lam),
                "vector": [float(x) for x in vec],
                "vector_offset": None if vector_offsets is None else int(vector_offsets[i]),
            }
            for i, (lam, vec) in enumerate(zip(result.eigenvalues, result.vectors))
        ],
        "traces": [tr.to_dict() for tr in result.traces],
    }
    if timings is not None:
        report["timings"] = timings
    return report


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def load_report(path) -> dict:
    with open(path) as fh:
        report = json.load(fh)
    if report.get("format") != FORMAT:
        raise ValueError(f"{path}: not an {FORMAT} file")
    return report


def report_pairs(report: dict) -> tuple[np.ndarray, np.ndarray]:
    comps = report["components"]
    lam = np.array([c["eigenvalue"] for c in comps], dtype=np.float64)
    vec = np.array([c["vector"] for c in comps], dtype=np.float64)
    return lam, vec.reshape(len(comps), -1)
