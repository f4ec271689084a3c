"""Permutation importance, importance-ranked masking, and quantization.

Importance of a feature is the mean decrease in classification accuracy
when that feature's column is shuffled across the dataset: for feature j
and K repetitions, i_j = s - (1/K) * sum_k s_{k,j}, where s is the
unperturbed score. A column the model never reads (zero fan-out weights)
or that never varies scores identically under any shuffle, so its
importance is exactly zero.

The same machinery applies one layer up ("hidden" kind): hidden unit
activations are shuffled and rescored through the output layer only.

Pruning masks fan-out weights of the lowest-importance units in place of
removing rows, keeping the model file shape-compatible. Quantization is
symmetric per-tensor fixed point: scale = max|w| / (2^(b-1) - 1), integers
round half away from zero, and an all-zero tensor takes scale 1 so the
zeros survive the round trip.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import nlu
from .nlu import MLPModel

__all__ = [
    "ImportanceReport",
    "QuantizedModel",
    "evaluate",
    "importance_from_scores",
    "permutation_importance",
    "selected_for_pruning",
    "prune",
    "quantize",
    "dequantize",
    "dequantize_infer",
    "argmax_agreement",
]

KINDS = ("feature", "hidden")
QUANT_BITS = (4, 8, 16)
_TENSORS = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class ImportanceReport:
    importances: np.ndarray   # one entry per feature or hidden unit
    baseline: float           # unperturbed accuracy s
    repeats: int              # K
    seed: int
    kind: str                 # "feature" | "hidden"
    rows: int                 # dataset size the scores were computed over

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "baseline": self.baseline,
            "repeats": self.repeats,
            "seed": self.seed,
            "rows": self.rows,
            "importances": [float(v) for v in self.importances],
        }


@dataclass(frozen=True)
class QuantizedModel:
    bits: int
    tensors: dict              # name -> int32 ndarray, original shapes
    scales: dict               # name -> float
    labels: tuple

    def __post_init__(self):
        if self.bits not in QUANT_BITS:
            raise ValueError(f"bits must be one of {QUANT_BITS}")


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def _as_matrix(model: MLPModel, dataset):
    """Dataset is (text, intent) pairs, or a prebuilt (X, y) tuple."""
    if isinstance(dataset, tuple):
        x, y = dataset
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=int)
    else:
        rows = list(dataset)
        if not rows:
            raise ValueError("empty dataset")
        x = np.stack([nlu.featurize(nlu.Utterance(text=t),
                                    dim=model.layer_sizes[0])
                      for t, _ in rows])
        y = np.array([model.labels.index(intent) for _, intent in rows])
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("dataset must provide matching non-empty x/y rows")
    return x, y


def evaluate(model: MLPModel, dataset) -> float:
    """Argmax classification accuracy in [0, 1]; deterministic."""
    x, y = _as_matrix(model, dataset)
    pred = np.argmax(model.probabilities(x), axis=1)
    return float(np.mean(pred == y))


def importance_from_scores(baseline: float, scores) -> float:
    """Mean-decrease form: i_j = s - (1/K) * sum_k s_{k,j}."""
    return float(baseline - np.mean(np.asarray(scores, dtype=float)))


def permutation_importance(model: MLPModel, dataset, repeats: int = 5,
                           seed: int = 0, kind: str = "feature",
                           permute=None) -> ImportanceReport:
    """Shuffle one column at a time, K times each, and score the damage.

    Each (column j, repetition k) draws its shuffle from an independent
    generator keyed [seed, j, k], so per-column results are reproducible
    and order-independent; parallel and serial runs agree bit for bit.
    permute(rng, n) -> index order is injectable for controlled tests.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    x, y = _as_matrix(model, dataset)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need >= 2 rows: permuting one row is the identity")
    if permute is None:
        permute = lambda rng, count: rng.permutation(count)

    if kind == "feature":
        mat = x
        def score(m):
            return float(np.mean(np.argmax(model.probabilities(m), axis=1) == y))
    else:
        mat = model.hidden(x)
        def score(m):
            logits = model.logits_from_hidden(m)
            return float(np.mean(np.argmax(logits, axis=1) == y))

    baseline = score(mat)
    width = mat.shape[1]
    importances = np.empty(width)
    for j in range(width):
        scores = []
        for k in range(repeats):
            rng = np.random.default_rng([seed, j, k])
            order = np.asarray(permute(rng, n), dtype=int)
            shuffled = mat.copy()
            shuffled[:, j] = mat[order, j]
            scores.append(score(shuffled))
        importances[j] = importance_from_scores(baseline, scores)
    return ImportanceReport(importances=importances, baseline=baseline,
                            repeats=repeats, seed=seed, kind=kind, rows=n)


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------

def selected_for_pruning(report: ImportanceReport, fraction: float) -> np.ndarray:
    """Indices of the floor(fraction * width) lowest importances, ties by
    lower index (stable sort), returned sorted ascending."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    count = int(np.floor(fraction * report.importances.size))
    order = np.argsort(report.importances, kind="stable")
    return np.sort(order[:count])


def prune(model: MLPModel, report: ImportanceReport,
          fraction: float) -> MLPModel:
    """Zero the fan-out weights of the selected units; shapes unchanged."""
    victims = selected_for_pruning(report, fraction)
    if report.kind == "feature":
        w1 = model.w1.copy()
        w1[:, victims] = 0.0
        return dataclasses.replace(model, w1=w1, train_accuracy=None)
    w2 = model.w2.copy()
    w2[:, victims] = 0.0
    return dataclasses.replace(model, w2=w2, train_accuracy=None)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def _quantize_tensor(t: np.ndarray, qmax: int):
    peak = float(np.max(np.abs(t))) if t.size else 0.0
    scale = peak / qmax if peak > 0.0 else 1.0
    q = np.copysign(np.floor(np.abs(t) / scale + 0.5), t).astype(np.int32)
    return q, scale


def quantize(model: MLPModel, bits: int = 8) -> QuantizedModel:
    if bits not in QUANT_BITS:
        raise ValueError(f"bits must be one of {QUANT_BITS}")
    qmax = (1 << (bits - 1)) - 1
    tensors, scales = {}, {}
    for name in _TENSORS:
        tensors[name], scales[name] = _quantize_tensor(getattr(model, name), qmax)
    return QuantizedModel(bits=bits, tensors=tensors, scales=scales,
                          labels=tuple(model.labels))


def dequantize(qm: QuantizedModel) -> MLPModel:
    arrays = {name: qm.tensors[name].astype(float) * qm.scales[name]
              for name in _TENSORS}
    return MLPModel(labels=qm.labels, train_accuracy=None, **arrays)


def dequantize_infer(qm: QuantizedModel, f: np.ndarray) -> nlu.IntentDistribution:
    return nlu.classify(dequantize(qm), f)


def argmax_agreement(model: MLPModel, qm: QuantizedModel, dataset) -> float:
    """Fraction of rows where float and dequantized argmax coincide."""
    x, _ = _as_matrix(model, dataset)
    a = np.argmax(model.probabilities(x), axis=1)
    b = np.argmax(dequantize(qm).probabilities(x), axis=1)
    return float(np.mean(a == b))
