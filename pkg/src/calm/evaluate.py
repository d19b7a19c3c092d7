"""Text-to-video retrieval metrics: R@k, mean rank, and an anchor report.

Ranks are 1-based and optimistic under ties: a gallery item only worsens a
query's rank if it scores strictly higher than the ground truth. Metrics
therefore depend on scores only through their order and are invariant
under any strictly increasing transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, EmptyInputError


@dataclass
class SimilarityMatrix:
    """Query-by-gallery scores plus each query's true gallery index."""

    scores: np.ndarray
    ground_truth: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.ground_truth = np.asarray(self.ground_truth, dtype=np.int64)
        if self.scores.ndim != 2:
            raise ContractError(f"scores must be [Q, G], got shape {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise ContractError("scores contain NaN/Inf")
        q, g = self.scores.shape
        if self.ground_truth.shape != (q,):
            raise ContractError(
                f"ground truth must have one index per query, got {self.ground_truth.shape}"
            )
        if ((self.ground_truth < 0) | (self.ground_truth >= g)).any():
            raise ContractError("ground-truth index out of gallery range")


def rank_of_truth(sim: SimilarityMatrix) -> np.ndarray:
    """1 + number of gallery items strictly beating the truth, per query."""
    truth_scores = sim.scores[np.arange(sim.scores.shape[0]), sim.ground_truth]
    return 1 + (sim.scores > truth_scores[:, None]).sum(axis=1)


def recall_at_k(ranks: np.ndarray, k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EmptyInputError("recall over empty rank list")
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    return float(100.0 * (ranks <= k).mean())


def mean_rank(ranks: np.ndarray) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EmptyInputError("mean rank over empty rank list")
    return float(ranks.mean())


def retrieval_metrics(sim: SimilarityMatrix) -> dict:
    ranks = rank_of_truth(sim)
    return {
        "r1": recall_at_k(ranks, 1),
        "r5": recall_at_k(ranks, 5),
        "r10": recall_at_k(ranks, 10),
        "mnr": mean_rank(ranks),
        "n_queries": int(ranks.size),
    }


def top_anchor_report(probs: np.ndarray, labels: list[str], k: int) -> list[tuple[str, float]]:
    """Top-k (label, probability) pairs, descending, ties to the lower index."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if len(labels) != p.size:
        raise ContractError(f"{len(labels)} labels for {p.size} probabilities")
    if k > p.size:
        raise ContractError(f"asked for top {k} of {p.size} anchors")
    order = np.lexsort((np.arange(p.size), -p))
    return [(labels[i], float(p[i])) for i in order[:k]]
