"""External clustering agreement scores: NMI, ARI, AMI.

All three are computed from the label/prediction contingency table with natural
logarithms.  NMI normalizes mutual information by the geometric mean of the two
partition entropies; AMI subtracts the exact hypergeometric expected mutual
information and normalizes by the arithmetic mean of the entropies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass
class ContingencyTable:
    """Joint counts of (label, prediction) pairs.

    Attributes:
      counts: (R, S) nonnegative integer matrix summing to n.
      row_values / col_values: the distinct labels backing each axis.
    """

    counts: np.ndarray
    row_values: np.ndarray
    col_values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_labels(cls, labels, preds) -> "ContingencyTable":
        labels = np.asarray(labels)
        preds = np.asarray(preds)
        if labels.shape != preds.shape or labels.ndim != 1:
            raise ValueError("labels and predictions must be equal-length vectors")
        if labels.size < 1:
            raise ValueError("need at least one point")
        row_values, ri = np.unique(labels, return_inverse=True)
        col_values, ci = np.unique(preds, return_inverse=True)
        counts = np.zeros((row_values.size, col_values.size), dtype=np.int64)
        np.add.at(counts, (ri, ci), 1)
        return cls(counts, row_values, col_values)

    def is_identical_partition(self) -> bool:
        """True when the two partitions are equal up to relabeling."""
        return bool(
            np.all((self.counts > 0).sum(axis=0) == 1)
            and np.all((self.counts > 0).sum(axis=1) == 1)
        )


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def _mutual_information(table: ContingencyTable) -> float:
    n = table.n
    nz = table.counts[table.counts > 0].astype(float)
    a = table.counts.sum(axis=1).astype(float)
    b = table.counts.sum(axis=0).astype(float)
    outer = np.outer(a, b)[table.counts > 0]
    return float(np.sum(nz / n * (np.log(nz * n) - np.log(outer))))


def nmi(labels, preds) -> float:
    """Normalized mutual information MI / sqrt(H(labels) H(preds)) in [0, 1].

    Both partitions trivial (single cluster each) scores 1; one-sided trivial
    partitions score 0.
    """
    t = ContingencyTable.from_labels(labels, preds)
    h_l = _entropy(t.counts.sum(axis=1), t.n)
    h_p = _entropy(t.counts.sum(axis=0), t.n)
    if h_l == 0.0 and h_p == 0.0:
        return 1.0
    if h_l == 0.0 or h_p == 0.0:
        return 0.0
    mi = _mutual_information(t)
    return float(np.clip(mi / np.sqrt(h_l * h_p), 0.0, 1.0))


def ari(labels, preds) -> float:
    """Adjusted Rand index by pair counting; 1 for identical partitions."""
    t = ContingencyTable.from_labels(labels, preds)
    if t.n < 2:
        raise ValueError("ARI needs at least two points")

    def comb2(x):
        # exact integer pair counts so ratios of small integers come out exact
        return int(sum(int(v) * (int(v) - 1) // 2 for v in np.asarray(x).ravel()))

    sum_ij = comb2(t.counts)
    sum_a = comb2(t.counts.sum(axis=1))
    sum_b = comb2(t.counts.sum(axis=0))
    total = comb2([t.n])
    # (index - expected) / (max - expected), cleared of the 1/total factors
    num = 2 * sum_ij * total - 2 * sum_a * sum_b
    den = (sum_a + sum_b) * total - 2 * sum_a * sum_b
    if den == 0:
        return 1.0 if t.is_identical_partition() else 0.0
    return float(num / den)


def expected_mutual_information(table: ContingencyTable) -> float:
    """Exact E[MI] under the hypergeometric model of random tables with the
    observed marginals.  Quadratic in the cluster counts, fine for a few
    thousand points."""
    n = table.n
    a = table.counts.sum(axis=1).astype(int)
    b = table.counts.sum(axis=0).astype(int)
    log_n = np.log(n)
    gln_n = gammaln(n + 1)
    emi = 0.0
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1)
            term = nij / n * (np.log(nij) + log_n - np.log(ai) - np.log(bj))
            log_prob = (
                gammaln(ai + 1)
                + gammaln(bj + 1)
                + gammaln(n - ai + 1)
                + gammaln(n - bj + 1)
                - gln_n
                - gammaln(nij + 1)
                - gammaln(ai - nij + 1)
                - gammaln(bj - nij + 1)
                - gammaln(n - ai - bj + nij + 1)
            )
            emi += float(np.sum(term * np.exp(log_prob)))
    return emi


def ami(labels, preds) -> float:
    """Adjusted mutual information (MI - E[MI]) / (mean entropy - E[MI])."""
    t = ContingencyTable.from_labels(labels, preds)
    if t.n < 2:
        raise ValueError("AMI needs at least two points")
    h_l = _entropy(t.counts.sum(axis=1), t.n)
    h_p = _entropy(t.counts.sum(axis=0), t.n)
    mi = _mutual_information(t)
    emi = expected_mutual_information(t)
    denom = 0.5 * (h_l + h_p) - emi
    if abs(denom) < 1e-15:
        return 1.0 if t.is_identical_partition() else 0.0
    return float((mi - emi) / denom)
