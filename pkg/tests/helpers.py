"""Shared fixtures: random segment data and a loop-based row oracle."""
import numpy as np

from adpt.adpcore import SegmentData
from adpt.polybasis import basis_size


def random_segments(rng, n, m, d, K):
    n1, n2 = basis_size(n, d + 1), basis_size(n, d)
    segs = []
    for _ in range(K):
        F = rng.normal(size=(n2, n2))
        segs.append(SegmentData(rng.normal(size=n1), float(rng.uniform(0, 2)),
                                float(rng.uniform(0, 2)), rng.normal(size=(m, n2)),
                                rng.normal(size=(m, n2)), F @ F.T))
    return segs


def row_residual(seg, c, W, R, W_prev=None):
    """Per-segment equation written out with explicit index sums."""
    m, n2 = W.shape
    lhs = sum(c[j] * seg.phi_jump[j] for j in range(c.size))
    if W_prev is None:
        lhs += 2 * sum(W[j, l] * seg.int_alpha[j, l] for j in range(m) for l in range(n2))
        rhs = -(seg.int_q + seg.int_u0Ru0)
    else:
        for j in range(m):
            for l in range(n2):
                corr = sum(R[j, a] * W_prev[a, p] * seg.int_gamma[p, l]
                           for a in range(m) for p in range(n2))
                lhs += 2 * W[j, l] * (seg.int_beta[j, l] - corr)
        rhs = -seg.int_q - sum(W_prev[a, p] * R[a, b] * W_prev[b, l] * seg.int_gamma[p, l]
                               for a in range(m) for b in range(m)
                               for p in range(n2) for l in range(n2))
    return lhs - rhs


ACCEPTANCE = {}


def record(number, ok, detail):
    """Log one acceptance criterion outcome (also shown in the pytest summary)."""
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok
