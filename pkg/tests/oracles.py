"""Brute-force reference computations shared by the unit and acceptance tests."""

import itertools

import numpy as np


def ap_prefix_precision(scores, labels) -> float:
    """Mean over positives of the precision at that positive's score threshold."""
    scores, labels = list(map(float, scores)), list(map(int, labels))
    vals = []
    for s, y in zip(scores, labels):
        if y:
            above = [l for t, l in zip(scores, labels) if t >= s]
            vals.append(sum(above) / len(above))
    return sum(vals) / len(vals)


def auc_pairwise(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def compositions(n):
    """Every way to cut n ranked slots into consecutive tie groups."""
    for cuts in itertools.product([False, True], repeat=n - 1):
        sizes, run = [], 1
        for c in cuts:
            if c:
                sizes.append(run)
                run = 1
            else:
                run += 1
        sizes.append(run)
        yield sizes


def all_cases(max_len=8, seed=0):
    """All tie structures x all labelings for lengths 1..max_len.

    Metrics depend on scores only through their order and ties, so the
    tie-group compositions cover every score list up to relabelling; a
    fixed shuffle per length exercises the sorting path too.
    """
    rng = np.random.default_rng(seed)
    for n in range(1, max_len + 1):
        perm = rng.permutation(n)
        for sizes in compositions(n):
            scores = np.repeat(np.linspace(1.0, 0.0, len(sizes)), sizes)[perm]
            for labels in itertools.product([0, 1], repeat=n):
                yield scores, np.array(labels)
