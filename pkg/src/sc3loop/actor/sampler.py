"""Sequential generation of one-to-one pairings from column scores."""
import numpy as np


def selection_probabilities(scores_k, candidates, selected):
    """Renormalized scores of actuator k over its unselected candidates.

    Returns a vector over all sensors; entries outside ``candidates`` or in
    ``selected`` are zero. An all-zero result means a dead end.
    """
    w = np.zeros(len(scores_k))
    idx = [s for s in candidates if s not in selected]
    if idx:
        w[idx] = np.asarray(scores_k, dtype=float)[idx]
    total = w.sum()
    return w / total if total > 0 else w


def _attempt(scores, effective_sets, rng, pick):
    K = len(effective_sets)
    order = rng.permutation(K)
    selected = set()
    pairing = [None] * K
    for k in order:
        p = selection_probabilities(scores[:, k], effective_sets[k], selected)
        if not p.sum() > 0:
            return None
        s = pick(p, rng)
        pairing[k] = int(s)
        selected.add(int(s))
    return tuple(pairing)


def _draw(p, rng):
    # inverse-CDF draw; the last positive entry absorbs rounding
    u = rng.random()
    c = np.cumsum(p)
    s = int(np.searchsorted(c, u * c[-1], side="right"))
    nz = np.flatnonzero(p)
    return min(s, nz[-1]) if p[min(s, len(p) - 1)] > 0 else nz[np.searchsorted(nz, s) % len(nz)]


def sample_pairings(scores, effective_sets, I, N_max, rng):
    """Up to I distinct pairings, each from at most N_max attempts.

    Every attempt shuffles the actuator order and lets each actuator draw a
    sensor in proportion to its scores among the unselected compatible
    sensors. Dead ends and duplicates use up attempts. Returns
    (pairings, shortfall) where shortfall is True if fewer than I were found.
    """
    if I < 1 or N_max < 1:
        raise ValueError("I and N_max must be positive")
    scores = np.asarray(scores, dtype=float)
    found, seen = [], set()
    for _ in range(I):
        for _ in range(N_max):
            cand = _attempt(scores, effective_sets, rng, _draw)
            if cand is not None and cand not in seen:
                seen.add(cand)
                found.append(cand)
                break
    return found, len(found) < I


def greedy_pairing(scores, effective_sets, rng):
    """Each actuator, in a shuffled order, takes its best unselected sensor."""
    return _attempt(np.asarray(scores, dtype=float), effective_sets, rng,
                    lambda p, _: int(np.argmax(p)))
