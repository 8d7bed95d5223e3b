"""Observation orderings and nearest-neighbor conditioning sets.

Three orderings are provided: plain max-min, a censored-aware variant
(non-censored block first), and an observations-then-predictions layout.
`conditioning_sets` selects, for each position, its nearest eligible
predecessors. All tie-breaks go to the smaller original index, so every
function here is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DataError


@dataclass(frozen=True)
class NeighborSets:
    """A processing order plus per-position conditioning sets.

    perm[i] is the original index processed at position i. sets[i] holds
    position indices (all < i), at most M of them. eligible[i] says whether
    position i may appear in later conditioning sets.
    """

    perm: np.ndarray
    sets: list
    M: int
    eligible: np.ndarray

    @property
    def n(self):
        return self.perm.shape[0]


def maxmin_order(sites):
    """Greedy max-min ordering of sites.

    The first point is the one farthest from the centroid; each later point
    maximizes its minimum distance to the points already chosen. Ties break
    to the smaller original index. Returns an index permutation.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim != 2 or sites.shape[0] == 0:
        raise DataError("maxmin_order needs a non-empty (n, 2) site array")
    n = sites.shape[0]
    centroid = sites.mean(axis=0)
    d2c = ((sites - centroid) ** 2).sum(axis=1)
    first = int(np.argmax(d2c))  # argmax returns the first (smallest) index on ties
    order = np.empty(n, dtype=np.int64)
    order[0] = first
    mind2 = ((sites - sites[first]) ** 2).sum(axis=1)
    mind2[first] = -1.0  # selected sentinel
    for k in range(1, n):
        nxt = int(np.argmax(mind2))
        order[k] = nxt
        d2 = ((sites - sites[nxt]) ** 2).sum(axis=1)
        np.minimum(mind2, d2, out=mind2)
        mind2[nxt] = -1.0
    return order


def censored_aware_order(sites, censored):
    """Non-censored sites first in max-min order, censored after by index."""
    sites = np.asarray(sites, dtype=float)
    censored = np.asarray(censored, dtype=bool)
    obs_idx = np.nonzero(~censored)[0]
    if obs_idx.size == 0:
        raise DataError("censored_aware_order requires at least one non-censored row")
    cen_idx = np.nonzero(censored)[0]
    obs_order = obs_idx[maxmin_order(sites[obs_idx])]
    return np.concatenate([obs_order, cen_idx])


def prediction_order(obs_sites, pred_sites):
    """Stacked ordering with all observations before all predictions.

    Indices 0..n_O-1 refer to obs_sites rows, n_O..n_O+n_P-1 to pred_sites
    rows; each block is max-min ordered internally.
    """
    obs_sites = np.asarray(obs_sites, dtype=float)
    pred_sites = np.asarray(pred_sites, dtype=float)
    if obs_sites.shape[0] == 0 or pred_sites.shape[0] == 0:
        raise DataError("prediction_order needs non-empty observation and prediction blocks")
    n_o = obs_sites.shape[0]
    return np.concatenate([maxmin_order(obs_sites),
                           n_o + maxmin_order(pred_sites)])


def conditioning_sets(sites, perm, M, eligible=None):
    """Nearest eligible predecessors for every position in the order.

    Parameters
    ----------
    sites : (n, 2) array of original-index coordinates.
    perm : processing order (original indices).
    M : maximum conditioning-set size.
    eligible : optional length-n bool array over POSITIONS. Position i can
        only enter sets[j] for j > i when eligible[i] is True. Default: all
        positions eligible.

    Returns a NeighborSets whose sets hold position indices sorted
    ascending; distance ties break to the smaller position (hence smaller
    original index within the tied group is impossible to distinguish here
    — position order inherits the deterministic ordering, so smaller
    position wins).
    """
    sites = np.asarray(sites, dtype=float)
    perm = np.asarray(perm, dtype=np.int64)
    n = perm.shape[0]
    if M < 1:
        raise DataError("M must be >= 1")
    if np.sort(perm).tolist() != list(range(n)):
        raise DataError("perm is not a permutation of 0..n-1")
    if eligible is None:
        elig = np.ones(n, dtype=bool)
    else:
        elig = np.asarray(eligible, dtype=bool)
        if elig.shape != (n,):
            raise DataError("eligible mask must have length n")
    coords = sites[perm]  # position order
    sets = []
    cand = []  # positions of eligible predecessors, ascending
    cand_xy = []
    for i in range(n):
        if not cand:
            sets.append(np.empty(0, dtype=np.int64))
        else:
            xy = np.asarray(cand_xy)
            d2 = ((xy - coords[i]) ** 2).sum(axis=1)
            if len(cand) <= M:
                pick = np.arange(len(cand))
            else:
                # sort by (distance, position) so ties go to earlier positions
                pick = np.lexsort((np.arange(len(cand)), d2))[:M]
            chosen = np.asarray(cand, dtype=np.int64)[pick]
            sets.append(np.sort(chosen))
        if elig[i]:
            cand.append(i)
            cand_xy.append(coords[i])
    return NeighborSets(perm=perm, sets=sets, M=int(M), eligible=elig)


def response_neighbor_sets(dataset, M):
    """Censored-aware order with conditioning restricted to non-censored rows."""
    perm = censored_aware_order(dataset.sites, dataset.censored)
    eligible = ~dataset.censored[perm]
    return conditioning_sets(dataset.sites, perm, M, eligible)


def latent_neighbor_sets(sites, M):
    """Plain max-min order, no eligibility restriction (latent-field paths)."""
    sites = np.asarray(sites, dtype=float)
    perm = maxmin_order(sites)
    return conditioning_sets(sites, perm, M)
