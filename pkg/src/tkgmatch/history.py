"""Extraction of the three historical structures for a query timestamp:

* query history — the most recent subgraphs of facts sharing the query's
  subject and relation (skipping timestamps with no matching fact);
* candidate history — the calendar snapshots immediately preceding the
  query time, shared by all candidate entities;
* background graph — the deduplicated union of the last k snapshots.

All structures contain only facts strictly before the query time.
"""

import bisect
from dataclasses import dataclass

import numpy as np

from .data import DataError, SnapshotGraph


@dataclass
class QueryHistory:
    entity: int
    relation: int
    t_q: int
    # oldest-to-newest (timestamp, sorted object-id array); every array non-empty
    steps: list

    def __len__(self):
        return len(self.steps)


@dataclass
class CandidateHistory:
    t_q: int
    snapshots: list  # chronological SnapshotGraphs, indices < t_q
    intervals: list  # t_q - t'_i, aligned with snapshots


@dataclass
class BackgroundGraph:
    t_q: int
    edges: np.ndarray  # (M, 3) deduplicated triples
    num_entities: int
    in_degree: np.ndarray
    isolated: np.ndarray  # entities with no incident edge


class HistoryIndex:
    """(subject, relation) -> chronological (timestamps, object sets) lookup.

    Built once over the union of all splits; extraction filters strictly
    below the query time, so nothing at or after it can leak.
    """

    def __init__(self, dataset):
        if not dataset.augmented:
            raise DataError("HistoryIndex requires an augmented dataset")
        quads = np.concatenate(list(dataset.splits.values()), axis=0)
        order = np.lexsort((quads[:, 2], quads[:, 3], quads[:, 1], quads[:, 0]))
        quads = quads[order]
        self._index = {}
        if quads.shape[0] == 0:
            return
        key_change = np.ones(quads.shape[0], dtype=bool)
        key_change[1:] = np.any(np.diff(quads[:, :2], axis=0) != 0, axis=1)
        starts = np.flatnonzero(key_change).tolist() + [quads.shape[0]]
        for a, b in zip(starts[:-1], starts[1:]):
            block = quads[a:b]
            key = (int(block[0, 0]), int(block[0, 1]))
            times, objects = [], []
            t_change = np.ones(block.shape[0], dtype=bool)
            t_change[1:] = np.diff(block[:, 3]) != 0
            t_starts = np.flatnonzero(t_change).tolist() + [block.shape[0]]
            for i, j in zip(t_starts[:-1], t_starts[1:]):
                times.append(int(block[i, 3]))
                objects.append(np.unique(block[i:j, 2]))
            self._index[key] = (times, objects)

    def query_history(self, entity, relation, t_q, m):
        times_objects = self._index.get((int(entity), int(relation)))
        steps = []
        if times_objects is not None:
            times, objects = times_objects
            hi = bisect.bisect_left(times, t_q)
            lo = max(0, hi - m)
            steps = [(times[i], objects[i]) for i in range(lo, hi)]
        return QueryHistory(int(entity), int(relation), int(t_q), steps)


def extract_query_history(query, snapshots, m, index=None):
    """The m most recent pre-query subgraphs with the query's (subject, relation).

    ``query`` is (entity, relation, t_q). With ``index`` given, uses the
    prebuilt lookup; otherwise scans the snapshot map backwards.
    """
    entity, relation, t_q = (int(x) for x in query)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if index is not None:
        return index.query_history(entity, relation, t_q, m)
    steps = []
    for t in range(t_q - 1, -1, -1):
        snap = snapshots.get(t)
        if snap is None or snap.num_edges == 0:
            continue
        edges = snap.edges
        mask = (edges[:, 0] == entity) & (edges[:, 1] == relation)
        if mask.any():
            steps.append((t, np.unique(edges[mask, 2])))
            if len(steps) == m:
                break
    steps.reverse()
    return QueryHistory(entity, relation, t_q, steps)


def extract_candidate_history(snapshots, t_q, n, num_entities=None):
    """The min(n, t_q) calendar snapshots immediately before t_q.

    Empty snapshots stay in the sequence; entities without edges get the
    self-only update inside the encoder.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    t_q = int(t_q)
    first = max(0, t_q - n)
    snaps, intervals = [], []
    for t in range(first, t_q):
        snap = snapshots.get(t)
        if snap is None:
            if num_entities is None:
                raise DataError(f"snapshot {t} missing and num_entities unknown")
            snap = SnapshotGraph(
                index=t, edges=np.empty((0, 3), dtype=np.int64), num_entities=num_entities
            )
        snaps.append(snap)
        intervals.append(t_q - t)
    return CandidateHistory(t_q=t_q, snapshots=snaps, intervals=intervals)


def build_background_graph(snapshots, t_q, k, num_entities):
    """Deduplicated union of the snapshots in [max(0, t_q - k), t_q)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    t_q = int(t_q)
    parts = [
        snapshots[t].edges
        for t in range(max(0, t_q - k), t_q)
        if t in snapshots and snapshots[t].num_edges
    ]
    if parts:
        edges = np.unique(np.concatenate(parts, axis=0), axis=0)
    else:
        edges = np.empty((0, 3), dtype=np.int64)
    in_degree = np.bincount(edges[:, 2], minlength=num_entities).astype(np.int64)
    touched = np.zeros(num_entities, dtype=bool)
    touched[edges[:, 0]] = True
    touched[edges[:, 2]] = True
    return BackgroundGraph(
        t_q=t_q,
        edges=edges,
        num_entities=num_entities,
        in_degree=in_degree,
        isolated=np.flatnonzero(~touched),
    )


@dataclass
class IntervalStats:
    split: str
    mean_dt: float  # mean of t_q - t_1 over queries with non-empty query history
    mean_dt_prime: float  # mean of t_q - t'_1 over all queries
    num_queries: int
    num_with_history: int


def history_interval_stats(dataset, m, n, split, index=None):
    """Average maximum time intervals reached by the two historical structures."""
    quads = dataset.split(split)
    if quads.shape[0] == 0:
        raise DataError(f"split {split!r} has no queries")
    if index is None:
        index = HistoryIndex(dataset)
    dts = []
    dt_primes = np.minimum(quads[:, 3], n)
    for s, r, _, t in quads:
        qh = index.query_history(s, r, t, m)
        if qh.steps:
            dts.append(t - qh.steps[0][0])
    return IntervalStats(
        split=split,
        mean_dt=float(np.mean(dts)) if dts else 0.0,
        mean_dt_prime=float(np.mean(dt_primes)),
        num_queries=int(quads.shape[0]),
        num_with_history=len(dts),
    )
