"""Time-aware filtered ranking metrics: MRR and Hits@{1,3,10}.

The filtered setting removes, from a query's competitor set, only the other
true answers occurring at the same timestamp; answers at other timestamps
stay in. Ties get the mean rank of the tied block.
"""

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, stable_sigmoid
from .history import HistoryIndex
from .matcher import forward_timestamp

HIT_LEVELS = (1, 3, 10)


@dataclass
class EvalReport:
    split: str
    filter_mode: str  # "raw" or "time-aware"
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    num_queries: int
    ranks: np.ndarray = None  # optional per-query dump, query order

    def as_row(self):
        return {
            "split": self.split,
            "mrr": self.mrr,
            "h1": self.hits1,
            "h3": self.hits3,
            "h10": self.hits10,
        }


def truth_index(dataset):
    """(subject, relation, t) -> sorted array of all true objects, across splits."""
    quads = np.concatenate(list(dataset.splits.values()), axis=0)
    order = np.lexsort((quads[:, 2], quads[:, 3], quads[:, 1], quads[:, 0]))
    quads = quads[order]
    out = {}
    if quads.shape[0] == 0:
        return out
    change = np.ones(quads.shape[0], dtype=bool)
    change[1:] = np.any(np.diff(quads[:, [0, 1, 3]], axis=0) != 0, axis=1)
    starts = np.flatnonzero(change).tolist() + [quads.shape[0]]
    for a, b in zip(starts[:-1], starts[1:]):
        s, r, _, t = quads[a]
        out[(int(s), int(r), int(t))] = np.unique(quads[a:b, 2])
    return out


def rank_with_filter(scores, target, truth_at_t, filtered=True):
    """Rank of ``target`` after removing the other true answers at this time.

    Tied scores share the mean rank of their block, so e.g. a target tied
    with one competitor at the top ranks 1.5.
    """
    scores = np.asarray(scores)
    target = int(target)
    if not 0 <= target < scores.shape[0]:
        raise ValueError(f"target {target} outside vocabulary of {scores.shape[0]}")
    keep = np.ones(scores.shape[0], dtype=bool)
    if filtered and truth_at_t is not None and len(truth_at_t):
        keep[np.asarray(truth_at_t, dtype=np.int64)] = False
    keep[target] = True
    competitors = scores[keep]
    target_score = scores[target]
    greater = int(np.count_nonzero(competitors > target_score))
    tied = int(np.count_nonzero(competitors == target_score)) - 1
    return greater + 1 + tied / 2.0


def _summarize(split, filter_mode, ranks, keep_ranks):
    ranks = np.asarray(ranks, dtype=np.float64)
    return EvalReport(
        split=split,
        filter_mode=filter_mode,
        mrr=float(np.mean(1.0 / ranks)),
        hits1=float(np.mean(ranks <= 1)),
        hits3=float(np.mean(ranks <= 3)),
        hits10=float(np.mean(ranks <= 10)),
        num_queries=int(ranks.size),
        ranks=ranks if keep_ranks else None,
    )


def evaluate(
    dataset,
    state,
    split,
    filter_mode="time-aware",
    index=None,
    truth=None,
    keep_ranks=False,
):
    """Rank every query of a split (objects and inverse-relation subjects)."""
    if filter_mode not in ("raw", "time-aware"):
        raise ValueError(f"unknown filter mode {filter_mode!r}")
    quads = dataset.split(split)
    if quads.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    if index is None:
        index = HistoryIndex(dataset)
    filtered = filter_mode == "time-aware"
    if filtered and truth is None:
        truth = truth_index(dataset)
    ranks = []
    for t in np.unique(quads[:, 3]):
        batch = quads[quads[:, 3] == t]
        tape = Tape()
        logits_node, targets = forward_timestamp(
            tape, state, dataset, index, int(t), batch, train=False
        )
        scores = stable_sigmoid(tape.value(logits_node))
        for i, (s, r, o, _) in enumerate(batch):
            others = truth[(int(s), int(r), int(t))] if filtered else None
            ranks.append(rank_with_filter(scores[i], o, others, filtered))
    return _summarize(split, filter_mode, ranks, keep_ranks)


def predict_topk(dataset, state, split, topk=10, index=None):
    """Yield (query, [(entity, score), ...]) with scores strictly ordered by
    descending sigmoid score (ties broken by entity id)."""
    quads = dataset.split(split)
    if index is None:
        index = HistoryIndex(dataset)
    for t in np.unique(quads[:, 3]):
        batch = quads[quads[:, 3] == t]
        tape = Tape()
        logits_node, _ = forward_timestamp(
            tape, state, dataset, index, int(t), batch, train=False
        )
        scores = stable_sigmoid(tape.value(logits_node))
        for i, (s, r, _, _) in enumerate(batch):
            best = np.argsort(-scores[i], kind="stable")[:topk]
            yield (int(s), int(r), int(t)), [(int(e), float(scores[i][e])) for e in best]


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start
