"""Convolutional matching function and the end-to-end scoring pipeline.

A query is scored against every entity: the query representation is summed
with the candidate-encoder row of the query entity, stacked with the query
relation row into a 2 x d map, convolved width-preservingly, flattened and
projected back to d, then dotted against all candidate rows. Sigmoid scores
are reported; training minimizes softmax cross-entropy on the same logits
(the two orderings are identical, sigmoid being strictly monotone).
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import stable_sigmoid
from .encoders import encode_background, encode_candidates, encode_queries
from .history import build_background_graph, extract_candidate_history


@dataclass
class ScoreVector:
    t_q: int
    query: tuple  # (subject, relation, t_q)
    logits: np.ndarray  # (num_entities,)
    scores: np.ndarray  # sigmoid(logits), same argsort as logits

    @classmethod
    def from_logits(cls, t_q, query, logits):
        logits = np.asarray(logits, dtype=np.float64)
        return cls(t_q=int(t_q), query=tuple(int(x) for x in query), logits=logits,
                   scores=stable_sigmoid(logits))


def conv_trans_e(tape, state, combined, rel, train=False):
    """conv -> flatten -> fully-connected; accepts vector or batched nodes."""
    lifted = tape.value(combined).ndim == 1
    if lifted:
        combined = tape.tile_rows(combined, 1)
    if tape.value(rel).ndim == 1:
        rel = tape.tile_rows(rel, 1)
    stacked = tape.stack_pair(combined, rel)  # (B, 2, d)
    conv = tape.conv1d(stacked, state.leaf(tape, "conv_kernels"))  # (B, K, d)
    flat = tape.dropout(tape.flatten(conv), state.config.dropout, train)
    out = tape.matmul(flat, state.leaf(tape, "conv_fc"))  # (B, d)
    return tape.flatten(out) if lifted else out


def score_all(tape, state, h_q, h_eq, r_q, candidates, train=False):
    """Logit vector over all entities for one query (sigmoid applied by the
    caller via ScoreVector; ranking is unchanged either way)."""
    num_rel = state.params["rel_emb"].tensor.data.shape[0]
    if not 0 <= int(r_q) < num_rel:
        raise ValueError(f"relation id {r_q} out of range [0, {num_rel})")
    rel = tape.flatten(tape.gather_rows(state.leaf(tape, "rel_emb"), [int(r_q)]))
    combined = tape.add(h_q, h_eq)
    weight = conv_trans_e(tape, state, combined, rel, train)
    return tape.rows_dot_vector(candidates, weight)


def score_batch(tape, state, h_q, h_eq, relations, candidates, train=False):
    """(B, num_entities) logits for a batch of queries sharing one timestamp."""
    rel_rows = tape.gather_rows(state.leaf(tape, "rel_emb"), relations)
    combined = tape.add(h_q, h_eq)
    weights = conv_trans_e(tape, state, combined, rel_rows, train)
    return tape.matmul(weights, tape.transpose(candidates))


def loss(tape, logits, target):
    """Softmax cross-entropy; with batched logits, summed over the batch."""
    return tape.cross_entropy(logits, target)


def forward_timestamp(tape, state, dataset, index, t_q, queries, train=False):
    """Score every query at one timestamp; returns (logits node, targets).

    ``queries`` is an (B, 4) slice of an augmented split at timestamp t_q.
    Honors the ablation toggles: without the query encoder the query rep is
    the candidate row of the query entity; without the candidate encoder the
    scores come from a fully-connected readout of the query rep.
    """
    cfg = state.config
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 4)
    subjects, relations, targets = queries[:, 0], queries[:, 1], queries[:, 2]
    snapshots = dataset.snapshots

    if cfg.disable_background:
        e_node = encode_background(tape, state, None, train)
    else:
        bg = build_background_graph(snapshots, t_q, cfg.k, dataset.num_entities)
        e_node = encode_background(tape, state, bg, train)

    h_cand = None
    if not cfg.disable_candidate:
        ch = extract_candidate_history(snapshots, t_q, cfg.n, dataset.num_entities)
        h_cand = encode_candidates(tape, state, e_node, ch, train)

    if cfg.disable_query:
        h_q = tape.gather_rows(h_cand, subjects)
    else:
        histories = [
            index.query_history(s, r, t_q, cfg.m) for s, r in zip(subjects, relations)
        ]
        h_q = encode_queries(tape, state, e_node, histories, train)

    if cfg.disable_candidate:
        logits = tape.matmul(h_q, state.leaf(tape, "score_fc"))
    else:
        h_eq = tape.gather_rows(h_cand, subjects)
        logits = score_batch(tape, state, h_q, h_eq, relations, h_cand, train)
    return logits, targets
