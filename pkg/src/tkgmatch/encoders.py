"""The three encoders of the matching model plus the parameter container.

* background encoder: stacked relation-composing graph convolutions over the
  cumulative background graph, producing context-dependent entity rows E;
* query structure encoder: mean-pooled neighbor rows concatenated with a
  learned periodic interval encoding, folded by a GRU;
* candidate structure encoder: per-snapshot graph convolutions over the full
  snapshot, then the same concat-and-GRU recursion for every entity at once.

The interval encoding cos(d * w + b) is one shared component: the same
``time_unit``/``time_bias`` parameters feed both structure encoders.
"""

import numpy as np

from .autodiff import Parameter


def xavier_uniform(rng, shape):
    """Glorot-uniform init; 3-D kernel stacks use receptive-field fans."""
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 3:
        fan_in = shape[1] * shape[2]
        fan_out = shape[0] * shape[2]
    else:
        fan_in = fan_out = shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelState:
    """All learnable tensors, keyed by name; the set depends on the ablation
    toggles so disabled components contribute no parameters."""

    GATES = ("r", "z", "c")

    def __init__(self, config, num_entities, num_base_relations, rng):
        config.validate()
        self.config = config
        self.num_entities = int(num_entities)
        self.num_base_relations = int(num_base_relations)
        self.params = {}
        d, dt = config.d_e, config.d_t

        self._add("ent_emb", xavier_uniform(rng, (self.num_entities, d)))
        self._add("rel_emb", xavier_uniform(rng, (2 * self.num_base_relations, d)))
        if not config.disable_time:
            self._add("time_unit", rng.standard_normal(dt))
            self._add("time_bias", rng.standard_normal(dt))
        if not config.disable_background:
            for layer in range(config.omega2):
                self._add(f"bg_w1_{layer}", xavier_uniform(rng, (d, d)))
                self._add(f"bg_w2_{layer}", xavier_uniform(rng, (d, d)))
        if not config.disable_candidate:
            for layer in range(config.omega1):
                self._add(f"cand_w1_{layer}", xavier_uniform(rng, (d, d)))
                self._add(f"cand_w2_{layer}", xavier_uniform(rng, (d, d)))
            self._add_gru("cand_gru", config.gru_input_dim, d, rng)
            self._add(
                "conv_kernels",
                xavier_uniform(rng, (config.kernels, 2, config.kernel_width)),
            )
            self._add("conv_fc", xavier_uniform(rng, (config.kernels * d, d)))
        else:
            self._add("score_fc", xavier_uniform(rng, (d, self.num_entities)))
        if not config.disable_query:
            self._add_gru("query_gru", config.gru_input_dim, d, rng)
            self._add("query_h0", rng.standard_normal(d) * 0.1)

    def _add(self, name, data):
        self.params[name] = Parameter(name, data)

    def _add_gru(self, prefix, input_dim, hidden_dim, rng):
        for gate in self.GATES:
            self._add(f"{prefix}_wx{gate}", xavier_uniform(rng, (input_dim, hidden_dim)))
            self._add(f"{prefix}_wh{gate}", xavier_uniform(rng, (hidden_dim, hidden_dim)))
            self._add(f"{prefix}_b{gate}", np.zeros(hidden_dim))

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return sum(p.size() for p in self.params.values())

    def leaf(self, tape, name):
        return tape.leaf(self.params[name].tensor)

    def load_values(self, values):
        """Overwrite parameter data from a name -> array mapping (exact match)."""
        missing = sorted(set(self.params) - set(values))
        extra = sorted(set(values) - set(self.params))
        if missing or extra:
            raise ValueError(
                f"parameter names mismatch (missing: {missing}, unexpected: {extra})"
            )
        for name, arr in values.items():
            param = self.params[name]
            if param.tensor.data.shape != arr.shape:
                raise ValueError(
                    f"parameter {name}: shape {arr.shape} != {param.tensor.data.shape}"
                )
            param.tensor.data[...] = arr

    def snapshot_values(self):
        return {name: p.tensor.data.copy() for name, p in self.params.items()}


# ---------------------------------------------------------------------------
# time semantic component


def time_encode(tape, state, d):
    """cos(d * time_unit + time_bias) for one non-negative interval."""
    if d < 0:
        raise ValueError(f"time interval must be non-negative, got {d}")
    w = state.leaf(tape, "time_unit")
    b = state.leaf(tape, "time_bias")
    return tape.cos(tape.add(tape.scale(w, float(d)), b))


def time_encode_batch(tape, state, intervals):
    """Row-per-interval version of the shared time encoding."""
    intervals = np.asarray(intervals, dtype=np.float64)
    if intervals.size and intervals.min() < 0:
        raise ValueError("time intervals must be non-negative")
    batch = intervals.shape[0]
    w = tape.tile_rows(state.leaf(tape, "time_unit"), batch)
    b = state.leaf(tape, "time_bias")
    scaled = tape.mul(w, tape.const(intervals[:, None]))
    return tape.cos(tape.add(scaled, b))


# ---------------------------------------------------------------------------
# relation-composing graph convolution


def compgcn_layer(
    tape,
    edges,
    in_degree,
    h_node,
    rel_node,
    w1_node,
    w2_node,
    composition="subtract",
    dropout=0.0,
    train=False,
):
    """One message-passing layer: per in-edge, compose the source row with the
    relation row (subtract or multiply), average per object with c_e =
    max(1, in-degree), project, add the projected self row, apply tanh.
    """
    num_entities = tape.value(h_node).shape[0]
    self_path = tape.matmul(h_node, w2_node)
    if len(edges):
        edges = np.asarray(edges, dtype=np.int64)
        sources = tape.gather_rows(h_node, edges[:, 0])
        rels = tape.gather_rows(rel_node, edges[:, 1])
        if composition == "subtract":
            messages = tape.sub(sources, rels)
        elif composition == "multiply":
            messages = tape.mul(sources, rels)
        else:
            raise ValueError(f"unknown composition {composition!r}")
        counts = np.maximum(in_degree, 1).astype(np.float64)
        pooled = tape.scatter_mean(messages, edges[:, 2], num_entities, counts)
        out = tape.tanh(tape.add(tape.matmul(pooled, w1_node), self_path))
    else:
        out = tape.tanh(self_path)
    if dropout > 0.0:
        out = tape.dropout(out, dropout, train)
    return out


# ---------------------------------------------------------------------------
# the three encoders


def encode_background(tape, state, bg, train=False):
    """Entity matrix E from the cumulative background graph (or the raw
    embedding table when the background encoder is ablated)."""
    h = state.leaf(tape, "ent_emb")
    if state.config.disable_background:
        return h
    rel = state.leaf(tape, "rel_emb")
    for layer in range(state.config.omega2):
        h = compgcn_layer(
            tape,
            bg.edges,
            bg.in_degree,
            h,
            rel,
            state.leaf(tape, f"bg_w1_{layer}"),
            state.leaf(tape, f"bg_w2_{layer}"),
            composition=state.config.composition,
            dropout=state.config.dropout,
            train=train,
        )
    return h


def gru_step(tape, state, prefix, x_node, h_node):
    """One batched GRU step: reset/update sigmoid gates, tanh candidate."""

    def gate(name, act, hidden):
        pre = tape.add(
            tape.add(
                tape.matmul(x_node, state.leaf(tape, f"{prefix}_wx{name}")),
                tape.matmul(hidden, state.leaf(tape, f"{prefix}_wh{name}")),
            ),
            state.leaf(tape, f"{prefix}_b{name}"),
        )
        return act(pre)

    reset = gate("r", tape.sigmoid, h_node)
    update = gate("z", tape.sigmoid, h_node)
    candidate = gate("c", tape.tanh, tape.mul(reset, h_node))
    # h' = z*h + (1-z)*c, written as z*(h-c) + c
    return tape.add(tape.mul(update, tape.sub(h_node, candidate)), candidate)


def encode_candidates(tape, state, e_node, candidate_history, train=False):
    """Per-entity recurrent state over the last n snapshots, for all entities.

    Each snapshot is re-encoded from E with omega1 conv layers; the centered
    row is concatenated with the interval encoding and folded by the
    candidate GRU (zero initial hidden state).
    """
    cfg = state.config
    num_entities = tape.value(e_node).shape[0]
    h = tape.const(np.zeros((num_entities, cfg.d_e)))
    rel = state.leaf(tape, "rel_emb")
    for snap, interval in zip(candidate_history.snapshots, candidate_history.intervals):
        g = e_node
        for layer in range(cfg.omega1):
            g = compgcn_layer(
                tape,
                snap.edges,
                snap.in_degree,
                g,
                rel,
                state.leaf(tape, f"cand_w1_{layer}"),
                state.leaf(tape, f"cand_w2_{layer}"),
                composition=cfg.composition,
                dropout=cfg.dropout,
                train=train,
            )
        if cfg.disable_time:
            x = g
        else:
            v = time_encode(tape, state, interval)
            x = tape.concat(g, tape.tile_rows(v, num_entities))
        h = gru_step(tape, state, "cand_gru", x, h)
    return h


def encode_queries(tape, state, e_node, histories, train=False):
    """Batched query encoder: one row of output per QueryHistory.

    Queries are grouped by history length so each group runs the GRU with a
    rectangular batch; per step, neighbor rows of E are mean-pooled with a
    grouped scatter. Queries with empty histories return the learned initial
    hidden state.
    """
    cfg = state.config
    batch = len(histories)
    h0 = state.leaf(tape, "query_h0")
    groups = {}
    for pos, qh in enumerate(histories):
        groups.setdefault(len(qh.steps), []).append(pos)

    pieces = []
    for length, positions in sorted(groups.items()):
        h = tape.tile_rows(h0, len(positions))
        for step in range(length):
            neighbor_sets = [histories[p].steps[step][1] for p in positions]
            counts = np.array([len(ns) for ns in neighbor_sets], dtype=np.float64)
            flat = np.concatenate(neighbor_sets)
            member = np.repeat(np.arange(len(positions)), counts.astype(np.int64))
            pooled = tape.scatter_mean(
                tape.gather_rows(e_node, flat), member, len(positions), counts
            )
            if cfg.disable_time:
                x = pooled
            else:
                intervals = [
                    histories[p].t_q - histories[p].steps[step][0] for p in positions
                ]
                x = tape.concat(pooled, time_encode_batch(tape, state, intervals))
            h = gru_step(tape, state, "query_gru", x, h)
        pieces.append((positions, h))

    if len(pieces) == 1:
        return pieces[0][1]
    stacked = pieces[0][1]
    order = list(pieces[0][0])
    for positions, node in pieces[1:]:
        stacked = tape.vstack(stacked, node)
        order.extend(positions)
    perm = np.empty(batch, dtype=np.int64)
    for stack_pos, batch_pos in enumerate(order):
        perm[batch_pos] = stack_pos
    return tape.gather_rows(stacked, perm)


def encode_query(tape, state, e_node, query_history, train=False):
    """Single-query convenience wrapper; returns a vector node."""
    return tape.flatten(encode_queries(tape, state, e_node, [query_history], train))
