"""Synthetic temporal-KG generators used by the verification experiments.

Three kinds:

* ``cyclic``  — each subject rotates deterministically through a private set
  of objects (period p), one fact per timestamp. History alone determines
  the next object, so a perfect model reaches MRR 1.0.
* ``parity``  — subjects fire at random gaps of 2..5 steps and link to one
  of two shared objects chosen by the parity of the gap. The gap is never
  visible inside the 1-snapshot structural windows the task is meant to be
  run with (n = k = 1), so interval encodings are the only usable signal.
* ``random``  — uniform noise quadruples, for fuzz fixtures.

Each generator is a pure function of its parameters and seed; ``write``
emits the canonical TSV layout plus a sidecar description of the rule.
"""

import os

import numpy as np

from . import data as tkg_data


def _split_by_time(quads, valid_start, test_start):
    quads = np.asarray(quads, dtype=np.int64)
    t = quads[:, 3]
    parts = {
        "train": quads[t < valid_start],
        "valid": quads[(t >= valid_start) & (t < test_start)],
        "test": quads[t >= test_start],
    }
    for name, part in parts.items():
        if part.shape[0] == 0:
            raise ValueError(f"synthetic split {name!r} came out empty; adjust params")
    return parts


def make_cyclic(num_entities=20, period=2, timestamps=30, holdout=5, seed=0):
    """Deterministic rotation: subject i links to its objects in phase t % p."""
    if period < 2 or num_entities < period + 1:
        raise ValueError("cyclic: need period >= 2 and at least period+1 entities")
    if timestamps < 3 * holdout:
        raise ValueError("cyclic: need at least 3*holdout timestamps")
    group = period + 1
    num_subjects = num_entities // group
    rng = np.random.default_rng(seed)
    # private object sets; a random phase offset per subject breaks symmetry
    offsets = rng.integers(0, period, size=num_subjects)
    quads = []
    for i in range(num_subjects):
        subject = i * group
        objects = [i * group + 1 + j for j in range(period)]
        for t in range(timestamps):
            quads.append((subject, 0, objects[(t + offsets[i]) % period], t))
    splits = _split_by_time(quads, timestamps - 2 * holdout, timestamps - holdout)
    description = (
        f"cyclic: {num_subjects} subjects rotate through {period} private objects, "
        f"one fact per timestamp over {timestamps} snapshots; last {holdout} held "
        f"out as test, previous {holdout} as validation. The next object is a "
        "deterministic function of the visible history."
    )
    return _as_dataset(splits, num_entities, 1), description


def make_parity(
    num_subjects=12,
    timestamps=64,
    min_gap=2,
    max_gap=5,
    modulus=2,
    holdout=8,
    seed=0,
):
    """Interval-residue task: object identity depends only on the gap.

    Each subject owns ``modulus`` private objects and re-fires after a
    uniform random gap in [min_gap, max_gap], linking to the object indexed
    by ``gap % modulus`` (modulus 2 is the even/odd parity case). Gaps are
    i.i.d., so past object identities carry no information about the current
    gap, and with min_gap >= 2 the previous firing lies outside a 1-snapshot
    structural window: run with n = k = 1 and the interval encoding is the
    only signal that separates the objects. Inverse queries resolve to the
    owning subject and are deterministic for any variant.
    """
    if min_gap < 2:
        raise ValueError("parity: min_gap must be >= 2 to stay outside the window")
    if max_gap < min_gap:
        raise ValueError("parity: max_gap must be >= min_gap")
    if modulus < 2 or modulus > max_gap - min_gap + 1:
        raise ValueError("parity: modulus must be in [2, max_gap - min_gap + 1]")
    rng = np.random.default_rng(seed)
    quads = []
    for subject in range(num_subjects):
        objects = [num_subjects + subject * modulus + c for c in range(modulus)]
        t = int(rng.integers(0, min_gap + 1))
        quads.append((subject, 0, objects[int(rng.integers(0, modulus))], t))
        while True:
            gap = int(rng.integers(min_gap, max_gap + 1))
            t += gap
            if t >= timestamps:
                break
            quads.append((subject, 0, objects[gap % modulus], t))
    splits = _split_by_time(quads, timestamps - 2 * holdout, timestamps - holdout)
    description = (
        f"parity: {num_subjects} subjects fire at uniform random gaps in "
        f"[{min_gap}, {max_gap}] over {timestamps} snapshots, each linking to its "
        f"private object indexed by gap % {modulus}; gaps are i.i.d., so past "
        "object identities carry no information about the current gap. Run with "
        "m small and n = k = 1."
    )
    return _as_dataset(splits, num_subjects * (1 + modulus), 1), description


def make_recency(num_subjects=12, num_objects=4, cycles=16, seed=0):
    """Candidate-recency task: the answer is the most recently refreshed object.

    Time runs in cycles of length ``num_objects + 1``. In the first
    ``num_objects`` slots of a cycle, a dedicated refresher entity touches
    the shared objects in a uniformly random order; in the last slot every
    subject links to the object refreshed most recently. Run with
    n = k = num_objects: the background union then contains exactly one
    refresh edge per object in every cycle, i.e. the same graph regardless
    of the order, and each subject's own history is an i.i.d. sequence of
    past winners. Only the per-candidate snapshot sequence (the candidate
    encoder's input) carries the refresh order, so a model scoring from the
    query side alone cannot beat the prior.
    """
    if num_objects < 2:
        raise ValueError("recency: need at least 2 objects")
    rng = np.random.default_rng(seed)
    refresher = num_subjects + num_objects
    cycle_len = num_objects + 1
    quads = []
    for cycle in range(cycles):
        base = cycle * cycle_len
        order = rng.permutation(num_objects)
        for slot, obj in enumerate(order):
            quads.append((refresher, 1, num_subjects + int(obj), base + slot))
        winner = num_subjects + int(order[-1])
        for subject in range(num_subjects):
            quads.append((subject, 0, winner, base + num_objects))
    test_cycles = max(2, cycles // 6)
    valid_start = (cycles - 2 * test_cycles) * cycle_len
    test_start = (cycles - test_cycles) * cycle_len
    splits = _split_by_time(quads, valid_start, test_start)
    description = (
        f"recency: a refresher entity touches {num_objects} shared objects in a "
        f"random order each cycle of {cycle_len} steps; at the cycle's last step "
        f"all {num_subjects} subjects link to the most recently touched object. "
        f"Run with n = k = {num_objects}: the refresh order is visible only in "
        "the per-candidate snapshot sequence."
    )
    return _as_dataset(splits, num_subjects + num_objects + 1, 2), description


def make_random(
    num_entities=30, num_relations=5, timestamps=20, num_facts=300, seed=0
):
    """Uniform random quadruples split 70/15/15 by snapshot index."""
    rng = np.random.default_rng(seed)
    quads = np.stack(
        [
            rng.integers(0, num_entities, size=num_facts),
            rng.integers(0, num_relations, size=num_facts),
            rng.integers(0, num_entities, size=num_facts),
            rng.integers(0, timestamps, size=num_facts),
        ],
        axis=1,
    ).astype(np.int64)
    valid_start = max(1, int(timestamps * 0.7))
    test_start = max(valid_start + 1, int(timestamps * 0.85))
    # make sure every window holds at least one fact
    quads[0, 3] = 0
    quads[1, 3] = valid_start
    quads[2, 3] = test_start
    splits = _split_by_time(quads, valid_start, test_start)
    description = (
        f"random: {num_facts} uniform quadruples over {num_entities} entities, "
        f"{num_relations} relations, {timestamps} snapshots."
    )
    return _as_dataset(splits, num_entities, num_relations), description


def _as_dataset(splits, num_entities, num_relations):
    return tkg_data.TkgDataset(
        num_entities=num_entities,
        num_base_relations=num_relations,
        granularity=1,
        splits=splits,
    )


GENERATORS = {"cyclic": make_cyclic, "parity": make_parity, "random": make_random}


def generate(kind, seed=0, **params):
    if kind not in GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r} (have: {sorted(GENERATORS)})")
    return GENERATORS[kind](seed=seed, **params)


def write(dataset, description, out_dir):
    """Emit canonical TSV files plus the generative-rule sidecar."""
    tkg_data.write_dataset(dataset, out_dir)
    tmp = os.path.join(out_dir, "description.txt.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(description + "\n")
    os.replace(tmp, os.path.join(out_dir, "description.txt"))
