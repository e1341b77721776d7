"""Quadruple dataset ingestion: TSV parsing, vocabulary bounds, inverse-fact
augmentation, and per-timestamp snapshot materialization.

File layout follows the public event-KG releases: ``train.txt``,
``valid.txt``, ``test.txt`` with tab-separated integer columns
``subject  relation  object  time`` (extra trailing columns ignored), and a
``stat.txt`` whose first two integers are the entity and base-relation
counts. Raw times are normalized to contiguous snapshot indices.
"""

import hashlib
import math
import os
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

Quadruple = namedtuple("Quadruple", ["s", "r", "o", "t"])

SPLIT_NAMES = ("train", "valid", "test")


class DataError(ValueError):
    """Malformed dataset file or violated dataset invariant."""


@dataclass
class SnapshotGraph:
    """All facts at one snapshot index, as a multi-relational digraph."""

    index: int
    edges: np.ndarray  # (M, 3) int64 rows (subject, relation, object)
    num_entities: int
    in_degree: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        if self.in_degree is None:
            self.in_degree = np.bincount(
                self.edges[:, 2], minlength=self.num_entities
            ).astype(np.int64)

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def incoming(self, entity):
        """Edges whose object is ``entity``."""
        return self.edges[self.edges[:, 2] == entity]


@dataclass
class TkgDataset:
    num_entities: int
    num_base_relations: int
    granularity: int
    splits: dict  # name -> (N, 4) int64 array, timestamps normalized
    augmented: bool = False
    snapshots: dict = None  # snapshot index -> SnapshotGraph

    @property
    def num_relations(self):
        return 2 * self.num_base_relations if self.augmented else self.num_base_relations

    @property
    def num_snapshots(self):
        return int(max(int(q[:, 3].max()) for q in self.splits.values() if len(q))) + 1

    def split(self, name):
        if name not in self.splits:
            raise DataError(f"unknown split {name!r}")
        return self.splits[name]

    def split_timestamps(self, name):
        return np.unique(self.split(name)[:, 3])

    def facts_at(self, name, t):
        q = self.split(name)
        return q[q[:, 3] == t]


def _read_quads(path):
    quads = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated columns")
            try:
                quads.append([int(cols[0]), int(cols[1]), int(cols[2]), int(cols[3])])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer field in {cols[:4]!r}")
    return np.asarray(quads, dtype=np.int64).reshape(-1, 4)


def _read_stat(path):
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise DataError(f"{path}: expected at least two integers (|E| |R|)")
    try:
        return int(tokens[0]), int(tokens[1])
    except ValueError:
        raise DataError(f"{path}: non-integer entity/relation count")


def infer_granularity(raw_times):
    """GCD of the gaps between distinct raw timestamps (1 if fewer than two)."""
    distinct = np.unique(raw_times)
    if distinct.size < 2:
        return 1
    g = 0
    for gap in np.diff(distinct):
        g = math.gcd(g, int(gap))
        if g == 1:
            break
    return max(g, 1)


def parse_dataset(train_path, valid_path, test_path, stat_path, granularity=None):
    """Load the three splits, validate bounds, and normalize timestamps.

    ``granularity`` overrides the inferred raw-units-per-snapshot (needed when
    a fixture's gap structure would be re-divided on re-parse).
    """
    num_entities, num_base_relations = _read_stat(stat_path)
    raw = {}
    for name, path in zip(SPLIT_NAMES, (train_path, valid_path, test_path)):
        quads = _read_quads(path)
        if quads.shape[0] == 0:
            raise DataError(f"{path}: empty split")
        for col, bound, what in (
            (0, num_entities, "subject"),
            (1, num_base_relations, "relation"),
            (2, num_entities, "object"),
        ):
            bad = (quads[:, col] < 0) | (quads[:, col] >= bound)
            if bad.any():
                row = quads[np.argmax(bad)]
                raise DataError(
                    f"{path}: {what} id {row[col]} out of range [0, {bound})"
                )
        raw[name] = quads

    all_times = np.concatenate([q[:, 3] for q in raw.values()])
    if granularity is None:
        granularity = infer_granularity(all_times)
    if granularity <= 0:
        raise DataError(f"granularity must be positive, got {granularity}")
    t_min = int(all_times.min())

    splits = {}
    for name, quads in raw.items():
        normalized = quads.copy()
        normalized[:, 3] = (quads[:, 3] - t_min) // granularity
        splits[name] = normalized

    hi_train = int(splits["train"][:, 3].max())
    lo_valid = int(splits["valid"][:, 3].min())
    hi_valid = int(splits["valid"][:, 3].max())
    lo_test = int(splits["test"][:, 3].min())
    if not (hi_train < lo_valid <= hi_valid < lo_test):
        raise DataError(
            "split timestamp ranges must be disjoint and ordered "
            f"(train ≤ {hi_train}, valid [{lo_valid}, {hi_valid}], test ≥ {lo_test})"
        )

    return TkgDataset(
        num_entities=num_entities,
        num_base_relations=num_base_relations,
        granularity=int(granularity),
        splits=splits,
    )


def augment_inverse(dataset):
    """Add the mirrored fact (o, r + |R_base|, s, t) for every base fact."""
    if dataset.augmented:
        raise DataError("dataset is already augmented")
    nb = dataset.num_base_relations
    splits = {}
    for name, quads in dataset.splits.items():
        inv = quads.copy()
        inv[:, 0] = quads[:, 2]
        inv[:, 2] = quads[:, 0]
        inv[:, 1] = quads[:, 1] + nb
        splits[name] = np.concatenate([quads, inv], axis=0)
    return TkgDataset(
        num_entities=dataset.num_entities,
        num_base_relations=nb,
        granularity=dataset.granularity,
        splits=splits,
        augmented=True,
    )


def inverse_relation(r, num_base_relations):
    """Involution on the doubled relation-id space."""
    return r + num_base_relations if r < num_base_relations else r - num_base_relations


def build_snapshots(dataset):
    """Materialize one SnapshotGraph per snapshot index (empty ones included).

    Uses the union of all splits: timestamps are globally ordered across the
    splits, so any snapshot strictly before a query time is legitimate
    history under the extrapolation protocol.
    """
    if not dataset.augmented:
        raise DataError("build_snapshots requires an augmented dataset")
    quads = np.concatenate(list(dataset.splits.values()), axis=0)
    order = np.argsort(quads[:, 3], kind="stable")
    quads = quads[order]
    snapshots = {}
    boundaries = np.searchsorted(quads[:, 3], np.arange(dataset.num_snapshots + 1))
    for t in range(dataset.num_snapshots):
        edges = quads[boundaries[t] : boundaries[t + 1], :3]
        snapshots[t] = SnapshotGraph(
            index=t, edges=edges, num_entities=dataset.num_entities
        )
    dataset.snapshots = snapshots
    return snapshots


def serialize_split(quads, path):
    """Canonical TSV re-emission (normalized snapshot indices as times)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for s, r, o, t in np.asarray(quads, dtype=np.int64):
            fh.write(f"{s}\t{r}\t{o}\t{t}\n")
    os.replace(tmp, path)


def write_dataset(dataset, out_dir):
    """Emit train/valid/test/stat files in the canonical layout.

    Augmented datasets are reduced back to base facts first; re-parse with
    ``granularity=1`` to round-trip exactly.
    """
    os.makedirs(out_dir, exist_ok=True)
    nb = dataset.num_base_relations
    for name in SPLIT_NAMES:
        quads = dataset.split(name)
        if dataset.augmented:
            quads = quads[quads[:, 1] < nb]
        serialize_split(quads, os.path.join(out_dir, f"{name}.txt"))
    tmp = os.path.join(out_dir, "stat.txt.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(f"{dataset.num_entities}\t{nb}\n")
    os.replace(tmp, os.path.join(out_dir, "stat.txt"))


def load_dataset_dir(data_dir, granularity=None):
    """parse + augment + snapshots for a directory in the canonical layout."""
    paths = {name: os.path.join(data_dir, f"{name}.txt") for name in SPLIT_NAMES}
    stat = os.path.join(data_dir, "stat.txt")
    for p in list(paths.values()) + [stat]:
        if not os.path.exists(p):
            raise DataError(f"missing dataset file: {p}")
    ds = parse_dataset(paths["train"], paths["valid"], paths["test"], stat, granularity)
    ds = augment_inverse(ds)
    build_snapshots(ds)
    return ds


def dataset_fingerprint(dataset):
    """Content hash over split arrays and vocabulary sizes."""
    h = hashlib.sha256()
    h.update(f"{dataset.num_entities},{dataset.num_base_relations}".encode())
    for name in SPLIT_NAMES:
        h.update(name.encode())
        h.update(np.ascontiguousarray(dataset.split(name)).tobytes())
    return h.hexdigest()
