"""Synthetic regression task families and prompt assembly.

A prompt is a matrix whose rows are (x, y) pairs; the final row is the query,
whose label gets zeroed before a model sees it. Prefixes of one prompt give
the same task at increasing context lengths.

All sampling is counter-based: a (master_seed, stream, indices...) tuple is
hashed into a Philox key, so any task or prompt can be regenerated in
isolation, out of order, and in parallel. Train and eval draws live in
different streams and can never collide.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

TASK_DUMP_MAGIC = "ICLTASKS v1"


# -- deterministic splittable randomness --------------------------------------


@dataclass(frozen=True)
class SeedStream:
    """A named, splittable source of randomness.

    ``generator(*indices)`` keys a fresh Philox generator off
    sha256(master_seed, stream, *indices); equal inputs give bit-identical
    draws, distinct inputs give independent streams.
    """

    master_seed: int
    stream: str

    def generator(self, *indices: int) -> np.random.Generator:
        h = hashlib.sha256()
        h.update(int(self.master_seed).to_bytes(8, "little", signed=True))
        h.update(self.stream.encode("utf-8"))
        for ix in indices:
            h.update(int(ix).to_bytes(8, "little", signed=True))
        key = int.from_bytes(h.digest()[:16], "little")
        return np.random.Generator(np.random.Philox(key=key))


# draw-purpose words inside a task's substream
_TASK_DRAW = 0
_PROMPT_DRAW = 1


# -- task families -------------------------------------------------------------


@dataclass(frozen=True)
class LinearFixedNoise:
    """y = beta'x + sigma*eps with beta ~ N(0, I_d/d)."""

    d: int
    sigma: float

    def __post_init__(self):
        _require(self.d >= 1, f"d must be >= 1, got {self.d}")
        _require(self.sigma >= 0, f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class LinearMixedNoise:
    """Linear regression whose noise level is sigma1 or sigma2, one fair coin
    flip per task (the whole prompt shares the drawn level)."""

    d: int
    sigma1: float
    sigma2: float

    def __post_init__(self):
        _require(self.d >= 1, f"d must be >= 1, got {self.d}")
        _require(self.sigma1 >= 0 and self.sigma2 >= 0,
                 f"sigmas must be >= 0, got {self.sigma1}, {self.sigma2}")


@dataclass(frozen=True)
class SparseLinear:
    """Noiseless y = beta'x where beta ~ N(0, I_d) keeps only s coordinates."""

    d: int
    s: int

    def __post_init__(self):
        _require(self.d >= 1, f"d must be >= 1, got {self.d}")
        _require(0 <= self.s <= self.d, f"s must be in [0, d], got s={self.s}, d={self.d}")


@dataclass(frozen=True)
class TwoLayerReLU:
    """Teacher network y = sum_j alpha_j relu(w_j'x), width r.

    w_j ~ N(0, I_d/d) and alpha_j ~ N(0, 2/r) keep E[y^2] = 1 for every
    (d, r), so normalized errors are comparable across families.
    """

    d: int
    r: int

    def __post_init__(self):
        _require(self.d >= 1, f"d must be >= 1, got {self.d}")
        _require(self.r >= 1, f"r must be >= 1, got {self.r}")


@dataclass(frozen=True)
class DecisionTree:
    """Full binary tree of the given depth; internal nodes branch on the sign
    of a uniformly chosen coordinate, leaves carry N(0,1) values."""

    d: int
    depth: int

    def __post_init__(self):
        _require(self.d >= 1, f"d must be >= 1, got {self.d}")
        _require(self.depth >= 1, f"depth must be >= 1, got {self.depth}")

    @property
    def num_internal(self) -> int:
        return 2 ** self.depth - 1

    @property
    def num_leaves(self) -> int:
        return 2 ** self.depth


TaskFamily = Union[LinearFixedNoise, LinearMixedNoise, SparseLinear, TwoLayerReLU, DecisionTree]

_FAMILY_KINDS = {
    "linear_fixed_noise": LinearFixedNoise,
    "linear_mixed_noise": LinearMixedNoise,
    "sparse_linear": SparseLinear,
    "two_layer_relu": TwoLayerReLU,
    "decision_tree": DecisionTree,
}
_KIND_OF = {cls: kind for kind, cls in _FAMILY_KINDS.items()}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def family_kind(family: TaskFamily) -> str:
    return _KIND_OF[type(family)]


def family_to_json(family: TaskFamily) -> str:
    payload = {"kind": family_kind(family), **family.__dict__}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def family_from_dict(payload: dict) -> TaskFamily:
    payload = dict(payload)
    kind = payload.pop("kind")
    if kind not in _FAMILY_KINDS:
        raise ValueError(f"unknown task family kind {kind!r}")
    return _FAMILY_KINDS[kind](**payload)


def family_from_json(text: str) -> TaskFamily:
    return family_from_dict(json.loads(text))


# -- sampled task parameters ----------------------------------------------------


@dataclass(frozen=True)
class TaskParams:
    """Frozen parameters of one sampled task; unused fields stay None."""

    family: TaskFamily
    task_index: int
    beta: Optional[np.ndarray] = None
    sigma: Optional[float] = None
    weights: Optional[np.ndarray] = None  # (r, d)
    alpha: Optional[np.ndarray] = None    # (r,)
    splits: Optional[np.ndarray] = None   # (2^depth - 1,) coordinate per heap node
    leaves: Optional[np.ndarray] = None   # (2^depth,)


def sample_task(family: TaskFamily, rng: SeedStream, t: int) -> TaskParams:
    """Draw the t-th task of the stream; pure in (family, rng, t)."""
    gen = rng.generator(t, _TASK_DRAW)
    if isinstance(family, LinearFixedNoise):
        beta = gen.standard_normal(family.d) / np.sqrt(family.d)
        return TaskParams(family, t, beta=beta, sigma=family.sigma)
    if isinstance(family, LinearMixedNoise):
        beta = gen.standard_normal(family.d) / np.sqrt(family.d)
        sigma = family.sigma1 if gen.random() < 0.5 else family.sigma2
        return TaskParams(family, t, beta=beta, sigma=sigma)
    if isinstance(family, SparseLinear):
        beta = gen.standard_normal(family.d)
        keep = gen.choice(family.d, size=family.s, replace=False)
        mask = np.zeros(family.d)
        mask[keep] = 1.0
        return TaskParams(family, t, beta=beta * mask)
    if isinstance(family, TwoLayerReLU):
        weights = gen.standard_normal((family.r, family.d)) / np.sqrt(family.d)
        alpha = gen.standard_normal(family.r) * np.sqrt(2.0 / family.r)
        return TaskParams(family, t, weights=weights, alpha=alpha)
    if isinstance(family, DecisionTree):
        splits = gen.integers(0, family.d, size=family.num_internal)
        leaves = gen.standard_normal(family.num_leaves)
        return TaskParams(family, t, splits=splits, leaves=leaves)
    raise TypeError(f"unknown task family {type(family).__name__}")


def _tree_leaf_index(splits: np.ndarray, depth: int, X: np.ndarray) -> np.ndarray:
    """Heap walk: node i has children 2i+1 (x_coord <= 0) and 2i+2 (> 0)."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    for _ in range(depth):
        coord = splits[node]
        go_right = X[np.arange(X.shape[0]), coord] > 0.0
        node = 2 * node + 1 + go_right
    return node - (2 ** depth - 1)


def noiseless_labels(task: TaskParams, X: np.ndarray) -> np.ndarray:
    """The regression function of the task applied row-wise to X."""
    family = task.family
    if isinstance(family, (LinearFixedNoise, LinearMixedNoise, SparseLinear)):
        return X @ task.beta
    if isinstance(family, TwoLayerReLU):
        return np.maximum(X @ task.weights.T, 0.0) @ task.alpha
    if isinstance(family, DecisionTree):
        return task.leaves[_tree_leaf_index(task.splits, family.depth, X)]
    raise TypeError(f"unknown task family {type(family).__name__}")


# -- prompts and prefixes --------------------------------------------------------


@dataclass(frozen=True)
class PromptMatrix:
    """N rows of (x, y); the last row is the query once its label is zeroed."""

    rows: np.ndarray
    query_label_zeroed: bool = False

    def __post_init__(self):
        _require(self.rows.ndim == 2 and self.rows.shape[1] >= 2,
                 f"prompt rows must be N x (d+1), got shape {self.rows.shape}")
        _require(not self.query_label_zeroed or self.rows[-1, -1] == 0.0,
                 "query_label_zeroed is set but the final label is nonzero")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1] - 1


def sample_prompt(task: TaskParams, rng: SeedStream, N: int, draw: int = 0) -> PromptMatrix:
    """N i.i.d. rows (x ~ N(0, I_d), y from the task); labels on every row.

    The final row's label is kept: it is the regression target, zeroed later
    by make_prefix. ``draw`` distinguishes multiple prompts of one task.
    """
    _require(N >= 1, f"N must be >= 1, got {N}")
    gen = rng.generator(task.task_index, _PROMPT_DRAW, draw, N)
    d = task.family.d
    X = gen.standard_normal((N, d))
    y = noiseless_labels(task, X)
    if task.sigma is not None and task.sigma > 0:
        y = y + task.sigma * gen.standard_normal(N)
    return PromptMatrix(np.concatenate([X, y[:, None]], axis=1))


def make_prefix(A: PromptMatrix, i: int) -> PromptMatrix:
    """First i context rows plus row i as the query (label zeroed)."""
    if not 1 <= i <= A.n - 1:
        raise ValueError(f"prefix length i must be in [1, {A.n - 1}], got {i}")
    rows = A.rows[: i + 1].copy()
    rows[i, -1] = 0.0
    return PromptMatrix(rows, query_label_zeroed=True)


def prefix_target(A: PromptMatrix, i: int) -> float:
    """The label hidden by make_prefix(A, i)."""
    if not 1 <= i <= A.n - 1:
        raise ValueError(f"prefix length i must be in [1, {A.n - 1}], got {i}")
    return float(A.rows[i, -1])


def vectorize(A: PromptMatrix, N_max: int) -> np.ndarray:
    """Flatten a prefix to the fixed-length layout [x1, y1, ..., pad, xq, 0].

    Context pairs come first in row order, zero pairs pad the middle, and the
    query always occupies the final d+1 slots, so a model reading the vector
    finds the query at a fixed offset for every context length.
    """
    _require(A.query_label_zeroed, "vectorize expects the query label to be zeroed (use make_prefix)")
    if A.n > N_max:
        raise ValueError(f"prompt has {A.n} rows but N_max is {N_max}")
    width = A.d + 1
    out = np.zeros((N_max, width))
    out[: A.n - 1] = A.rows[: A.n - 1]
    out[-1] = A.rows[-1]
    return out.reshape(N_max * width)


# -- optional binary task dumps ----------------------------------------------------


def _record_size(family: TaskFamily) -> int:
    if isinstance(family, LinearFixedNoise):
        return family.d
    if isinstance(family, LinearMixedNoise):
        return family.d + 1
    if isinstance(family, SparseLinear):
        return family.d
    if isinstance(family, TwoLayerReLU):
        return family.r * family.d + family.r
    if isinstance(family, DecisionTree):
        return family.num_internal + family.num_leaves
    raise TypeError(f"unknown task family {type(family).__name__}")


def _to_record(task: TaskParams) -> np.ndarray:
    family = task.family
    if isinstance(family, LinearFixedNoise) or isinstance(family, SparseLinear):
        return np.asarray(task.beta)
    if isinstance(family, LinearMixedNoise):
        return np.concatenate([task.beta, [task.sigma]])
    if isinstance(family, TwoLayerReLU):
        return np.concatenate([task.weights.reshape(-1), task.alpha])
    if isinstance(family, DecisionTree):
        return np.concatenate([task.splits.astype(np.float64), task.leaves])
    raise TypeError(f"unknown task family {type(family).__name__}")


def _from_record(family: TaskFamily, index: int, rec: np.ndarray) -> TaskParams:
    if isinstance(family, LinearFixedNoise):
        return TaskParams(family, index, beta=rec.copy(), sigma=family.sigma)
    if isinstance(family, LinearMixedNoise):
        return TaskParams(family, index, beta=rec[:-1].copy(), sigma=float(rec[-1]))
    if isinstance(family, SparseLinear):
        return TaskParams(family, index, beta=rec.copy())
    if isinstance(family, TwoLayerReLU):
        w = rec[: family.r * family.d].reshape(family.r, family.d).copy()
        return TaskParams(family, index, weights=w, alpha=rec[family.r * family.d:].copy())
    if isinstance(family, DecisionTree):
        k = family.num_internal
        return TaskParams(family, index, splits=rec[:k].astype(np.int64), leaves=rec[k:].copy())
    raise TypeError(f"unknown task family {type(family).__name__}")


def dump_tasks(path, family: TaskFamily, tasks) -> None:
    """Write tasks as `ICLTASKS v1 <family-json>` plus packed float64 records.

    Datasets are normally regenerated from seeds; dumps exist for audits and
    for shipping a fixed task set across tools.
    """
    with open(path, "wb") as f:
        f.write(f"{TASK_DUMP_MAGIC} {family_to_json(family)}\n".encode("utf-8"))
        for task in tasks:
            rec = np.ascontiguousarray(_to_record(task), dtype="<f8")
            f.write(rec.tobytes())


def load_tasks(path):
    """Inverse of dump_tasks; task indices become positions in the file."""
    with open(path, "rb") as f:
        header = f.readline().decode("utf-8").rstrip("\n")
        if not header.startswith(TASK_DUMP_MAGIC + " "):
            raise ValueError(f"not a task dump: bad header {header[:40]!r}")
        family = family_from_json(header[len(TASK_DUMP_MAGIC) + 1:])
        body = np.frombuffer(f.read(), dtype="<f8")
    size = _record_size(family)
    if body.size % size != 0:
        raise ValueError(f"task dump corrupt: {body.size} floats is not a multiple of record size {size}")
    records = body.reshape(-1, size)
    return family, [_from_record(family, i, rec) for i, rec in enumerate(records)]
