"""Training objective, Adam, normalized evaluation, and scaling sweeps.

The objective is literal: for every configured context length i, a prompt
contributes (prediction on its first i examples plus zeroed query - y_{i+1})^2,
and the loss is the mean over the batch and the configured lengths.

Errors are reported normalized: raw mean squared error divided by the mean
squared label, estimated once per (family, N) from 1e5 fresh labels on a
dedicated stream and cached, so the zero predictor scores 1 by construction.

Train and eval draws can never collide: they live on differently labeled
seed streams ("train" vs "eval"), whatever the master seeds are.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from . import ndtensor as nd
from .models import Model, ModelSpec, build_model, model_kind
from .taskgen import (SeedStream, TaskFamily, TaskParams, family_kind,
                      sample_prompt, sample_task)

CSV_HEADER = "family,model,T,N,seed,normalized_mse,raw_mse,num_eval_tasks"

_NORMALIZATION_SEED = 310_562  # fixed stream for denominators; not a knob
_NORM_TASKS = 1000
_NORM_LABELS_PER_TASK = 100
_EVAL_CHUNK = 256


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one training run."""

    context_lengths: tuple
    num_tasks: int
    steps: int
    batch_size: int = 64
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    master_seed: int = 0
    streaming: bool = False  # fresh task per draw instead of a fixed task set

    def __post_init__(self):
        object.__setattr__(self, "context_lengths", tuple(int(i) for i in self.context_lengths))
        lengths = self.context_lengths
        _require(len(lengths) >= 1, "need at least one context length")
        _require(list(lengths) == sorted(lengths), f"context lengths must be ascending, got {lengths}")
        _require(lengths[0] >= 1, f"context lengths must be >= 1, got {lengths}")
        _require(self.num_tasks >= 1, f"num_tasks must be >= 1, got {self.num_tasks}")
        _require(self.steps >= 1 and self.batch_size >= 1, "steps and batch_size must be >= 1")

    @property
    def n_rows(self) -> int:
        """Rows per training prompt: the largest context plus the query."""
        return self.context_lengths[-1] + 1


# -- loss ---------------------------------------------------------------------------


def icl_loss(model: Model, prompts: np.ndarray, context_lengths: Sequence[int]) -> nd.Tensor:
    """Mean over prompts and configured lengths of the squared query error."""
    prompts = np.asarray(prompts, dtype=np.float64)
    _require(prompts.ndim == 3, f"prompts must be (B, n, d+1), got {prompts.shape}")
    n = prompts.shape[1]
    _require(max(context_lengths) <= n - 1,
             f"context length {max(context_lengths)} needs {max(context_lengths) + 1} rows, prompts have {n}")
    total = None
    for i in context_lengths:
        prefix = prompts[:, : i + 1].copy()
        targets = prefix[:, i, -1].copy()
        prefix[:, i, -1] = 0.0
        preds = model.predict_batch(prefix)
        term = nd.squared_error(preds, nd.constant(targets[:, None]))
        total = term if total is None else nd.add(total, term)
    return nd.mul(total, 1.0 / len(context_lengths))


# -- optimizer -----------------------------------------------------------------------


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @staticmethod
    def zeros_like(arrays: Sequence[np.ndarray]) -> "AdamState":
        return AdamState([np.zeros_like(a) for a in arrays],
                         [np.zeros_like(a) for a in arrays], 0)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState, lr: float, betas: tuple = (0.9, 0.999),
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    state.t += 1
    b1, b2 = betas
    for x, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** state.t)
        v_hat = v / (1.0 - b2 ** state.t)
        x -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    """Adam over Tensor parameters; mutates their data between tapes."""

    def __init__(self, params: Sequence[nd.Tensor], lr: float = 1e-4,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state,
                  self.lr, self.betas, self.eps)


# -- training --------------------------------------------------------------------------


@dataclass
class TrainResult:
    initial_loss: float
    final_loss: float
    steps: int
    loss_curve: List[float] = field(default_factory=list)


def _sample_prompt_rows(family: TaskFamily, stream: SeedStream, t: int, n_rows: int) -> np.ndarray:
    return sample_prompt(sample_task(family, stream, t), stream, n_rows).rows


_CACHE_FLOAT_BUDGET = 2e7


def train(model: Model, family: TaskFamily, config: TrainConfig,
          log_every: int = 0) -> TrainResult:
    """Adam on the in-context loss over a fixed set of ``num_tasks`` tasks.

    The task set is revisited across steps (uniform batch indices); with
    ``streaming`` every draw is a brand-new task instead. A fixed probe batch
    measures loss at initialization and after the last step, and training
    must end below where it started.
    """
    train_stream = SeedStream(config.master_seed, "train")
    batch_stream = SeedStream(config.master_seed, "batch-order")
    T, B, n_rows = config.num_tasks, config.batch_size, config.n_rows
    d_plus_1 = family.d + 1

    cache = None
    if not config.streaming and T * n_rows * d_plus_1 <= _CACHE_FLOAT_BUDGET:
        cache = np.empty((T, n_rows, d_plus_1))
        for t in range(T):
            cache[t] = _sample_prompt_rows(family, train_stream, t, n_rows)

    def batch_for(step: int) -> np.ndarray:
        if config.streaming:
            base = step * B
            return np.stack([
                _sample_prompt_rows(family, train_stream, base + j, n_rows) for j in range(B)
            ])
        idx = batch_stream.generator(step).integers(0, T, size=B)
        if cache is not None:
            return cache[idx]
        return np.stack([_sample_prompt_rows(family, train_stream, int(t), n_rows) for t in idx])

    probe = batch_for(0)
    initial_loss = icl_loss(model, probe, config.context_lengths).item()

    opt = Adam(model.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps)
    curve: List[float] = []
    for step in range(config.steps):
        loss = icl_loss(model, batch_for(step), config.context_lengths)
        nd.backward(loss)
        opt.step()
        if log_every and (step % log_every == 0 or step == config.steps - 1):
            curve.append(loss.item())

    final_loss = icl_loss(model, probe, config.context_lengths).item()
    assert final_loss < initial_loss, \
        f"training did not reduce the probe loss: {initial_loss} -> {final_loss}"
    return TrainResult(initial_loss, final_loss, config.steps, curve)


# -- evaluation -------------------------------------------------------------------------


_norm_cache: dict = {}


def label_second_moment(family: TaskFamily, N: int) -> float:
    """Normalization denominator: mean squared label from 1e5 fresh draws."""
    key = (family, N)
    if key not in _norm_cache:
        stream = SeedStream(_NORMALIZATION_SEED, "normalization")
        acc = 0.0
        for t in range(_NORM_TASKS):
            rows = _sample_prompt_rows(family, stream, t, _NORM_LABELS_PER_TASK)
            acc += float(np.sum(rows[:, -1] ** 2))
        _norm_cache[key] = acc / (_NORM_TASKS * _NORM_LABELS_PER_TASK)
    return _norm_cache[key]


# predictor signature: (prefixes (B, n, d+1), tasks) -> (B,) predictions;
# tasks are supplied for oracle/debug predictors and normally ignored
Predictor = Callable[[np.ndarray, Sequence[TaskParams]], np.ndarray]


def model_predictor(model: Model) -> Predictor:
    def predict(prefixes: np.ndarray, tasks) -> np.ndarray:
        return model.predict_batch(prefixes).data[:, 0]

    return predict


def estimator_predictor(fn) -> Predictor:
    """Adapt a per-prompt estimator (PromptMatrix -> float) to batches."""
    from .taskgen import PromptMatrix

    def predict(prefixes: np.ndarray, tasks) -> np.ndarray:
        return np.array([fn(PromptMatrix(rows, query_label_zeroed=True)) for rows in prefixes])

    return predict


@dataclass(frozen=True)
class EvalRow:
    family: str
    model: str
    T: int
    N: int
    seed: int
    normalized_mse: float
    raw_mse: float
    num_eval_tasks: int


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)

    def extend(self, other: "EvalReport") -> None:
        self.rows.extend(other.rows)

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        for r in self.rows:
            writer.writerow([r.family, r.model, r.T, r.N, r.seed,
                             repr(r.normalized_mse), repr(r.raw_mse), r.num_eval_tasks])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv_string())

    @staticmethod
    def from_csv(path) -> "EvalReport":
        rows = []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != CSV_HEADER.split(","):
                raise ValueError(f"{path}:1: expected header {CSV_HEADER!r}, got {reader.fieldnames}")
            for rec in reader:
                try:
                    rows.append(EvalRow(rec["family"], rec["model"], int(rec["T"]), int(rec["N"]),
                                        int(rec["seed"]), float(rec["normalized_mse"]),
                                        float(rec["raw_mse"]), int(rec["num_eval_tasks"])))
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{reader.line_num}: malformed row: {exc}") from None
        return EvalReport(rows)


def family_label(family: TaskFamily) -> str:
    params = ";".join(f"{k}={v}" for k, v in sorted(family.__dict__.items()))
    return f"{family_kind(family)}({params})"


def evaluate(predict: Predictor, family: TaskFamily, N_list: Sequence[int],
             num_eval_tasks: int, seed: int, model_id: str, T: int = 0) -> EvalReport:
    """Normalized and raw MSE on fresh eval-stream tasks at each context length."""
    eval_stream = SeedStream(seed, "eval")
    report = EvalReport()
    for N in N_list:
        tasks = [sample_task(family, eval_stream, t) for t in range(num_eval_tasks)]
        prompts = np.stack([sample_prompt(task, eval_stream, N + 1).rows for task in tasks])
        targets = prompts[:, N, -1].copy()
        prefixes = prompts.copy()
        prefixes[:, N, -1] = 0.0
        preds = np.empty(num_eval_tasks)
        for lo in range(0, num_eval_tasks, _EVAL_CHUNK):
            hi = min(lo + _EVAL_CHUNK, num_eval_tasks)
            preds[lo:hi] = predict(prefixes[lo:hi], tasks[lo:hi])
        raw = float(np.mean((preds - targets) ** 2))
        report.rows.append(EvalRow(
            family=family_label(family), model=model_id, T=T, N=int(N), seed=seed,
            normalized_mse=raw / label_second_moment(family, N), raw_mse=raw,
            num_eval_tasks=num_eval_tasks,
        ))
    return report


# -- sweeps -----------------------------------------------------------------------------


def _assert_train_eval_disjoint(seed: int) -> None:
    a = SeedStream(seed, "train").generator(0).random(4)
    b = SeedStream(seed, "eval").generator(0).random(4)
    assert not np.array_equal(a, b), "train and eval streams must draw differently"


def train_and_evaluate(spec: ModelSpec, family: TaskFamily, config: TrainConfig,
                       N_list: Sequence[int], num_eval_tasks: int,
                       model_id: Optional[str] = None) -> EvalReport:
    """One training run, then evaluation on the fresh eval stream."""
    _assert_train_eval_disjoint(config.master_seed)
    model = build_model(spec, SeedStream(config.master_seed, "init").generator())
    train(model, family, config)
    return evaluate(model_predictor(model), family, N_list, num_eval_tasks,
                    seed=config.master_seed, model_id=model_id or model_kind(spec),
                    T=config.num_tasks)


def task_scaling_sweep(spec: ModelSpec, family: TaskFamily, config: TrainConfig,
                       T_list: Sequence[int], N: int, num_eval_tasks: int,
                       seeds: Sequence[int], model_id: Optional[str] = None) -> EvalReport:
    """One model per (T, seed), all evaluated at a fixed context length."""
    _require(list(T_list) == sorted(T_list), f"T values must ascend, got {list(T_list)}")
    report = EvalReport()
    for seed in seeds:
        for T in T_list:
            cfg = replace(config, num_tasks=int(T), master_seed=int(seed))
            report.extend(train_and_evaluate(spec, family, cfg, [N], num_eval_tasks, model_id))
    return report


def context_scaling_sweep(spec: ModelSpec, family: TaskFamily, config: TrainConfig,
                          N_list: Sequence[int], num_eval_tasks: int,
                          seeds: Sequence[int], model_id: Optional[str] = None) -> EvalReport:
    """One model per seed at fixed T, evaluated across context lengths."""
    report = EvalReport()
    for seed in seeds:
        cfg = replace(config, master_seed=int(seed))
        report.extend(train_and_evaluate(spec, family, cfg, N_list, num_eval_tasks, model_id))
    return report


def mean_normalized_mse(report: EvalReport, model_id: str, *, T: Optional[int] = None,
                        N: Optional[int] = None) -> float:
    """Average normalized error over seeds for one (model, T, N) cell."""
    vals = [r.normalized_mse for r in report.rows
            if r.model == model_id
            and (T is None or r.T == T)
            and (N is None or r.N == N)]
    _require(len(vals) > 0, f"no rows for model={model_id}, T={T}, N={N}")
    return float(np.mean(vals))
