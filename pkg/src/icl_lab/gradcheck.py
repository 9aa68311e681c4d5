"""Finite-difference verification of the reverse-mode tape.

The numerical oracle is the central difference
``(f(x + h e_j) - f(x - h e_j)) / 2h`` with a per-coordinate step
``h = 1e-6 * max(1, |x_j|)``. An operation passes when every coordinate of
every checked input satisfies ``|ad - fd| / max(1, |fd|) < tol``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import ndtensor as nd

DEFAULT_TOL = 1e-5
H_SCALE = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s} {self.name:32s} max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e})"


def _eval(f: Callable, arrays: Sequence[np.ndarray]) -> float:
    return f(*[nd.Tensor(a) for a in arrays]).item()


def numerical_grad(f: Callable, arrays: Sequence[np.ndarray], wrt: int) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``f`` in its ``wrt``-th input."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    x = arrays[wrt]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        j = it.multi_index
        h = H_SCALE * max(1.0, abs(x[j]))
        orig = x[j]
        x[j] = orig + h
        fp = _eval(f, arrays)
        x[j] = orig - h
        fm = _eval(f, arrays)
        x[j] = orig
        g[j] = (fp - fm) / (2.0 * h)
    return g


def analytic_grads(f: Callable, arrays: Sequence[np.ndarray]) -> list:
    tensors = [nd.Tensor(a, requires_grad=True) for a in arrays]
    loss = f(*tensors)
    nd.backward(loss)
    return [t.grad for t in tensors]


def max_rel_err(f: Callable, arrays: Sequence[np.ndarray],
                wrt: Optional[Sequence[int]] = None) -> float:
    """Worst-case relative disagreement between the tape and the oracle."""
    ad = analytic_grads(f, arrays)
    if wrt is None:
        wrt = range(len(arrays))
    worst = 0.0
    for i in wrt:
        fd = numerical_grad(f, arrays, i)
        rel = np.abs(ad[i] - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, float(rel.max()))
    return worst


def check(name: str, f: Callable, arrays: Sequence[np.ndarray],
          tol: float = DEFAULT_TOL, wrt: Optional[Sequence[int]] = None) -> CheckResult:
    return CheckResult(name, max_rel_err(f, arrays, wrt), tol)


def max_rel_err_params(loss_fn: Callable[[], nd.Tensor], params: Sequence[nd.Tensor]) -> float:
    """Check gradients of a re-buildable loss in its leaf parameters.

    ``loss_fn`` must rebuild the graph from the params' current ``data``
    (models work this way: the optimizer mutates leaves between tapes).
    """
    loss = loss_fn()
    nd.backward(loss)
    ad = [p.grad.copy() for p in params]
    worst = 0.0
    for i, p in enumerate(params):
        x = p.data
        fd = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            j = it.multi_index
            h = H_SCALE * max(1.0, abs(x[j]))
            orig = x[j]
            x[j] = orig + h
            fp = loss_fn().item()
            x[j] = orig - h
            fm = loss_fn().item()
            x[j] = orig
            fd[j] = (fp - fm) / (2.0 * h)
        rel = np.abs(ad[i] - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, float(rel.max()))
    return worst


def model_checks(seed: int = 0) -> list:
    """Finite-difference checks of every model's full parameter gradient."""
    from . import models as md  # late import keeps the core checker standalone

    rng = np.random.default_rng(seed)
    d, n, B = 3, 5, 2
    prefixes = rng.standard_normal((B, n, d + 1))
    prefixes[:, -1, -1] = 0.0
    target = rng.standard_normal((B, 1))

    specs = [
        ("vector_mlp", md.VectorMLPSpec(d=d, n_max=6, width=8)),
        ("sgpt_l1", md.SGPTSpec(d=d, layers=2, embed_dim=8)),
        ("sgpt_softmax", md.SGPTSpec(d=d, layers=1, embed_dim=8, phi="softmax",
                                     mask=md.MaskMode.EXCLUDE_SELF)),
        ("feature_mlp_linear", md.FeatureMLPSpec(d=d, feature_map="linear", width=8)),
        ("feature_mlp_kernel", md.FeatureMLPSpec(d=d, feature_map="kernel", kernel_kind="hilbert",
                                                 selection="last_element", downstream="scalar")),
        ("concat_mlp", md.ConcatMLPSpec(d=d, n_max=6, feature_map="kernel",
                                        kernel_kind="exponential", width=8)),
        ("ref_transformer", md.RefTransformerSpec(d=d, layers=1, heads=2, embed_dim=4)),
    ]
    results = []
    for name, spec in specs:
        model = md.build_model(spec, np.random.default_rng(seed + 1))

        def loss_fn(model=model):
            return nd.squared_error(model.predict_batch(prefixes), target)

        results.append(CheckResult(name, max_rel_err_params(loss_fn, model.parameters()), DEFAULT_TOL))
    return results


def _weighted(out: nd.Tensor, weights: np.ndarray) -> nd.Tensor:
    # non-uniform reduction so errors cannot hide behind symmetric sums
    return nd.tsum(nd.mul(out, nd.constant(weights)))


def op_checks(seed: int = 0) -> list:
    """One finite-difference check per differentiable operation."""
    rng = np.random.default_rng(seed)

    def rand(*shape):
        return rng.standard_normal(shape)

    a34, b45 = rand(3, 4), rand(4, 5)
    w35 = rand(3, 5)
    batched_a, batched_b = rand(2, 3, 4), rand(4, 5)
    w235 = rand(2, 3, 5)
    e33, w33 = rand(3, 3), rand(3, 3)
    # keep entries away from the relu/l1 kinks at 0
    kinked = rand(3, 4)
    kinked += np.sign(kinked) * 0.2
    w34 = rand(3, 4)
    mask = np.eye(4, dtype=bool)[:3]
    w74 = rand(7, 4)
    gamma, beta = rand(4) * 0.2 + 1.0, rand(4) * 0.2

    checks = [
        ("matmul", lambda a, b: _weighted(nd.matmul(a, b), w35), [a34, b45], None),
        ("matmul_batched", lambda a, b: _weighted(nd.matmul(a, b), w235), [batched_a, batched_b], None),
        ("transpose", lambda a: _weighted(nd.transpose(a), w34.T), [a34], None),
        ("add", lambda a, b: _weighted(nd.add(a, b), w33), [e33, rand(3, 3)], None),
        ("sub", lambda a, b: _weighted(nd.sub(a, b), w33), [e33, rand(3, 3)], None),
        ("mul", lambda a, b: _weighted(nd.mul(a, b), w33), [e33, rand(3, 3)], None),
        ("scalar_ops", lambda a: nd.tsum(a * 2.5 - 1.25 + (-a) / 2.0), [e33], None),
        ("index", lambda a: _weighted(a[1:, :2], w34[1:, :2]), [a34], None),
        ("concat", lambda a, b: _weighted(nd.concat([a, b], axis=0), w74), [a34, rand(4, 4)], None),
        ("sum", lambda a: nd.tsum(a), [a34], None),
        ("mean", lambda a: nd.tmean(a), [a34], None),
        ("squared_error", lambda p, t: nd.squared_error(p, t), [rand(5, 1), rand(5, 1)], None),
        ("relu", lambda a: _weighted(nd.relu(a), w34), [kinked], None),
        ("gelu", lambda a: _weighted(nd.gelu(a), w34), [rand(3, 4)], None),
        ("row_l1_normalize", lambda a: _weighted(nd.row_l1_normalize(a), w34), [kinked], None),
        ("row_softmax", lambda a: _weighted(nd.row_softmax(a), w34), [rand(3, 4)], None),
        ("row_softmax_masked", lambda a: _weighted(nd.row_softmax(a, mask=mask), w34), [rand(3, 4)], None),
        ("layer_norm", lambda a, g, b: _weighted(nd.layer_norm(a, g, b), w34), [rand(3, 4), gamma, beta], None),
    ]
    return [check(name, f, arrays, wrt=wrt) for name, f, arrays, wrt in checks]
