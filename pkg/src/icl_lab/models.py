"""Trainable predictors over prompt prefixes.

Every model consumes a batch of prefixes (B, n, d+1) whose query labels are
zeroed and returns a (B, 1) prediction tensor on the autodiff tape. Training
materializes one forward pass per configured context length; there is no
causal pass, so a row's own label can never leak into its prediction through
a skip connection.

Model zoo:
  * VectorMLP        two-layer ReLU MLP on the flattened, zero-padded prompt
  * SGPT             GPT-style decoder whose attention has identity
                     query/key/value weights: g(H) = phi(HH')H
  * FeatureMLP       frozen attention feature map (one-step-GD or kernel
                     smoother), then a small trainable head
  * ConcatMLP        MLP on [flattened prompt, feature-map query row]
  * ReferenceTransformer  compact softmax transformer with trainable
                     query/key/value weights (pre-layer-norm blocks)

Checkpoints: header line `ICLCKPT v1`, a YAML metadata block closed by the
document-end marker `...`, then the weight arrays as little-endian float64
in declaration order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
import yaml

from . import ndtensor as nd
from .featmap import (ExponentialKernel, HilbertKernel, KernelSpec,
                      LinearKernel, MaskMode, batch_query_weights)
from .taskgen import PromptMatrix, vectorize

CHECKPOINT_MAGIC = "ICLCKPT v1"

FEATURE_MAPS = ("linear", "kernel")
SELECTIONS = ("last_row", "last_element")
DOWNSTREAMS = ("mlp", "scalar")
PHI_CHOICES = ("l1", "softmax")
ATTN_MASKS = ("none", "causal", "exclude_self", "strict_causal")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# -- model specs ---------------------------------------------------------------


@dataclass(frozen=True)
class MLPSpec:
    """Two-layer ReLU network sigma(x W0) W1 with no biases."""

    input_dim: int
    width: int = 1024

    def __post_init__(self):
        _require(self.input_dim >= 1 and self.width >= 1,
                 f"input_dim and width must be >= 1, got {self.input_dim}, {self.width}")


@dataclass(frozen=True)
class VectorMLPSpec:
    """MLPSpec applied to flattened prompts padded to n_max rows."""

    d: int
    n_max: int
    width: int = 1024

    def __post_init__(self):
        _require(self.d >= 1 and self.n_max >= 2,
                 f"need d >= 1 and n_max >= 2, got d={self.d}, n_max={self.n_max}")

    @property
    def input_dim(self) -> int:
        return self.n_max * (self.d + 1)


@dataclass(frozen=True)
class SGPTSpec:
    """Decoder stack with parameter-free attention.

    Block recursion from hidden state H (starting at H0 = A W0, W0 frozen):
        g = phi(H H') H
        u = g W_proj + H
        H <- gelu(u W_mlp) + u
    and the prediction is (H W_out) read at the query row. phi is row-wise
    l1 normalization by default; "softmax" turns attention into the
    exponential-kernel smoother.
    """

    d: int
    layers: int
    embed_dim: int
    phi: str = "l1"
    mask: MaskMode = MaskMode.NONE

    def __post_init__(self):
        _require(self.d >= 1 and self.layers >= 1 and self.embed_dim >= 1,
                 f"d, layers, embed_dim must be >= 1, got {self.d}, {self.layers}, {self.embed_dim}")
        _require(self.phi in PHI_CHOICES, f"phi must be one of {PHI_CHOICES}, got {self.phi!r}")


@dataclass(frozen=True)
class FeatureMLPSpec:
    """A frozen feature map feeding a small trainable head.

    feature_map "linear" is (AA')A; "kernel" is the row-normalized kernel
    smoother (kernel_kind in {"linear", "exponential", "hilbert"}). The head
    sees either the whole query row of the feature map or just its label
    element; it is an MLP, or a single scalar gain when downstream="scalar".
    """

    d: int
    feature_map: str
    kernel_kind: Optional[str] = None
    selection: str = "last_row"
    downstream: str = "mlp"
    width: int = 1024

    def __post_init__(self):
        _require(self.feature_map in FEATURE_MAPS,
                 f"feature_map must be one of {FEATURE_MAPS}, got {self.feature_map!r}")
        _require(self.selection in SELECTIONS,
                 f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        _require(self.downstream in DOWNSTREAMS,
                 f"downstream must be one of {DOWNSTREAMS}, got {self.downstream!r}")
        if self.feature_map == "kernel":
            _require(self.kernel_kind is not None, "kernel feature map needs kernel_kind")
        if self.downstream == "scalar":
            _require(self.selection == "last_element",
                     "scalar calibration only applies to the last_element feature")

    @property
    def head_input_dim(self) -> int:
        return 1 if self.selection == "last_element" else self.d + 1


@dataclass(frozen=True)
class ConcatMLPSpec:
    """MLP over the flattened prompt concatenated with feature-map features."""

    d: int
    n_max: int
    feature_map: str
    kernel_kind: Optional[str] = None
    width: int = 1024

    def __post_init__(self):
        _require(self.feature_map in FEATURE_MAPS,
                 f"feature_map must be one of {FEATURE_MAPS}, got {self.feature_map!r}")
        if self.feature_map == "kernel":
            _require(self.kernel_kind is not None, "kernel feature map needs kernel_kind")

    @property
    def input_dim(self) -> int:
        return (self.n_max + 1) * (self.d + 1)


@dataclass(frozen=True)
class RefTransformerSpec:
    """Compact softmax-attention decoder with trainable Q/K/V weights."""

    d: int
    layers: int
    heads: int
    embed_dim: int
    mask: str = "causal"
    use_mlp: bool = True
    use_layer_norm: bool = True

    def __post_init__(self):
        _require(self.embed_dim % self.heads == 0,
                 f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        _require(self.mask in ATTN_MASKS, f"mask must be one of {ATTN_MASKS}, got {self.mask!r}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


ModelSpec = Union[VectorMLPSpec, SGPTSpec, FeatureMLPSpec, ConcatMLPSpec, RefTransformerSpec]


def _kernel_for(kind: str, d: int) -> KernelSpec:
    if kind == "linear":
        return LinearKernel()
    if kind == "exponential":
        return ExponentialKernel()
    if kind == "hilbert":
        return HilbertKernel(d=d)
    raise ValueError(f"unknown kernel_kind {kind!r}")


def exclusion_mask(n: int, mode: str) -> Optional[np.ndarray]:
    """Boolean matrix of attention entries to drop (None = keep all)."""
    if mode in ("none", MaskMode.NONE):
        return None
    if mode in ("exclude_self", MaskMode.EXCLUDE_SELF):
        return np.eye(n, dtype=bool)
    if mode == "causal":
        return ~np.tri(n, dtype=bool)
    if mode in ("strict_causal", MaskMode.STRICT_CAUSAL):
        return ~np.tri(n, k=-1, dtype=bool)
    raise ValueError(f"unknown attention mask {mode!r}")


# -- shared pieces ----------------------------------------------------------------


def _init(gen: np.random.Generator, rows: int, cols: int, fan_in: Optional[int] = None) -> nd.Tensor:
    scale = 1.0 / np.sqrt(fan_in if fan_in is not None else rows)
    return nd.Tensor(gen.standard_normal((rows, cols)) * scale, requires_grad=True)


def _stack_vectorized(prefixes: np.ndarray, n_max: int) -> np.ndarray:
    """Batched vectorize: context rows, zero padding, query in the last slot."""
    B, n, width = prefixes.shape
    _require(n <= n_max, f"prompt has {n} rows but n_max is {n_max}")
    out = np.zeros((B, n_max, width))
    out[:, : n - 1] = prefixes[:, :-1]
    out[:, -1] = prefixes[:, -1]
    return out.reshape(B, n_max * width)


def _check_batch(prefixes: np.ndarray, d: int) -> np.ndarray:
    prefixes = np.asarray(prefixes, dtype=np.float64)
    _require(prefixes.ndim == 3 and prefixes.shape[2] == d + 1,
             f"prefix batch must be (B, n, {d + 1}), got {prefixes.shape}")
    _require(prefixes.shape[1] >= 2, "prefixes need at least one context row plus the query")
    return prefixes


class Model:
    """Common surface: named arrays, trainable parameters, batched forward."""

    kind: str
    spec: ModelSpec

    def all_arrays(self) -> list:
        raise NotImplementedError

    def parameters(self) -> list:
        return [t for _, t in self.all_arrays() if t.requires_grad]

    def predict_batch(self, prefixes: np.ndarray) -> nd.Tensor:
        raise NotImplementedError

    def predict(self, A: PromptMatrix) -> float:
        _require(A.query_label_zeroed, "prediction expects the query label zeroed (use make_prefix)")
        return self.predict_batch(A.rows[None, :, :]).item()

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())


class MLP(Model):
    """sigma(x W0) W1; the building block behind several models."""

    kind = "mlp"

    def __init__(self, spec: MLPSpec, gen: np.random.Generator):
        self.spec = spec
        self.w0 = _init(gen, spec.input_dim, spec.width)
        self.w1 = _init(gen, spec.width, 1)

    def all_arrays(self):
        return [("w0", self.w0), ("w1", self.w1)]

    def forward(self, x: nd.Tensor) -> nd.Tensor:
        return nd.matmul(nd.relu(nd.matmul(x, self.w0)), self.w1)

    def forward_vector(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=np.float64)
        _require(v.shape == (self.spec.input_dim,),
                 f"input must have shape ({self.spec.input_dim},), got {v.shape}")
        return self.forward(nd.constant(v[None, :])).item()

    def predict_batch(self, prefixes):
        raise TypeError("raw MLP consumes vectors, not prompts; see VectorMLP")


class VectorMLP(Model):
    """The flattened-prompt baseline network."""

    kind = "vector_mlp"

    def __init__(self, spec: VectorMLPSpec, gen: np.random.Generator):
        self.spec = spec
        self.net = MLP(MLPSpec(spec.input_dim, spec.width), gen)

    def all_arrays(self):
        return [("net." + n, t) for n, t in self.net.all_arrays()]

    def predict_batch(self, prefixes: np.ndarray) -> nd.Tensor:
        prefixes = _check_batch(prefixes, self.spec.d)
        flat = _stack_vectorized(prefixes, self.spec.n_max)
        return self.net.forward(nd.constant(flat))


class SGPT(Model):
    """Decoder with identity query/key/value attention; W0 is frozen."""

    kind = "sgpt"

    def __init__(self, spec: SGPTSpec, gen: np.random.Generator):
        self.spec = spec
        k = spec.embed_dim
        w0 = gen.standard_normal((spec.d + 1, k)) / np.sqrt(spec.d + 1)
        self.w_embed = nd.Tensor(w0, requires_grad=False)
        self.w_proj = [_init(gen, k, k) for _ in range(spec.layers)]
        self.w_mlp = [_init(gen, k, k) for _ in range(spec.layers)]
        self.w_out = _init(gen, k, 1)

    def all_arrays(self):
        arrays = [("w_embed", self.w_embed)]
        for i in range(self.spec.layers):
            arrays.append((f"block{i}.w_proj", self.w_proj[i]))
            arrays.append((f"block{i}.w_mlp", self.w_mlp[i]))
        arrays.append(("w_out", self.w_out))
        return arrays

    def _attend(self, H: nd.Tensor) -> nd.Tensor:
        scores = nd.matmul(H, nd.transpose(H))
        excl = exclusion_mask(H.shape[-2], self.spec.mask)
        if self.spec.phi == "softmax":
            weights = nd.row_softmax(scores, mask=excl)
        else:
            if excl is not None:
                keep = np.broadcast_to(~excl, scores.shape).astype(np.float64).copy()
                scores = nd.mul(scores, nd.constant(keep))
            weights = nd.row_l1_normalize(scores)
        return nd.matmul(weights, H)

    def predict_batch(self, prefixes: np.ndarray) -> nd.Tensor:
        prefixes = _check_batch(prefixes, self.spec.d)
        H = nd.matmul(nd.constant(prefixes), self.w_embed)
        for wp, wm in zip(self.w_proj, self.w_mlp):
            u = nd.add(nd.matmul(self._attend(H), wp), H)
            H = nd.add(nd.gelu(nd.matmul(u, wm)), u)
        out = nd.matmul(H, self.w_out)
        return out[:, -1, :]


class FeatureMLP(Model):
    """Frozen feature extraction, trainable head.

    Features are computed in plain numpy (they carry no parameters) and enter
    the tape as constants; only the head receives gradients.
    """

    kind = "feature_mlp"

    def __init__(self, spec: FeatureMLPSpec, gen: np.random.Generator):
        self.spec = spec
        if spec.downstream == "scalar":
            # zero start so calibration is genuinely learned; at gain 1 the
            # model reproduces the raw smoother exactly
            self.gain = nd.Tensor(np.zeros((1, 1)), requires_grad=True)
            self.head = None
        else:
            self.head = MLP(MLPSpec(spec.head_input_dim, spec.width), gen)
            self.gain = None

    def all_arrays(self):
        if self.head is None:
            return [("gain", self.gain)]
        return [("head." + n, t) for n, t in self.head.all_arrays()]

    def features(self, prefixes: np.ndarray) -> np.ndarray:
        """Query row of the feature map, batched: (B, n, d+1) -> (B, d+1)."""
        prefixes = _check_batch(prefixes, self.spec.d)
        if self.spec.feature_map == "linear":
            q = prefixes[:, -1, :]
            return np.einsum("bi,bni,bnc->bc", q, prefixes, prefixes)
        kernel = _kernel_for(self.spec.kernel_kind, self.spec.d)
        w = batch_query_weights(prefixes[:, :-1, : self.spec.d], prefixes[:, -1, : self.spec.d], kernel)
        return np.einsum("bn,bnc->bc", w, prefixes[:, :-1, :])

    def predict_batch(self, prefixes: np.ndarray) -> nd.Tensor:
        feats = self.features(prefixes)
        if self.spec.selection == "last_element":
            feats = feats[:, -1:]
        if self.gain is not None:
            return nd.matmul(nd.constant(feats), self.gain)
        return self.head.forward(nd.constant(feats))


def concat_input(A: PromptMatrix, psi_features: np.ndarray, n_max: int) -> np.ndarray:
    """[vectorized prompt, feature-map query row], length (n_max+1)(d+1)."""
    psi_features = np.asarray(psi_features, dtype=np.float64)
    _require(psi_features.shape == (A.d + 1,),
             f"features must have shape ({A.d + 1},), got {psi_features.shape}")
    return np.concatenate([vectorize(A, n_max), psi_features])


class ConcatMLP(Model):
    """VectorMLP whose input gains the feature map's query row."""

    kind = "concat_mlp"

    def __init__(self, spec: ConcatMLPSpec, gen: np.random.Generator):
        self.spec = spec
        self.net = MLP(MLPSpec(spec.input_dim, spec.width), gen)
        self._feature = FeatureMLP(
            FeatureMLPSpec(spec.d, spec.feature_map, spec.kernel_kind, "last_row", "mlp", 1),
            np.random.default_rng(0),
        )

    def all_arrays(self):
        return [("net." + n, t) for n, t in self.net.all_arrays()]

    def predict_batch(self, prefixes: np.ndarray) -> nd.Tensor:
        prefixes = _check_batch(prefixes, self.spec.d)
        flat = _stack_vectorized(prefixes, self.spec.n_max)
        feats = self._feature.features(prefixes)
        return self.net.forward(nd.constant(np.concatenate([flat, feats], axis=1)))


class ReferenceTransformer(Model):
    """Pre-layer-norm decoder stack with learned linear embedding.

    Per block: x += attn(ln1(x)); x += mlp(ln2(x)); a final layer norm, then
    a linear head read at the query row. Attention scores are scaled by
    1/sqrt(head_dim), so at one head this is exactly phi(H H' / sqrt(m)) H
    with trainable Q/K/V. Layer norm and the MLP block can be switched off
    for algebraic comparisons against the kernel-smoother route.
    """

    kind = "ref_transformer"

    def __init__(self, spec: RefTransformerSpec, gen: np.random.Generator):
        self.spec = spec
        m, hd = spec.embed_dim, spec.head_dim
        self.w_embed = _init(gen, spec.d + 1, m)
        self.blocks = []
        for _ in range(spec.layers):
            block = {
                "w_q": [_init(gen, m, hd) for _ in range(spec.heads)],
                "w_k": [_init(gen, m, hd) for _ in range(spec.heads)],
                "w_v": [_init(gen, m, hd) for _ in range(spec.heads)],
                "w_attn_out": _init(gen, m, m),
            }
            if spec.use_layer_norm:
                block["ln1_g"] = nd.Tensor(np.ones(m), requires_grad=True)
                block["ln1_b"] = nd.Tensor(np.zeros(m), requires_grad=True)
                block["ln2_g"] = nd.Tensor(np.ones(m), requires_grad=True)
                block["ln2_b"] = nd.Tensor(np.zeros(m), requires_grad=True)
            if spec.use_mlp:
                block["w_fc"] = _init(gen, m, 4 * m)
                block["w_fc_out"] = _init(gen, 4 * m, m, fan_in=4 * m)
            self.blocks.append(block)
        if spec.use_layer_norm:
            self.lnf_g = nd.Tensor(np.ones(m), requires_grad=True)
            self.lnf_b = nd.Tensor(np.zeros(m), requires_grad=True)
        self.w_head = _init(gen, m, 1)

    def all_arrays(self):
        arrays = [("w_embed", self.w_embed)]
        for i, block in enumerate(self.blocks):
            for h in range(self.spec.heads):
                arrays.append((f"block{i}.head{h}.w_q", block["w_q"][h]))
                arrays.append((f"block{i}.head{h}.w_k", block["w_k"][h]))
                arrays.append((f"block{i}.head{h}.w_v", block["w_v"][h]))
            arrays.append((f"block{i}.w_attn_out", block["w_attn_out"]))
            if self.spec.use_layer_norm:
                for nm in ("ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                    arrays.append((f"block{i}.{nm}", block[nm]))
            if self.spec.use_mlp:
                arrays.append((f"block{i}.w_fc", block["w_fc"]))
                arrays.append((f"block{i}.w_fc_out", block["w_fc_out"]))
        if self.spec.use_layer_norm:
            arrays.append(("lnf_g", self.lnf_g))
            arrays.append(("lnf_b", self.lnf_b))
        arrays.append(("w_head", self.w_head))
        return arrays

    def _attention(self, x: nd.Tensor, block: dict, excl: Optional[np.ndarray]) -> nd.Tensor:
        outs = []
        scale = 1.0 / np.sqrt(self.spec.head_dim)
        for h in range(self.spec.heads):
            q = nd.matmul(x, block["w_q"][h])
            k = nd.matmul(x, block["w_k"][h])
            v = nd.matmul(x, block["w_v"][h])
            scores = nd.mul(nd.matmul(q, nd.transpose(k)), scale)
            weights = nd.row_softmax(scores, mask=excl)
            outs.append(nd.matmul(weights, v))
        merged = outs[0] if len(outs) == 1 else nd.concat(outs, axis=2)
        return nd.matmul(merged, block["w_attn_out"])

    def predict_batch(self, prefixes: np.ndarray) -> nd.Tensor:
        prefixes = _check_batch(prefixes, self.spec.d)
        excl = exclusion_mask(prefixes.shape[1], self.spec.mask)
        x = nd.matmul(nd.constant(prefixes), self.w_embed)
        for block in self.blocks:
            h = nd.layer_norm(x, block["ln1_g"], block["ln1_b"]) if self.spec.use_layer_norm else x
            x = nd.add(x, self._attention(h, block, excl))
            if self.spec.use_mlp:
                h2 = nd.layer_norm(x, block["ln2_g"], block["ln2_b"]) if self.spec.use_layer_norm else x
                x = nd.add(x, nd.matmul(nd.gelu(nd.matmul(h2, block["w_fc"])), block["w_fc_out"]))
        if self.spec.use_layer_norm:
            x = nd.layer_norm(x, self.lnf_g, self.lnf_b)
        return nd.matmul(x, self.w_head)[:, -1, :]


# -- spec (de)serialization and checkpoints -----------------------------------------


_MODEL_CLASSES = {
    "vector_mlp": (VectorMLP, VectorMLPSpec),
    "sgpt": (SGPT, SGPTSpec),
    "feature_mlp": (FeatureMLP, FeatureMLPSpec),
    "concat_mlp": (ConcatMLP, ConcatMLPSpec),
    "ref_transformer": (ReferenceTransformer, RefTransformerSpec),
}


def model_kind(spec: ModelSpec) -> str:
    for kind, (_, spec_cls) in _MODEL_CLASSES.items():
        if isinstance(spec, spec_cls):
            return kind
    raise TypeError(f"unknown model spec {type(spec).__name__}")


def spec_to_dict(spec: ModelSpec) -> dict:
    payload = {"kind": model_kind(spec)}
    for key, value in asdict(spec).items():
        payload[key] = value.value if isinstance(value, MaskMode) else value
    return payload


def spec_from_dict(payload: dict) -> ModelSpec:
    payload = dict(payload)
    kind = payload.pop("kind")
    if kind not in _MODEL_CLASSES:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(_MODEL_CLASSES)}")
    spec_cls = _MODEL_CLASSES[kind][1]
    if kind == "sgpt" and "mask" in payload:
        payload["mask"] = MaskMode(payload["mask"])
    return spec_cls(**payload)


def build_model(spec: ModelSpec, gen: np.random.Generator) -> Model:
    model_cls = _MODEL_CLASSES[model_kind(spec)][0]
    return model_cls(spec, gen)


def save_checkpoint(path, model: Model, seed: int, step: int) -> None:
    arrays = model.all_arrays()
    meta = {
        "spec": spec_to_dict(model.spec),
        "seed": int(seed),
        "step": int(step),
        "arrays": [{"name": n, "shape": list(t.shape)} for n, t in arrays],
    }
    with open(path, "wb") as f:
        f.write((CHECKPOINT_MAGIC + "\n").encode("utf-8"))
        f.write(yaml.safe_dump(meta, sort_keys=False).encode("utf-8"))
        f.write(b"...\n")
        for _, t in arrays:
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild (model, metadata) from a checkpoint file."""
    with open(path, "rb") as f:
        if f.readline().decode("utf-8").rstrip("\n") != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint: {path}")
        meta_lines = []
        while True:
            line = f.readline().decode("utf-8")
            if not line:
                raise ValueError(f"checkpoint truncated before weight block: {path}")
            if line.rstrip("\n") == "...":
                break
            meta_lines.append(line)
        meta = yaml.safe_load("".join(meta_lines))
        body = np.frombuffer(f.read(), dtype="<f8")
    spec = spec_from_dict(meta["spec"])
    model = build_model(spec, np.random.default_rng(0))
    offset = 0
    arrays = model.all_arrays()
    if [n for n, _ in arrays] != [a["name"] for a in meta["arrays"]]:
        raise ValueError("checkpoint metadata does not match the model's array layout")
    for (_, tensor), entry in zip(arrays, meta["arrays"]):
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        if offset + size > body.size:
            raise ValueError(f"checkpoint truncated: {path}")
        tensor.data = body[offset: offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != body.size:
        raise ValueError(f"checkpoint has {body.size - offset} trailing floats: {path}")
    return model, meta
