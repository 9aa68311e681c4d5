"""Built-in experiment presets.

Each preset is a ready-to-run config shrunk to workstation scale: input
dimensions 5-8 (20 for sparse tasks), at most 1e5 pre-training tasks, widths
up to 256, and at most 2 attention layers, so a preset finishes within a
core-hour budget. Parameters are spelled out inline; `describe()` renders
the full YAML for any preset.
"""

from __future__ import annotations

import yaml

from .config import ExperimentConfig, parse_config

# sigma = 0.22 keeps the Bayes-optimal error visibly above zero without
# drowning the signal; d = 5 or 8 keeps closed-form baselines cheap
_LINEAR_D5 = {"kind": "linear_fixed_noise", "d": 5, "sigma": 0.22}
_LINEAR_D8 = {"kind": "linear_fixed_noise", "d": 8, "sigma": 0.22}

PRESETS = {
    # MLP-on-vectorized-prompts task-scales but not context-scales; a 2-layer
    # attention stack does both. Task axis at N=10, context axis at T=1e5.
    "fig1-desk": {
        "name": "fig1-desk",
        "description": "task-scaling vs context-scaling: vectorized-input MLP "
                       "against a 2-layer parameter-free-attention stack on "
                       "noisy linear regression",
        "seeds": [0, 1, 2],
        "family": _LINEAR_D5,
        "train": {"context_lengths": [5, 10, 20, 40], "steps": 1500,
                  "num_tasks": 100_000, "learning_rate": 1.0e-3},
        "eval": {"num_tasks": 1000},
        "models": [
            {"kind": "vector_mlp", "width": 256},
            {"kind": "sgpt", "layers": 2, "embed_dim": 64},
        ],
        "estimators": [{"kind": "zero"}, {"kind": "bayes_ridge"}],
        "sweeps": {
            "task_scaling": {"T_values": [1000, 10_000, 100_000], "eval_N": 10},
            "context_scaling": {"N_values": [5, 10, 20, 40]},
        },
    },
    # attention stack vs optimally regularized ridge, plus deliberately
    # mis-regularized references (0.1x and 10x the Bayes lambda = sigma^2 d)
    "fig2-ridge-desk": {
        "name": "fig2-ridge-desk",
        "description": "2-layer attention stack against Bayes-optimal and "
                       "mis-tuned ridge on noisy linear regression",
        "seeds": [0, 1, 2],
        "family": {"kind": "linear_fixed_noise", "d": 8, "sigma": 0.5},
        "train": {"context_lengths": [10, 20, 40], "steps": 1500,
                  "num_tasks": 20_000, "learning_rate": 1.0e-3},
        "eval": {"num_tasks": 1000},
        "models": [{"kind": "sgpt", "layers": 2, "embed_dim": 64}],
        "estimators": [
            {"kind": "zero"},
            {"kind": "bayes_ridge"},           # lambda = sigma^2 d = 2.0
            {"kind": "ridge", "lam": 0.2},
            {"kind": "ridge", "lam": 20.0},
        ],
        "sweeps": {"context_scaling": {"N_values": [10, 20, 40]}},
    },
    # per-prompt noise is 0.1 or 0.5 with equal probability; ridge matched to
    # either single level under-serves the other sub-population
    "fig3-mixed-noise-desk": {
        "name": "fig3-mixed-noise-desk",
        "description": "algorithm selection on mixed-noise linear regression: "
                       "attention stack vs ridge matched to each noise level",
        "seeds": [0, 1, 2],
        "family": {"kind": "linear_mixed_noise", "d": 8, "sigma1": 0.1, "sigma2": 0.5},
        "train": {"context_lengths": [5, 10, 20, 40], "steps": 1500,
                  "num_tasks": 20_000, "learning_rate": 1.0e-3},
        "eval": {"num_tasks": 1000},
        "models": [{"kind": "sgpt", "layers": 2, "embed_dim": 64}],
        "estimators": [
            {"kind": "zero"},
            {"kind": "ridge", "lam": 0.08},    # sigma1^2 d
            {"kind": "ridge", "lam": 2.0},     # sigma2^2 d
        ],
        "sweeps": {"context_scaling": {"N_values": [5, 10, 20, 40]}},
    },
    # nonlinear families: ReLU teacher, decision tree, sparse linear; the
    # parameter-free stack is compared with hyperparameter-free baselines
    "fig4-nonlinear-desk": {
        "name": "fig4-nonlinear-desk",
        "description": "nonlinear and sparse tasks: attention stack vs kernel "
                       "smoother and least squares",
        "seeds": [0, 1, 2],
        "families": [
            {"kind": "two_layer_relu", "d": 8, "r": 100},
            {"kind": "decision_tree", "d": 8, "depth": 3},
            {"kind": "sparse_linear", "d": 20, "s": 3},
        ],
        "train": {"context_lengths": [10, 20, 40], "steps": 1500,
                  "num_tasks": 20_000, "learning_rate": 1.0e-3},
        "eval": {"num_tasks": 500},
        "models": [{"kind": "sgpt", "layers": 2, "embed_dim": 64}],
        "estimators": [
            {"kind": "zero"},
            {"kind": "ols"},
            {"kind": "smoother", "kernel": "hilbert"},
        ],
        "sweeps": {"context_scaling": {"N_values": [10, 20, 40]}},
    },
    # a single attention layer already context-scales on linear and
    # ReLU-teacher tasks
    "fig5-onelayer-desk": {
        "name": "fig5-onelayer-desk",
        "description": "one-layer attention stack context-scales on linear "
                       "and ReLU-teacher tasks",
        "seeds": [0, 1, 2],
        "families": [
            _LINEAR_D8,
            {"kind": "two_layer_relu", "d": 8, "r": 100},
        ],
        "train": {"context_lengths": [10, 20, 40], "steps": 1500,
                  "num_tasks": 20_000, "learning_rate": 1.0e-3},
        "eval": {"num_tasks": 1000},
        "models": [{"kind": "sgpt", "layers": 1, "embed_dim": 64}],
        "estimators": [{"kind": "zero"}, {"kind": "smoother", "kernel": "hilbert"}],
        "sweeps": {"context_scaling": {"N_values": [10, 20, 40]}},
    },
    # the full query row of the kernel-smoother feature map vs its label
    # element alone: the scalar carries the context-scaling signal
    "fig6-lastelem-desk": {
        "name": "fig6-lastelem-desk",
        "description": "smoother-feature head on the full query row vs the "
                       "scalar label element, noisy linear regression",
        "seeds": [0, 1, 2],
        "family": _LINEAR_D8,
        "train": {"context_lengths": [10, 20, 40], "steps": 2000,
                  "num_tasks": 20_000, "learning_rate": 1.0e-3},
        "eval": {"num_tasks": 1000},
        "models": [
            {"kind": "feature_mlp", "feature_map": "kernel", "kernel_kind": "hilbert",
             "selection": "last_row", "downstream": "mlp", "width": 128,
             "id": "psi-h-row-mlp"},
            {"kind": "feature_mlp", "feature_map": "kernel", "kernel_kind": "hilbert",
             "selection": "last_element", "downstream": "scalar",
             "id": "psi-h-scalar"},
        ],
        "estimators": [{"kind": "zero"}, {"kind": "smoother", "kernel": "hilbert"}],
        "sweeps": {"context_scaling": {"N_values": [10, 20, 40]}},
    },
    # three MLP input layouts: vectorized prompt (task-scales only), smoother
    # features (context-scales only), and their concatenation (does both)
    "fig7-concat-desk": {
        "name": "fig7-concat-desk",
        "description": "MLP input layouts: vectorized vs smoother features vs "
                       "concatenation, on noisy linear regression",
        "seeds": [0, 1, 2],
        "family": _LINEAR_D5,
        "train": {"context_lengths": [5, 10, 20, 40], "steps": 1500,
                  "num_tasks": 100_000, "learning_rate": 1.0e-3},
        "eval": {"num_tasks": 1000},
        "models": [
            {"kind": "vector_mlp", "width": 256, "id": "mlp-vec"},
            {"kind": "feature_mlp", "feature_map": "kernel", "kernel_kind": "hilbert",
             "selection": "last_row", "downstream": "mlp", "width": 256,
             "id": "mlp-psi-h"},
            {"kind": "concat_mlp", "feature_map": "kernel", "kernel_kind": "hilbert",
             "width": 256, "id": "mlp-concat"},
        ],
        "estimators": [{"kind": "zero"}],
        "sweeps": {
            "task_scaling": {"T_values": [1000, 10_000, 100_000], "eval_N": 10},
            "context_scaling": {"N_values": [10, 20, 40]},
        },
    },
    # parameter-free attention vs a trainable-QKV softmax decoder of the same
    # depth; both task- and context-scale at desk scale
    "fig8-sgpt-vs-ref-desk": {
        "name": "fig8-sgpt-vs-ref-desk",
        "description": "parameter-free attention stack vs a standard softmax "
                       "decoder with trained projections, noisy linear regression",
        "seeds": [0, 1, 2],
        "family": _LINEAR_D8,
        "train": {"context_lengths": [10, 20, 40], "steps": 1500,
                  "num_tasks": 100_000, "learning_rate": 1.0e-3},
        "eval": {"num_tasks": 500},
        "models": [
            {"kind": "sgpt", "layers": 2, "embed_dim": 64},
            {"kind": "ref_transformer", "layers": 2, "heads": 2, "embed_dim": 64},
        ],
        "estimators": [{"kind": "zero"}, {"kind": "bayes_ridge"}],
        "sweeps": {
            "task_scaling": {"T_values": [1000, 10_000, 100_000], "eval_N": 10},
            "context_scaling": {"N_values": [10, 20, 40]},
        },
    },
    # minutes-scale smoke run exercising every pipeline stage
    "smoke": {
        "name": "smoke",
        "description": "tiny end-to-end run (seconds, one seed) for pipeline "
                       "verification",
        "seeds": [0],
        "family": {"kind": "linear_fixed_noise", "d": 3, "sigma": 0.2},
        "train": {"context_lengths": [2, 4], "steps": 40, "num_tasks": 16,
                  "batch_size": 16, "learning_rate": 3.0e-3},
        "eval": {"num_tasks": 50},
        "models": [{"kind": "vector_mlp", "width": 16}],
        "estimators": [{"kind": "zero"}, {"kind": "ols"}],
        "sweeps": {
            "task_scaling": {"T_values": [8, 16], "eval_N": 2},
            "context_scaling": {"N_values": [2, 4]},
        },
        "checkpoints": True,
    },
}


def preset_names() -> list:
    return sorted(PRESETS)


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_config(PRESETS[name])


def describe(name: str) -> str:
    """Full YAML text of a preset, as written to result directories."""
    return preset_config(name).to_yaml()


def summary_lines() -> list:
    out = []
    for name in preset_names():
        out.append(f"{name:24s} {PRESETS[name]['description']}")
    return out
