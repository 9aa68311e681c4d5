"""Experiment execution and self-describing result directories.

A run directory contains everything needed to reproduce it:

    <root>/<name>/
        config.yaml      normalized config snapshot
        manifest.json    seeds, config sha256, package version, status
        results.csv      EvalReport rows
        checkpoints/     final weights per trained model (optional)

Re-running the same config and seeds rewrites results.csv bit-identically.
A crash mid-run leaves status "partial" in the manifest plus the error text.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines as bl
from . import featmap as fm
from . import models as md
from . import taskgen as tg
from . import trainer as tr
from .config import ConfigError, ExperimentConfig, model_spec_for, train_config_for

OUTPUT_ENV_VAR = "ICL_LAB_RESULTS"
DEFAULT_OUTPUT_ROOT = "results"


def output_root(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ENV_VAR, DEFAULT_OUTPUT_ROOT))


def config_sha256(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(cfg.to_yaml().encode("utf-8")).hexdigest()


class ResultStore:
    """One experiment's output directory plus its manifest."""

    def __init__(self, directory: Path, cfg: ExperimentConfig):
        self.directory = Path(directory)
        self.cfg = cfg
        self._manifest = {
            "name": cfg.name,
            "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "seeds": list(cfg.seeds),
            "config_sha256": config_sha256(cfg),
            "package_version": _package_version(),
            "status": "running",
        }

    @property
    def csv_path(self) -> Path:
        return self.directory / "results.csv"

    @property
    def manifest_path(self) -> Path:
        return self.directory / "manifest.json"

    def open(self) -> "ResultStore":
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / "config.yaml").write_text(self.cfg.to_yaml())
        self._write_manifest()
        return self

    def _write_manifest(self) -> None:
        self.manifest_path.write_text(json.dumps(self._manifest, indent=2) + "\n")

    def write_report(self, report: tr.EvalReport) -> None:
        report.to_csv(self.csv_path)

    def checkpoint_path(self, label: str) -> Path:
        ckpt_dir = self.directory / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        return ckpt_dir / f"{label}.ckpt"

    def finalize(self) -> None:
        self._manifest["status"] = "complete"
        self._write_manifest()

    def fail(self, exc: BaseException) -> None:
        self._manifest["status"] = "partial"
        self._manifest["error"] = f"{type(exc).__name__}: {exc}"
        self._write_manifest()


def _package_version() -> str:
    from . import __version__

    return __version__


# -- estimator registry ---------------------------------------------------------------


def _ols_predict(A):
    X, y, xq, _ = bl.split_prompt(A)
    return bl.ols(X, y).predict(xq)


def _ridge_predict(A, lam):
    X, y, xq, _ = bl.split_prompt(A)
    return bl.ridge(X, y, lam).predict(xq)


def estimator_for(entry: dict, family) -> tuple:
    """(model id, batch predictor) for one closed-form baseline entry."""
    kind = entry["kind"]
    if kind == "zero":
        return "zero", lambda prefixes, tasks: np.zeros(len(prefixes))
    if kind == "ols":
        return "ols", tr.estimator_predictor(_ols_predict)
    if kind == "ridge":
        lam = float(entry["lam"])
        return f"ridge(lam={lam:g})", tr.estimator_predictor(lambda A: _ridge_predict(A, lam))
    if kind == "bayes_ridge":
        if not isinstance(family, tg.LinearFixedNoise):
            raise ConfigError("estimators", "bayes_ridge needs a linear_fixed_noise family")
        lam = bl.bayes_ridge_lambda(family.sigma, family.d)
        return "bayes_ridge", tr.estimator_predictor(lambda A: _ridge_predict(A, lam))
    if kind == "smoother":
        kernel = fm.kernel_from_config(entry["kernel"], family.d)
        return (f"smoother({entry['kernel']})",
                tr.estimator_predictor(lambda A: bl.smoother_predict(A, kernel)))
    if kind == "one_step_gd":
        gain = entry.get("gain")

        def predict(A):
            c = gain if gain is not None else 1.0 / (A.n - 1 + A.d + 2)
            return bl.one_step_gd_predict(A, c)

        return "one_step_gd", tr.estimator_predictor(predict)
    raise ConfigError("estimators", f"unknown estimator kind {kind!r}")


# -- execution ----------------------------------------------------------------------------


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() else "-" for ch in text).strip("-")


def _train_one(spec, family, tcfg) -> md.Model:
    tr._assert_train_eval_disjoint(tcfg.master_seed)
    model = md.build_model(spec, tg.SeedStream(tcfg.master_seed, "init").generator())
    tr.train(model, family, tcfg)
    return model


def _run_family(cfg: ExperimentConfig, family, store: ResultStore,
                report: tr.EvalReport, progress) -> None:
    fam_slug = _slug(tg.family_kind(family))
    for entry in cfg.models:
        spec = model_spec_for(entry, family, cfg.train)
        model_id = entry.get("id", md.model_kind(spec))
        for seed in cfg.seeds:
            if cfg.task_scaling:
                for T in cfg.task_scaling.T_values:
                    tcfg = train_config_for(cfg, T, seed)
                    progress(f"train {fam_slug} {model_id} T={T} seed={seed}")
                    model = _train_one(spec, family, tcfg)
                    report.extend(tr.evaluate(
                        tr.model_predictor(model), family, [cfg.task_scaling.eval_N],
                        cfg.eval_tasks, seed=seed, model_id=model_id, T=T))
                    if cfg.checkpoints:
                        md.save_checkpoint(
                            store.checkpoint_path(f"{fam_slug}_{_slug(model_id)}_task_T{T}_seed{seed}"),
                            model, seed=seed, step=tcfg.steps)
            if cfg.context_scaling:
                T = cfg.train.num_tasks
                tcfg = train_config_for(cfg, T, seed)
                progress(f"train {fam_slug} {model_id} contexts seed={seed}")
                model = _train_one(spec, family, tcfg)
                report.extend(tr.evaluate(
                    tr.model_predictor(model), family, cfg.context_scaling.N_values,
                    cfg.eval_tasks, seed=seed, model_id=model_id, T=T))
                if cfg.checkpoints:
                    md.save_checkpoint(
                        store.checkpoint_path(f"{fam_slug}_{_slug(model_id)}_context_T{T}_seed{seed}"),
                        model, seed=seed, step=tcfg.steps)
    for entry in cfg.estimators:
        model_id, predictor = estimator_for(entry, family)
        N_values = []
        if cfg.task_scaling:
            N_values.append(cfg.task_scaling.eval_N)
        if cfg.context_scaling:
            N_values.extend(N for N in cfg.context_scaling.N_values if N not in N_values)
        for seed in cfg.seeds:
            progress(f"evaluate {fam_slug} {model_id} seed={seed}")
            report.extend(tr.evaluate(predictor, family, N_values, cfg.eval_tasks,
                                      seed=seed, model_id=model_id, T=0))


def run_experiment(cfg: ExperimentConfig, output=None,
                   progress=None) -> ResultStore:
    """Execute all sweep cells and persist CSV, config, and manifest."""
    progress = progress or (lambda msg: None)
    store = ResultStore(output_root(output) / cfg.name, cfg).open()
    report = tr.EvalReport()
    try:
        for family in cfg.families:
            _run_family(cfg, family, store, report, progress)
        store.write_report(report)
        store.finalize()
    except Exception as exc:
        if report.rows:
            store.write_report(report)
        store.fail(exc)
        raise
    return store
