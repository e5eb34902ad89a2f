"""End-to-end cloud-edge run: prune, train, recover, de-conflict, fuse, evaluate.

The helpers below are also the building blocks of the stage-by-stage CLI, so
a pipeline run and a sequence of single-stage invocations compute the same
values from the same config and seed.
"""
from __future__ import annotations

import contextlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from adapters.lora import LoraAdapter, materialize
from adapters.recovery import recover
from config.settings import RunConfig
from connectors.adapter_file import SUFFIX, write_adapter
from connectors.report_io import write_json, write_report
from linalg.matrix import DenseMatrix
from processors.conflict import (
    ConflictReport,
    DeconflictedAdapterSet,
    LayerConflict,
    deconflict,
    mean_conflict,
    resolve,
)
from processors.fusion import FFA, apply_fusion, fuse_layer
from pruning.backbone import Backbone
from pruning.importance import group_importance
from pruning.selection import LayerPrune, PruneMap, apply_prune, select_groups
from simulation.domains import CrossDomainTask, SyntheticDomain, gen_calibration, gen_domains
from simulation.evaluation import evaluate, evaluate_adapted
from simulation.training import TrainConfig, init_adapters, local_train
from utils.errors import AccountingError, ConfigError, StageError, UsageError
from utils.types import Batch

logger = logging.getLogger(__name__)

SURROGATE_LOSS = (
    "mean squared error on synthetic linear regression, standing in for the "
    "next-token prediction loss of language-model fine-tuning"
)

BASE = "base"
FUSED_NO_CR = "fused_no_cr"
FUSED_CR = "fused_cr"


@dataclass(frozen=True)
class ClientRun:
    client: int
    adapters: dict[str, LoraAdapter]
    trace: tuple[float, ...]

    @property
    def initial_loss(self) -> float:
        return self.trace[0]

    @property
    def final_loss(self) -> float:
        return self.trace[-1]


@dataclass
class RunReport:
    config: dict[str, Any]
    seed: int
    cr_enabled: bool
    prune: dict[str, Any]
    clients: list[dict[str, Any]]
    conflict: dict[str, Any]
    in_domain: dict[str, dict[str, float]]
    cross_domain: dict[str, dict[str, float]]
    timings: dict[str, float] = field(default_factory=dict)
    surrogate_loss: str = SURROGATE_LOSS

    def cross_mean(self, model: str) -> float:
        values = list(self.cross_domain[model].values())
        if not values:
            raise AccountingError("run has no cross-domain tasks")
        return float(np.mean(values))

    def to_dict(self, *, timings: bool = True) -> dict[str, Any]:
        out = {
            "surrogate_loss": self.surrogate_loss,
            "seed": self.seed,
            "config": self.config,
            "cr_enabled": self.cr_enabled,
            "prune": self.prune,
            "clients": self.clients,
            "conflict": self.conflict,
            "in_domain": self.in_domain,
            "cross_domain": self.cross_domain,
        }
        if timings:
            out["timings"] = self.timings
        return out


@dataclass
class PipelineResult:
    report: RunReport
    backbone: Backbone
    pruned: Backbone
    prune_map: PruneMap
    clients: list[ClientRun]
    recovered: list[dict[str, LoraAdapter]]
    fused: dict[str, dict[str, DenseMatrix]]
    models: dict[str, Backbone]
    conflict_report: ConflictReport | None = None


@contextlib.contextmanager
def stage(name: str, timings: dict[str, float] | None = None) -> Iterator[None]:
    """Time a stage and wrap any failure in a StageError naming it."""
    logger.info("stage %s", name)
    started = time.perf_counter()
    try:
        yield
    except (StageError, ConfigError, UsageError):
        raise
    except Exception as e:
        raise StageError(name, e) from e
    finally:
        if timings is not None:
            timings[name] = time.perf_counter() - started


# ------------------------------------------------------------------ building blocks

def prune_backbone(config: RunConfig, backbone: Backbone) -> tuple[PruneMap, Backbone]:
    calibration = gen_calibration(config, backbone)
    importance = group_importance(backbone, calibration)
    prune_map = select_groups(importance, config.prune.ratio)
    logger.info(
        "pruned %d -> %d parameters (ratio %.4f)",
        prune_map.total_params_before, prune_map.total_params_after, prune_map.ratio,
    )
    return prune_map, apply_prune(backbone, prune_map)


def train_clients(
    config: RunConfig,
    pruned: Backbone,
    domains: Sequence[SyntheticDomain],
    clients: Sequence[int] | None = None,
    *,
    prune_map: PruneMap | None = None,
) -> list[ClientRun]:
    """Independent local training per client; results come back in client order.

    When ``prune_map`` drops output rows, targets are restricted to the
    retained outputs so they match the pruned model.
    """
    clients = list(range(len(domains))) if clients is None else list(clients)
    cfg = TrainConfig.from_run(config, freeze_a=config.fusion.method == FFA)
    start = init_adapters(pruned, cfg)

    def job(i: int) -> ClientRun:
        batch = domains[i].train if prune_map is None else local_batch(domains[i].train, prune_map)
        adapters, trace = local_train(pruned, start, batch, cfg, client=f"client{i}")
        logger.info("client%d: loss %.6g -> %.6g", i, trace[0], trace[-1])
        return ClientRun(client=i, adapters=adapters, trace=tuple(trace))

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(job, clients))


def recover_clients(runs: Sequence[ClientRun], prune_map: PruneMap, backbone: Backbone) -> list[dict[str, LoraAdapter]]:
    recovered = []
    for run in runs:
        full = {}
        for name, adapter in run.adapters.items():
            full[name] = recover(adapter, prune_map, backbone.layer(name).shape).adapter
        recovered.append(full)
    return recovered


def by_layer(client_adapters: Sequence[Mapping[str, LoraAdapter]]) -> dict[str, list[LoraAdapter]]:
    layers: dict[str, list[LoraAdapter]] = {}
    for adapters in client_adapters:
        for name, adapter in adapters.items():
            layers.setdefault(name, []).append(adapter)
    return layers


def deconflict_layers(
    config: RunConfig, layers: Mapping[str, Sequence[LoraAdapter]]
) -> tuple[dict[str, DeconflictedAdapterSet], ConflictReport]:
    results = {}
    for name, adapters in layers.items():
        updates = [materialize(a) for a in adapters]
        results[name] = deconflict(updates, config.max_dirs, config.cr.tol, layer_name=name)
    return results, ConflictReport(layers={name: r.report for name, r in results.items()})


def resolved_conflict(dc: DeconflictedAdapterSet, layer_name: str) -> LayerConflict:
    """Conflict report of de-conflicted updates, scored in the subspace that produced them."""
    return resolve(dc.subspace, dc.updates, layer_name).report


def fuse_layers(
    config: RunConfig,
    layers: Mapping[str, Sequence[LoraAdapter]],
    deconflicted: Mapping[str, DeconflictedAdapterSet] | None = None,
) -> dict[str, DenseMatrix]:
    fused = {}
    for name, adapters in layers.items():
        updates = None if deconflicted is None else deconflicted[name].updates
        fused[name] = fuse_layer(
            config.fusion.method,
            adapters,
            factor_avg=config.fusion.factor_avg,
            updates=updates,
            rank=adapters[0].rank,
        )
    return fused


def fused_adapter(delta: DenseMatrix, layer_name: str) -> LoraAdapter:
    """Fused update as an adapter file payload; materializes back to ``delta`` bit for bit.

    One factor is the identity on the shorter side, so the rank is min(d_out, d_in).
    """
    d_out, d_in = delta.shape
    if d_out <= d_in:
        b, a = DenseMatrix.identity(d_out), delta
    else:
        b, a = delta, DenseMatrix.identity(d_in)
    return LoraAdapter(layer_name=layer_name, B=b, A=a, alpha=float(min(d_out, d_in)))


def evaluate_models(
    models: Mapping[str, Backbone],
    domains: Sequence[SyntheticDomain],
    tasks: Sequence[CrossDomainTask],
) -> tuple[dict[str, dict[str, float]], dict[str, dict[str, float]]]:
    in_domain = {m: {domain_key(d.domain_id): evaluate(b, d.test) for d in domains} for m, b in models.items()}
    cross = {m: {pair_key(t.pair): evaluate(b, t.test) for t in tasks} for m, b in models.items()}
    return in_domain, cross


def local_batch(batch: Batch, prune_map: PruneMap) -> Batch:
    rows = prune_map.output_rows
    return batch if rows is None else batch.select_outputs(rows)


def domain_key(domain_id: int) -> str:
    return f"domain{domain_id}"


def pair_key(pair: tuple[int, int]) -> str:
    return f"{pair[0]}-{pair[1]}"


# ------------------------------------------------------------------ orchestration

def run_pipeline(config: RunConfig, *, out_dir: str | Path | None = None) -> PipelineResult:
    """Run every stage; with ``out_dir`` also write adapter files and report.json."""
    timings: dict[str, float] = {}

    with stage("generate", timings):
        backbone, domains, tasks = gen_domains(config)
    with stage("prune", timings):
        prune_map, pruned = prune_backbone(config, backbone)
    with stage("train", timings):
        runs = train_clients(config, pruned, domains, prune_map=prune_map)
    # every client is recovered before any fusion input exists
    with stage("recover", timings):
        recovered = recover_clients(runs, prune_map, backbone)
        layers = by_layer(recovered)

    conflict: dict[str, Any] = {}
    conflict_report = None
    deconflicted = None
    with stage("deconflict", timings):
        pre_sets, pre_report = deconflict_layers(config, layers)
        conflict = {"layers": {name: {"pre": rep.mean_conflict} for name, rep in pre_report.layers.items()}}
        conflict["pre"] = mean_conflict(pre_report)
        if config.cr.enabled:
            deconflicted, conflict_report = pre_sets, pre_report
            post_layers = {}
            for name, dc in deconflicted.items():
                post = resolved_conflict(dc, name)
                post_layers[name] = post
                conflict["layers"][name]["post"] = post.mean_conflict
            conflict["post"] = mean_conflict(ConflictReport(layers=post_layers))

    with stage("fuse", timings):
        fused = {FUSED_NO_CR: fuse_layers(config, layers)}
        if deconflicted is not None:
            fused[FUSED_CR] = fuse_layers(config, layers, deconflicted)
        models = {BASE: backbone}
        models.update({label: apply_fusion(backbone, deltas) for label, deltas in fused.items()})

    with stage("evaluate", timings):
        in_domain, cross = evaluate_models(models, domains, tasks)
        in_domain["local"] = {
            domain_key(run.client): evaluate_adapted(pruned, run.adapters, local_batch(domains[run.client].test, prune_map))
            for run in runs
        }

    report = RunReport(
        config=config.to_dict(),
        seed=config.seed,
        cr_enabled=config.cr.enabled,
        prune={
            "ratio": prune_map.ratio,
            "params_before": prune_map.total_params_before,
            "params_after": prune_map.total_params_after,
            "groups_kept": len(prune_map.layers[0].rows),
        },
        clients=[
            {"client": r.client, "initial_loss": r.initial_loss, "final_loss": r.final_loss, "steps": len(r.trace) - 1}
            for r in runs
        ],
        conflict=conflict,
        in_domain=in_domain,
        cross_domain=cross,
        timings=timings,
    )
    result = PipelineResult(
        report=report,
        backbone=backbone,
        pruned=pruned,
        prune_map=prune_map,
        clients=runs,
        recovered=recovered,
        fused=fused,
        models=models,
        conflict_report=conflict_report,
    )
    if out_dir is not None:
        with stage("write", timings):
            write_outputs(config, result, Path(out_dir))
    return result


def write_outputs(config: RunConfig, result: PipelineResult, out: Path) -> None:
    write_json(out / "prune_map.json", result.prune_map)
    for run in result.clients:
        for name, adapter in run.adapters.items():
            path = out / "adapters" / f"client{run.client}" / f"{name}{SUFFIX}"
            write_adapter(path, adapter, result.prune_map, result.backbone.layer(name).shape, config.seed)
    final = FUSED_CR if FUSED_CR in result.fused else FUSED_NO_CR
    for name, delta in result.fused[final].items():
        write_adapter(
            out / "fused" / f"{name}{SUFFIX}",
            fused_adapter(delta, name),
            LayerPrune.full(name, *delta.shape),
            delta.shape,
            config.seed,
        )
    if result.conflict_report is not None:
        write_json(out / "conflict_report.json", result.conflict_report)
    write_report(out / "report.json", result.report)
    logger.info("wrote %s", out / "report.json")
