"""Synthetic multi-domain regression tasks with controllable adapter conflict.

Every domain i owns a rank-t teacher delta ΔT_i = scale · U_i V_i^T added to
the backbone's end-to-end map. The left bases mix a common block S with a
private block P_i: U_i = sqrt(overlap) S + sqrt(1 - overlap) P_i, so the
principal cosines between two domains' left subspaces equal ``overlap``.
A cross-domain task (a, b) targets the backbone plus *both* deltas.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from config.settings import RunConfig
from linalg.matrix import DenseMatrix
from linalg.regression import mse
from pruning.backbone import CHAIN, Backbone
from utils.errors import ConfigError, DataError
from utils.types import Batch

logger = logging.getLogger(__name__)

# SeedSequence tags; keeping them fixed makes each stream independent of N.
_BACKBONE = 1
_BASES = 2
_CALIBRATION = 3
_DOMAIN = 100
_CROSS = 10_000


@dataclass(frozen=True)
class SyntheticDomain:
    domain_id: int
    delta_teacher: DenseMatrix
    train: Batch
    test: Batch


@dataclass(frozen=True)
class CrossDomainTask:
    pair: tuple[int, int]
    test: Batch


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    """Independent generator for one purpose within a seeded run."""
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def gen_backbone(config: RunConfig, seed: int | None = None) -> Backbone:
    seed = config.seed if seed is None else seed
    rng = rng_for(seed, _BACKBONE)
    d = config.domains
    if config.model.topology == CHAIN:
        h = config.model.hidden
        up = rng.normal(0.0, np.sqrt(1.0 / d.d_in), size=(h, d.d_in))
        down = rng.normal(0.0, np.sqrt(1.0 / h), size=(d.d_out, h))
        return Backbone.chain(DenseMatrix.of(up), DenseMatrix.of(down))
    w = rng.normal(0.0, np.sqrt(1.0 / d.d_in), size=(d.d_out, d.d_in))
    return Backbone.single(DenseMatrix.of(w))


def teacher_deltas(config: RunConfig, seed: int | None = None) -> list[DenseMatrix]:
    seed = config.seed if seed is None else seed
    d = config.domains
    n, t = config.num_clients, d.teacher_rank
    if (n + 1) * t > d.d_out or t > d.d_in:
        raise ConfigError([f"teacher rank {t} with {n} domains does not fit d_out={d.d_out}, d_in={d.d_in}"])
    rng = rng_for(seed, _BASES)
    q, _ = np.linalg.qr(rng.normal(size=(d.d_out, (n + 1) * t)))
    shared = q[:, :t]
    mix_shared = np.sqrt(d.overlap)
    mix_private = np.sqrt(1.0 - d.overlap)
    deltas = []
    for i in range(n):
        private = q[:, (i + 1) * t:(i + 2) * t]
        left = mix_shared * shared + mix_private * private
        right, _ = np.linalg.qr(rng.normal(size=(d.d_in, t)))
        deltas.append(DenseMatrix.of(d.teacher_scale * (left @ right.T)))
    return deltas


def gen_domains(config: RunConfig, seed: int | None = None) -> tuple[Backbone, list[SyntheticDomain], list[CrossDomainTask]]:
    """Backbone, one domain per client, and a cross-domain task per domain pair."""
    seed = config.seed if seed is None else seed
    d = config.domains
    backbone = gen_backbone(config, seed)
    base = backbone.effective().values
    deltas = teacher_deltas(config, seed)

    domains = []
    for i, delta in enumerate(deltas):
        rng = rng_for(seed, _DOMAIN + i)
        truth = base + delta.values
        train = _regression_batch(rng, truth, d.train_samples, d.noise)
        test = _regression_batch(rng, truth, d.test_samples, d.noise)
        domains.append(SyntheticDomain(domain_id=i, delta_teacher=delta, train=train, test=test))

    tasks = []
    for k, (a, b) in enumerate(itertools.combinations(range(len(deltas)), 2)):
        rng = rng_for(seed, _CROSS + k)
        truth = base + deltas[a].values + deltas[b].values
        batch = _regression_batch(rng, truth, d.cross_samples, 0.0)
        for solo in (a, b):
            residual = mse((base + deltas[solo].values) @ batch.inputs, batch.targets)
            if residual < config.eval.hardness_floor:
                raise DataError(
                    f"cross-domain task {(a, b)} is nearly solvable with domain {solo} alone "
                    f"(mse {residual:.3g} < floor {config.eval.hardness_floor})"
                )
        tasks.append(CrossDomainTask(pair=(a, b), test=batch))

    logger.info("generated %d domain(s) and %d cross-domain task(s) (seed %d)", len(domains), len(tasks), seed)
    return backbone, domains, tasks


def gen_calibration(config: RunConfig, backbone: Backbone, seed: int | None = None) -> Batch | None:
    """Public calibration batch for importance scoring, or None for magnitude scoring.

    Targets follow an unrelated random low-rank shift so the backbone's loss
    (and hence its gradient) is not identically zero.
    """
    size = config.prune.calibration_size
    if size == 0:
        return None
    seed = config.seed if seed is None else seed
    d = config.domains
    rng = rng_for(seed, _CALIBRATION)
    t = d.teacher_rank
    shift = rng.normal(size=(d.d_out, t)) @ rng.normal(size=(t, d.d_in)) / np.sqrt(d.d_in)
    truth = backbone.effective().values + shift
    return _regression_batch(rng, truth, size, 0.0)


def _regression_batch(rng: np.random.Generator, truth: np.ndarray, n: int, noise: float) -> Batch:
    x = rng.normal(size=(truth.shape[1], n))
    y = truth @ x
    if noise > 0:
        y = y + noise * rng.normal(size=y.shape)
    return Batch.of(x, y)
