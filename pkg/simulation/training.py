"""Local LoRA training on a frozen (possibly pruned) backbone.

The language-model loss of the real setting is replaced by mean squared error
on synthetic regression data; the procedure is unchanged: the backbone stays
frozen and only the factors B and A move, by plain full-batch gradient descent.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from adapters.lora import LoraAdapter, init_adapter, materialize
from config.settings import RunConfig
from linalg.matrix import DenseMatrix
from linalg.regression import chain_mse_gradients
from pruning.backbone import Backbone
from utils.errors import ParameterError, ShapeError, TrainingError
from utils.types import Batch

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12

# Seed tag for adapter initialization; shared by all clients so FFA's frozen A agrees.
_ADAPTER_INIT = 4


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    rank: int
    alpha: float
    seed: int = 0
    loss: str = "mse"
    full_batch: bool = True
    freeze_a: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning rate must be positive, got {self.learning_rate!r}")
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if self.loss != "mse":
            raise ParameterError(f"unsupported loss {self.loss!r}")
        if not self.full_batch:
            raise ParameterError("only full-batch gradient descent is supported")
        if self.rank < 1:
            raise ParameterError(f"rank must be >= 1, got {self.rank}")

    @classmethod
    def from_run(cls, config: RunConfig, *, freeze_a: bool = False) -> "TrainConfig":
        return cls(
            learning_rate=config.train.lr,
            steps=config.train.steps,
            rank=config.lora.rank,
            alpha=config.lora.alpha,
            seed=config.seed,
            freeze_a=freeze_a,
        )


def init_adapters(pruned: Backbone, cfg: TrainConfig) -> dict[str, LoraAdapter]:
    """One adapter per layer of ``pruned``, identical for every client sharing ``cfg.seed``."""
    adapters = {}
    for idx, (name, w) in enumerate(pruned):
        rank = min(cfg.rank, w.rows, w.cols)
        if rank < cfg.rank:
            logger.warning("layer %s: rank %d clamped to %d by pruned dims %dx%d", name, cfg.rank, rank, w.rows, w.cols)
        seed = int(np.random.SeedSequence([cfg.seed, _ADAPTER_INIT, idx]).generate_state(1)[0])
        adapters[name] = init_adapter(w.rows, w.cols, rank, cfg.alpha, seed, layer_name=name)
    return adapters


def adapted_mats(backbone: Backbone, adapters: Mapping[str, LoraAdapter]) -> list[np.ndarray]:
    """Per-layer weights W_l + ΔW_l, input to output."""
    mats = []
    for name, w in backbone:
        adapter = adapters.get(name)
        if adapter is None:
            mats.append(w.values)
            continue
        if (adapter.d_out, adapter.d_in) != w.shape:
            raise ShapeError("local_train", w.shape, (adapter.d_out, adapter.d_in), where=f"layer {name!r}")
        mats.append(w.values + materialize(adapter).values)
    return mats


def loss_and_gradients(
    backbone: Backbone, adapters: Mapping[str, LoraAdapter], batch: Batch
) -> tuple[float, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """MSE and its gradients with respect to every adapter's (B, A)."""
    mats = adapted_mats(backbone, adapters)
    loss, layer_grads = chain_mse_gradients(mats, batch.inputs, batch.targets)
    grads = {}
    for (name, _), g in zip(backbone, layer_grads):
        adapter = adapters.get(name)
        if adapter is None:
            continue
        s = adapter.scale
        grads[name] = (s * g @ adapter.A.values.T, s * adapter.B.values.T @ g)
    return loss, grads


def local_train(pruned: Backbone, adapter, domain, cfg: TrainConfig, *, client: str | None = None):
    """Gradient descent on the adapter factors only.

    ``adapter`` is a single LoraAdapter, a mapping layer name -> adapter, or
    None to start from ``init_adapters(pruned, cfg)``;
    ``domain`` is a SyntheticDomain (its train split is used) or a Batch.
    Returns the trained adapter(s), in the same form, and the loss trace of
    steps + 1 entries.
    """
    if adapter is None:
        adapter = init_adapters(pruned, cfg)
    single = isinstance(adapter, LoraAdapter)
    adapters = {adapter.layer_name: adapter} if single else dict(adapter)
    batch = domain if isinstance(domain, Batch) else domain.train

    factors = {name: [a.B.values.copy(), a.A.values.copy()] for name, a in adapters.items()}
    trace: list[float] = []

    def current() -> dict[str, LoraAdapter]:
        return {
            name: adapters[name].with_factors(DenseMatrix.of(b), DenseMatrix.of(a))
            for name, (b, a) in factors.items()
        }

    state = adapters
    for step in range(cfg.steps + 1):
        loss, grads = loss_and_gradients(pruned, state, batch)
        if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise TrainingError(step, loss, client=client)
        trace.append(loss)
        if step == cfg.steps:
            break
        logger.debug("%s step %d loss %.6g", client or "client", step, loss)
        for name, (g_b, g_a) in grads.items():
            b, a = factors[name]
            b -= cfg.learning_rate * g_b
            if not cfg.freeze_a:
                a -= cfg.learning_rate * g_a
        state = current()

    if cfg.steps == 0:
        return adapter, trace
    trained = state
    return (trained[adapter.layer_name] if single else trained), trace
