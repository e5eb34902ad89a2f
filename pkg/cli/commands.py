"""Command-line surface: one subcommand per stage plus the end-to-end run.

Stages hand off through files under --out, so running prune, train, recover,
cr, fuse and eval in turn reproduces a single ``pipeline`` invocation.
"""
from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path
from typing import Sequence

from adapters.lora import LoraAdapter, materialize
from adapters.recovery import recover
from config.settings import RunConfig, load_config
from connectors.adapter_file import SUFFIX, AdapterRecord, read_adapter, write_adapter
from connectors.report_io import read_json, write_json
from processors.conflict import ConflictReport, mean_conflict, refactor
from processors.fusion import FFA, apply_fusion, fuse_layer, refactor_onto
from pruning.selection import LayerPrune, PruneMap, apply_prune
from simulation.domains import gen_domains
from simulation.pipeline import (
    BASE,
    deconflict_layers,
    evaluate_models,
    fused_adapter,
    prune_backbone,
    resolved_conflict,
    run_pipeline,
    stage,
    train_clients,
)
from simulation.sweep import DEFAULT_RATIOS, sweep
from utils.errors import ConfigError, LoraFuseError, ShapeError, UsageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

FUSED = "fused"
PRUNE_MAP = "prune_map.json"
CONFLICT_REPORT = "conflict_report.json"

_CLIENT_DIR = re.compile(r"client(\d+)$")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with argparse's own code."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="lora-fuse",
        description="Prune a backbone, train LoRA adapters at the edge, and fuse them in the cloud",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration (defaults apply when omitted)")
    common.add_argument("--out", metavar="DIR", help="Output directory (default: config output_dir)")
    common.add_argument("--seed", type=int, help="Override the config seed")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("prune", parents=[common], help="Score groups and write prune_map.json")
    train = sub.add_parser("train", parents=[common], help="Train client adapters on the pruned backbone")
    train.add_argument("--client", type=int, action="append", metavar="I", help="Train only client I (repeatable)")
    sub.add_parser("recover", parents=[common], help="Zero-pad client adapters back to full dims")
    cr = sub.add_parser("cr", parents=[common], help="De-conflict recovered adapters")
    cr.add_argument("--adapters", nargs="+", metavar="FILE", help="Adapter files (default: recovered/)")
    fuse = sub.add_parser("fuse", parents=[common], help="Fuse adapters into one update per layer")
    fuse.add_argument("--adapters", nargs="+", metavar="FILE", help="Adapter files (default: deconflicted/ or recovered/)")
    sub.add_parser("eval", parents=[common], help="Evaluate base and fused models")
    sub.add_parser("pipeline", parents=[common], help="Run every stage and write report.json")
    sw = sub.add_parser("sweep", parents=[common], help="Pruning-ratio x seed grid with and without CR")
    sw.add_argument("--ratios", type=float, nargs="+", default=list(DEFAULT_RATIOS), metavar="R")
    sw.add_argument("--seeds", type=int, default=20, metavar="N", help="Number of seeds, starting at 0")
    return parser


class StageRunner:
    """Executes one command against a config and an output directory."""

    def __init__(self, config: RunConfig, out: Path):
        self.config = config
        self.out = out

    # ------------------------------------------------------------ stages

    def prune(self) -> None:
        with stage("prune"):
            backbone, _, _ = gen_domains(self.config)
            prune_map, _ = prune_backbone(self.config, backbone)
            write_json(self.out / PRUNE_MAP, {**prune_map.to_dict(), "ratio": prune_map.ratio})
        _done(f"prune map written to {self.out / PRUNE_MAP}")

    def train(self, clients: Sequence[int] | None) -> None:
        n = self.config.num_clients
        for i in clients or ():
            if not 0 <= i < n:
                raise UsageError(f"--client {i} is out of range for {n} client(s)")
        with stage("train"):
            backbone, domains, _ = gen_domains(self.config)
            prune_map = self._prune_map()
            pruned = apply_prune(backbone, prune_map)
            for run in train_clients(self.config, pruned, domains, clients, prune_map=prune_map):
                client_dir = self.out / "clients" / f"client{run.client}"
                for name, adapter in run.adapters.items():
                    write_adapter(client_dir / f"{name}{SUFFIX}", adapter, prune_map, backbone.layer(name).shape, self.config.seed)
                write_json(client_dir / "trace.json", {"client": run.client, "losses": list(run.trace)})
        _done(f"client adapters written under {self.out / 'clients'}")

    def recover(self) -> None:
        with stage("recover"):
            found = self._client_files(self.out / "clients")
            if not found:
                raise UsageError(f"no client adapters under {self.out / 'clients'}; run train first")
            for client, files in found:
                for path in files:
                    adapter = _full(read_adapter(path))
                    self._write_full(self.out / "recovered" / client / path.name, adapter)
        _done(f"recovered adapters written under {self.out / 'recovered'}")

    def cr(self, files: Sequence[str] | None) -> None:
        with stage("deconflict"):
            layers = self._load_layers(files, [self.out / "recovered"])
            results, report = deconflict_layers(self.config, {n: [a for _, a in group] for n, group in layers.items()})
            post = {}
            for name, dc in results.items():
                post[name] = resolved_conflict(dc, name)
                for k, ((_, adapter), update) in enumerate(zip(layers[name], dc.updates)):
                    if self.config.fusion.method == FFA:
                        factored = refactor_onto(update, adapter.A, adapter.scale, name, adapter.alpha)
                    else:
                        factored = refactor(update, adapter.rank, name)
                    self._write_full(self.out / "deconflicted" / f"client{k}" / f"{name}{SUFFIX}", factored)
            document = report.to_dict()
            document["post_mean_conflict"] = mean_conflict(ConflictReport(layers=post))
            write_json(self.out / CONFLICT_REPORT, document)
        logger.info("mean conflict %.6f -> %.6f", document["mean_conflict"], document["post_mean_conflict"])
        _done(f"de-conflicted adapters written under {self.out / 'deconflicted'}")

    def fuse(self, files: Sequence[str] | None) -> None:
        defaults = [self.out / "recovered"]
        if self.config.cr.enabled:
            defaults.insert(0, self.out / "deconflicted")
        with stage("fuse"):
            layers = self._load_layers(files, defaults)
            for name, group in layers.items():
                _check_dims(name, group)
                adapters = [a for _, a in group]
                delta = fuse_layer(self.config.fusion.method, adapters, factor_avg=self.config.fusion.factor_avg)
                self._write_full(self.out / FUSED / f"{name}{SUFFIX}", fused_adapter(delta, name))
        _done(f"fused adapters written under {self.out / FUSED}")

    def eval(self) -> str:
        with stage("evaluate"):
            backbone, domains, tasks = gen_domains(self.config)
            fused_files = sorted((self.out / FUSED).glob(f"*{SUFFIX}"))
            if not fused_files:
                raise UsageError(f"no fused adapters under {self.out / FUSED}; run fuse first")
            deltas = {}
            for path in fused_files:
                adapter = _full(read_adapter(path))
                deltas[adapter.layer_name] = materialize(adapter)
            models = {BASE: backbone, FUSED: apply_fusion(backbone, deltas)}
            in_domain, cross = evaluate_models(models, domains, tasks)
            conflict = None
            if (self.out / CONFLICT_REPORT).exists():
                conflict = read_json(self.out / CONFLICT_REPORT).get("mean_conflict")
            document = {"in_domain": in_domain, "cross_domain": cross}
            if conflict is not None:
                document["mean_conflict"] = conflict
            write_json(self.out / "eval.json", document)
        scores = cross if tasks else in_domain
        label = "cross" if tasks else "in-domain"
        base, fused = (_mean(scores[m].values()) for m in (BASE, FUSED))
        c_bar = f"{conflict:.6f}" if conflict is not None else "n/a"
        return f"{label} mse: base {base:.6g} | fused {fused:.6g} | mean conflict {c_bar}"

    def pipeline(self) -> None:
        run_pipeline(self.config, out_dir=self.out)
        _done(f"report written to {self.out / 'report.json'}")

    def sweep(self, ratios: Sequence[float], seeds: int) -> None:
        if seeds < 1:
            raise UsageError("--seeds must be >= 1")
        for r in ratios:
            if not 0.0 <= r <= 1.0:
                raise UsageError(f"--ratios: {r} is outside [0, 1]")
        result = sweep(self.config, ratios, range(seeds))
        write_json(self.out / "sweep.json", result)
        _done(f"sweep written to {self.out / 'sweep.json'}")

    # ------------------------------------------------------------ helpers

    def _prune_map(self) -> PruneMap:
        return PruneMap.from_dict(read_json(self.out / PRUNE_MAP))

    def _write_full(self, path: Path, adapter: LoraAdapter) -> None:
        dims = (adapter.d_out, adapter.d_in)
        write_adapter(path, adapter, LayerPrune.full(adapter.layer_name, *dims), dims, self.config.seed)

    @staticmethod
    def _client_files(root: Path) -> list[tuple[str, list[Path]]]:
        """Client directories in numeric order, each with its adapter files."""
        if not root.is_dir():
            return []
        dirs = [d for d in root.iterdir() if d.is_dir() and _CLIENT_DIR.match(d.name)]
        dirs.sort(key=lambda d: int(_CLIENT_DIR.match(d.name).group(1)))
        return [(d.name, sorted(d.glob(f"*{SUFFIX}"))) for d in dirs]

    def _load_layers(
        self, files: Sequence[str] | None, roots: Sequence[Path]
    ) -> dict[str, list[tuple[Path, LoraAdapter]]]:
        """Full-space adapters grouped by layer, in client order."""
        if files:
            paths = [Path(f) for f in files]
        else:
            paths = []
            for root in roots:
                paths = [p for _, group in self._client_files(root) for p in group]
                if paths:
                    break
            if not paths:
                raise UsageError(f"no adapter files under {' or '.join(str(r) for r in roots)}")
        layers: dict[str, list[tuple[Path, LoraAdapter]]] = {}
        for path in paths:
            adapter = _full(read_adapter(path))
            layers.setdefault(adapter.layer_name, []).append((path, adapter))
        return layers


def _full(record: AdapterRecord) -> LoraAdapter:
    """Adapter in the layer's full dimensions; a no-op for already-recovered files."""
    return recover(record.adapter, record.prune, record.full_dims).adapter


def _check_dims(name: str, group: Sequence[tuple[Path, LoraAdapter]]) -> None:
    first_path, first = group[0]
    for path, adapter in group[1:]:
        if (adapter.d_out, adapter.d_in) != (first.d_out, first.d_in):
            raise ShapeError(
                "fuse",
                (first.d_out, first.d_in),
                (adapter.d_out, adapter.d_in),
                where=f"layer {name!r}: {first_path} vs {path}",
            )


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values)


def _done(message: str) -> None:
    print(f"✓ {message}", file=sys.stderr)


def dispatch(argv: Sequence[str]) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return int(e.code or 0)

    try:
        if args.seed is not None and args.seed < 0:
            raise UsageError(f"--seed must be >= 0, got {args.seed}")
        config = load_config(args.config, seed=args.seed) if args.config else RunConfig()
        if args.seed is not None and not args.config:
            config = config.with_seed(args.seed)
        runner = StageRunner(config, Path(args.out or config.output_dir))

        if args.command == "prune":
            runner.prune()
        elif args.command == "train":
            runner.train(args.client)
        elif args.command == "recover":
            runner.recover()
        elif args.command == "cr":
            runner.cr(args.adapters)
        elif args.command == "fuse":
            runner.fuse(args.adapters)
        elif args.command == "eval":
            print(runner.eval())
        elif args.command == "pipeline":
            runner.pipeline()
        elif args.command == "sweep":
            runner.sweep(args.ratios, args.seeds)
    except (ConfigError, UsageError) as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_INVALID
    except LoraFuseError as e:
        print(f"✗ {e}", file=sys.stderr)
        logger.debug("command %s failed", args.command, exc_info=True)
        return EXIT_RUNTIME
    return EXIT_OK
