"""``skelflow`` command line: data generation, training, scores, masks, evaluation.

Every command writes ``config.resolved`` into ``--out`` before doing any
work. Training commands add ``report.ndjson`` and ``checkpoints/``.
All randomness derives from the root seed through :mod:`skelflow.seeding`.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fusion as fusion_mod
from .attention import export_mask_pgm
from .c3d import C3dNet, build_c3d
from .config import MissingKeyError, RunConfig
from .data import Sample, confusion_counts, generate_benchmark, load_dataset, make_splits, save_dataset
from .errors import CheckFailedError, InvalidArgumentError, PolicyError, TrainingDivergedError
from .seeding import check_seed, int_seed, rng_for
from .skeleton import SkeletonNet, build_skeleton_net, parse_layers
from .tensor.blob import load_checkpoint, save_checkpoint
from .training import (
    Report,
    eval_clips,
    flow_probabilities,
    prepare_flow,
    sample_scores,
    sequence_metrics,
    skeleton_arrays,
    skeleton_probabilities,
    train_flow,
    train_skeleton,
)

ATTENTION_CHOICES = ("none", "at1", "at2")
POLICY_CHOICES = ("joint", "frozen")


# ---------------------------------------------------------------------------
# score and prediction tables


def write_score_table(path, ids: Sequence[str], scores: np.ndarray) -> Path:
    """One ``<sample_id> s_1 ... s_J`` line per sample."""
    path = Path(path)
    lines = ["# sample_id then one informativeness score per joint"]
    lines += [sid + " " + " ".join(f"{v:.17g}" for v in row) for sid, row in zip(ids, scores)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_score_table(path) -> dict[str, np.ndarray]:
    table = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        try:
            table[parts[0]] = np.array([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise InvalidArgumentError(f"{path}:{n}: {exc}") from exc
    return table


def read_predictions(path) -> dict[str, int]:
    """``<sample_id> <class>`` lines."""
    preds = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidArgumentError(f"{path}:{n}: expected '<sample_id> <class>'")
        preds[parts[0]] = int(parts[1])
    return preds


def scores_for(table: dict[str, np.ndarray], samples: Sequence[Sample], path) -> np.ndarray:
    missing = [s.sample_id for s in samples if s.sample_id not in table]
    if missing:
        raise InvalidArgumentError(f"{path} has no scores for {len(missing)} samples, e.g. {missing[0]}")
    return np.stack([table[s.sample_id] for s in samples])


# ---------------------------------------------------------------------------
# shared plumbing


class Run:
    def __init__(self, cfg: RunConfig, out: Path) -> None:
        self.cfg = cfg
        self.out = out
        self.seed = int(cfg.get("seed"))
        self._samples: Optional[list[Sample]] = None

    def rng(self, *names: str) -> np.random.Generator:
        return rng_for(self.seed, *names)

    def report(self) -> Report:
        return Report(self.out / "report.ndjson", bool(self.cfg.get("run.record_wall_time")))

    def samples(self) -> list[Sample]:
        if self._samples is None:
            manifest = Path(self.cfg.require("data.manifest", "path to a manifest.txt written by gen-data"))
            if not manifest.exists():
                raise InvalidArgumentError(f"dataset manifest {manifest} does not exist")
            self._samples = load_dataset(manifest)
        return self._samples

    def splits(self) -> tuple[list[Sample], list[Sample]]:
        return make_splits(
            self.samples(),
            self.cfg.get("data.protocol"),
            tuple(self.cfg.get("data.train_actors")),
            int(self.cfg.get("data.test_view")),
        )

    def save(self, module, name: str) -> Path:
        base = self.out / "checkpoints" / name
        base.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(module.state_dict(), base)
        return base

    def load_into(self, module, key: str, why: str) -> None:
        path = Path(self.cfg.require(key, why))
        if not path.with_suffix(".bin").exists():
            raise InvalidArgumentError(f"checkpoint {path}.bin does not exist ({key})")
        module.load_state_dict(load_checkpoint(path))

    def skeleton(self, required: bool = True) -> tuple[SkeletonNet, bool]:
        net = build_skeleton_net(self.cfg.skeleton_model(), self.rng("skeleton", "init"))
        if self.cfg.get("skeleton.checkpoint") is None and not required:
            return net, False
        self.load_into(net, "skeleton.checkpoint", "a skeleton checkpoint from train-skeleton")
        net.eval()
        return net, True

    def flow_net(self, attention=None, load: bool = False) -> C3dNet:
        net = build_c3d(self.cfg.flow_model(attention), self.rng("flow", "init"))
        if load:
            self.load_into(net, "flow.checkpoint", "a flow checkpoint from train-flow")
            net.eval()
        return net

    def score_table(self, samples: Sequence[Sample]) -> np.ndarray:
        path = self.cfg.require("flow.scores", "level-2 attention needs a scores.txt from extract-scores")
        if not Path(path).exists():
            raise InvalidArgumentError(f"scores file {path} does not exist")
        return scores_for(read_score_table(path), samples, path)


def _summary(report: Report) -> str:
    parts = []
    for split in ("train", "test"):
        rec = report.last(split)
        if rec is not None:
            parts.append(f"{split} accuracy {rec['accuracy']:.4f}")
    return ", ".join(parts)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(run: Run, args) -> str:
    bench = run.cfg.benchmark()
    samples = generate_benchmark(bench, int_seed(run.seed, "data"))
    manifest = save_dataset(samples, run.out / "data")
    return f"wrote {len(samples)} samples; manifest {manifest}"


def cmd_train_skeleton(run: Run, args) -> str:
    train, test = run.splits()
    net = build_skeleton_net(run.cfg.skeleton_model(), run.rng("skeleton", "init"))
    report = train_skeleton(net, train, test, run.cfg.train_config("skeleton"), run.rng("skeleton", "train"), run.report())
    ckpt = run.save(net, "skeleton")
    return f"{_summary(report)}; checkpoint {ckpt}"


def cmd_extract_scores(run: Run, args) -> str:
    layers = args.layers if args.layers is not None else run.cfg.get("scores.layers")
    parse_layers(layers)
    net, _ = run.skeleton()
    samples = run.samples()
    scores = sample_scores(net, samples, layers)
    path = write_score_table(run.out / "scores.txt", [s.sample_id for s in samples], scores)
    return f"scores for {len(samples)} samples ({layers}) in {path}"


def cmd_train_flow(run: Run, args) -> str:
    attention = args.attention if args.attention is not None else run.cfg.get("flow.model.attention")
    net = run.flow_net(attention)
    train, test = run.splits()
    train_scores = test_scores = None
    if 2 in net.cfg.attention:
        train_scores, test_scores = run.score_table(train), run.score_table(test)
    report = train_flow(
        net, train, test, run.cfg.train_config("flow"), run.cfg.flow_prep(),
        run.rng("flow", "train"), run.report(), train_scores, test_scores,
    )
    ckpt = run.save(net, "flow")
    return f"{_summary(report)}; checkpoint {ckpt}"


def _fused(run: Run, policy: Optional[str], attention=None, for_eval: bool = False):
    skeleton, pretrained = run.skeleton(required=for_eval)
    flow = run.flow_net(attention)
    if not for_eval and run.cfg.get("flow.checkpoint") is not None:
        run.load_into(flow, "flow.checkpoint", "")
    fcfg = run.cfg.fusion(flow.cfg.feature_width, skeleton.cfg.feature_width, flow.cfg.num_classes, policy)
    net = fusion_mod.build_fused(skeleton, flow, fcfg, run.rng("fusion", "init"))
    return net, pretrained


def cmd_train_fused(run: Run, args) -> str:
    net, pretrained = _fused(run, args.policy, args.attention)
    train, test = run.splits()
    before = fusion_mod.parameter_checksum(net.skeleton)
    report = fusion_mod.train(
        net, train, test, run.cfg.train_config("fusion"), run.cfg.flow_prep(),
        run.rng("fusion", "train"), run.report(), skeleton_pretrained=pretrained,
    )
    after = fusion_mod.parameter_checksum(net.skeleton)
    ckpt = run.save(net, "fused")
    frozen = "unchanged" if before == after else "updated"
    return f"{_summary(report)}; skeleton parameters {frozen}; checkpoint {ckpt}"


def cmd_render_masks(run: Run, args) -> str:
    level = int(args.level if args.level is not None else run.cfg.get("masks.level"))
    if level not in (1, 2):
        raise InvalidArgumentError(f"masks.level must be 1 or 2, got {level}")
    layer = int(run.cfg.get("masks.layer"))
    index = int(run.cfg.get("masks.sample"))
    samples = run.samples()
    if not 0 <= index < len(samples):
        raise InvalidArgumentError(f"masks.sample {index} outside [0, {len(samples)})")
    sample = samples[index]
    net = run.flow_net(level)
    if not 1 <= layer <= len(net.cfg.conv_channels):
        raise InvalidArgumentError(f"masks.layer {layer} outside [1, {len(net.cfg.conv_channels)}]")
    prep = run.cfg.flow_prep()
    clip = eval_clips(prepare_flow([sample], prep)[0], prep)[0]
    scores = run.score_table([sample]) if level == 2 else None
    masks = net.build_masks(clip.joints2d[None], clip.valid[None], scores)
    mask = masks[layer - 1][0, 0]
    out = run.out / "masks"
    export_mask_pgm(mask, out, prefix=f"{sample.sample_id}_layer{layer}")
    return f"wrote {len(mask)} masks of {mask.shape[2]}x{mask.shape[1]} to {out}"


def cmd_eval(run: Run, args) -> str:
    kind = args.model if args.model is not None else run.cfg.get("eval.model")
    _, test = run.splits()
    labels = np.array([s.label for s in test])
    num_classes = int(run.cfg.get("data.benchmark.num_classes"))
    if kind == "predictions":
        path = run.cfg.require("eval.predictions", "a '<sample_id> <class>' file")
        table = read_predictions(path)
        missing = [s.sample_id for s in test if s.sample_id not in table]
        if missing:
            raise InvalidArgumentError(f"{path} has no prediction for {missing[0]}")
        result = confusion_counts(labels, [table[s.sample_id] for s in test], num_classes)
    else:
        prep = run.cfg.flow_prep()
        if kind == "skeleton":
            net, _ = run.skeleton()
            x, _ = skeleton_arrays(test, net.cfg.frames)
            probs = skeleton_probabilities(net, x)
        elif kind == "flow":
            net = run.flow_net(load=True)
            scores = run.score_table(test) if 2 in net.cfg.attention else None
            probs = flow_probabilities(net, [eval_clips(it, prep) for it in prepare_flow(test, prep)], scores)
        elif kind == "fused":
            net, _ = _fused(run, None, for_eval=True)
            run.load_into(net, "fusion.checkpoint", "a fused checkpoint from train-fused")
            x, _ = skeleton_arrays(test, net.skeleton.cfg.frames)
            clips = [eval_clips(it, prep) for it in prepare_flow(test, prep)]
            probs = fusion_mod.fused_probabilities(net, x, clips)
        else:
            raise InvalidArgumentError(f"unknown eval model {kind!r}")
        _, result = sequence_metrics(probs, labels, num_classes)
    path = run.out / "eval.txt"
    path.write_text(result.report(), encoding="utf-8")
    return f"accuracy {result.accuracy:.4f} on {len(test)} test samples; report {path}"


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic benchmark"),
    "train-skeleton": (cmd_train_skeleton, "train the Res-TCN-BJCN skeleton network"),
    "train-flow": (cmd_train_flow, "train the C3D flow network, optionally with attention"),
    "train-fused": (cmd_train_fused, "train the late-fused network"),
    "extract-scores": (cmd_extract_scores, "write per-joint informativeness scores"),
    "render-masks": (cmd_render_masks, "write per-frame attention masks as PGM"),
    "eval": (cmd_eval, "accuracy and confusion matrix on the test split"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skelflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path); repeatable")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", help="root seed, an unsigned 64-bit integer")
        if name in ("train-flow", "train-fused"):
            p.add_argument("--attention", choices=ATTENTION_CHOICES)
        if name == "train-fused":
            p.add_argument("--policy", choices=POLICY_CHOICES)
        if name == "extract-scores":
            p.add_argument("--layers", help="1, 2, 3, 4 or sum")
        if name == "render-masks":
            p.add_argument("--level", type=int, choices=(1, 2))
        if name == "eval":
            p.add_argument("--model", choices=("skeleton", "flow", "fused", "predictions"))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = COMMANDS[args.command][0]
    try:
        seed = check_seed(args.seed) if args.seed is not None else None
        cfg = RunConfig.load(args.config, args.overrides, seed)
        check_seed(cfg.get("seed"))
        out = Path(args.out)
        cfg.write_resolved(out)
        message = handler(Run(cfg, out), args)
    except MissingKeyError as exc:
        print(f"skelflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (InvalidArgumentError, PolicyError, CheckFailedError, TrainingDivergedError, OSError, TypeError) as exc:
        print(f"skelflow {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(message)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
