"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (one-line message on stderr),
2 usage error. Progress goes to stderr; machine output goes to the files
named by flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataset, gradcheck, harness, metrics, pgm
from .nn.checkpoint import CheckpointError

log = logging.getLogger("diqa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _proportions(text):
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) <= 0:
        raise argparse.ArgumentTypeError(f"expected three non-negative numbers with a positive sum, got {text!r}")
    return parts


def _tau(text):
    v = float(text)
    if not 0.5 < v < 1:
        raise argparse.ArgumentTypeError(f"tau must lie in (0.5, 1), got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diqa", description="Diagnostic image-quality classification toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic motion-artifact corpus with manifest")
    s.add_argument("--out", required=True, type=Path, help="output directory")
    s.add_argument("--n", required=True, type=int, help="number of images")
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--size", type=int, default=64, help="image side in pixels (default 64)")
    s.add_argument("--proportions", type=_proportions, default=dataset.REFERENCE_PROPORTIONS,
                   help="class weights non-diagnostic,diagnostic,excellent (default 518,1220,372)")
    s.add_argument("--rater-noise", type=float, default=0.15, help="second-rater boundary flip probability")
    s.add_argument("--split", default="0.7,0.1,0.2", type=_proportions,
                   help="train,eval,test ratios assigned to the manifest (default 0.7,0.1,0.2)")

    t = sub.add_parser("train", help="train a network on a manifest")
    t.add_argument("--manifest", required=True, type=Path)
    t.add_argument("--arch", choices=("convnet4", "resnet10"), default="convnet4")
    t.add_argument("--task", choices=("binary", "three"), default="binary")
    t.add_argument("--seed", required=True, type=int)
    t.add_argument("--steps", type=int, default=10000)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--size", type=int, default=64)
    t.add_argument("--eval-interval", type=int, default=100)
    t.add_argument("--labels", choices=dataset.POLICIES, default="rater_a", help="label policy (default rater_a)")
    t.add_argument("--out", required=True, type=Path, help="checkpoint path")
    t.add_argument("--curve", type=Path, help="training curve CSV")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--manifest", required=True, type=Path)
    e.add_argument("--ckpt", required=True, type=Path)
    e.add_argument("--split", choices=("test", "eval", "train"), default="test")
    e.add_argument("--task", choices=("binary", "three"), default="binary")
    e.add_argument("--size", type=int, help="expected input size; must match the checkpoint")
    e.add_argument("--labels", choices=dataset.POLICIES, default="rater_a")
    e.add_argument("--out", required=True, type=Path, help="metrics JSON")
    e.add_argument("--roc", type=Path, help="ROC CSV (binary) or prefix for per-class CSVs")

    a = sub.add_parser("agreement", help="Jaccard matrix between the two raters")
    a.add_argument("--manifest", required=True, type=Path)
    a.add_argument("--out", required=True, type=Path)

    v = sub.add_parser("activations", help="export channel-mean activation maps")
    v.add_argument("--ckpt", required=True, type=Path)
    v.add_argument("--image", required=True, type=Path)
    v.add_argument("--out", required=True, type=Path, help="output directory")
    v.add_argument("--compare", type=Path, help="second image; writes discriminability.json")

    u = sub.add_parser("suspects", help="list confidently contradicted labels")
    u.add_argument("--manifest", required=True, type=Path)
    u.add_argument("--ckpt", required=True, type=Path)
    u.add_argument("--tau", type=_tau, default=0.9)
    u.add_argument("--split", choices=("train", "eval", "test", "all"), default="train")
    u.add_argument("--labels", choices=dataset.POLICIES, default="rater_a")
    u.add_argument("--out", required=True, type=Path)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--draws", type=int, default=20)
    return p


def cmd_synth(args):
    cfg = dataset.CorpusConfig(n=args.n, proportions=args.proportions, rater_noise=args.rater_noise,
                               seed=args.seed, size=args.size)
    manifest = dataset.synthesize_corpus(args.out, cfg)
    manifest = dataset.split_dataset(manifest, dataset.SplitConfig(args.split, seed=args.seed))
    dataset.write_manifest(manifest, args.out / "manifest.csv")
    log.info("wrote %d images, class counts %s", len(manifest), dataset.class_distribution(manifest))


def cmd_train(args):
    manifest = dataset.read_manifest(args.manifest)
    arch = "resnet10lite" if args.arch == "resnet10" else args.arch
    cfg = harness.TrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr, seed=args.seed, arch=arch,
                              task=args.task, input_size=args.size, eval_interval=args.eval_interval,
                              label_policy=args.labels)
    result = harness.train(cfg, manifest)
    harness.save_checkpoint(result.network, args.out)
    if args.curve:
        result.curve.write(args.curve)


def cmd_eval(args):
    net = harness.load_checkpoint(args.ckpt)
    if args.size is not None and args.size != net.input_size:
        raise ValueError(f"shape mismatch: checkpoint expects {net.input_size}x{net.input_size} input, --size is {args.size}")
    manifest = dataset.read_manifest(args.manifest)
    bundle = harness.evaluate(net, manifest, args.split, args.task, args.labels)
    metrics.write_json(bundle, args.out)
    if args.roc and bundle.roc:
        if len(bundle.roc) == 1:
            args.roc.write_text(bundle.roc[0].to_csv(), encoding="utf-8")
        else:
            for k, curve in enumerate(bundle.roc):
                Path(f"{args.roc}.class{k}.csv").write_text(curve.to_csv(), encoding="utf-8")


def cmd_agreement(args):
    manifest = dataset.read_manifest(args.manifest)
    a = [r.rater_a for r in manifest]
    b = [r.rater_b for r in manifest]
    j = metrics.jaccard_matrix(a, b, 3)
    args.out.write_text(json.dumps({"jaccard": j.tolist()}, indent=2) + "\n", encoding="utf-8")


def cmd_activations(args):
    net = harness.load_checkpoint(args.ckpt)
    image = pgm.read_pgm(args.image)
    harness.export_activations(net, image, args.out)
    if args.compare:
        other = pgm.read_pgm(args.compare)
        scores = harness.layer_discriminability(net, image, other)
        (args.out / "discriminability.json").write_text(
            json.dumps({"scores": scores}, indent=2) + "\n", encoding="utf-8")


def cmd_suspects(args):
    net = harness.load_checkpoint(args.ckpt)
    manifest = dataset.read_manifest(args.manifest)
    found = harness.flag_suspect_labels(net, manifest, args.split, args.tau, policy=args.labels)
    args.out.write_text(harness.suspects_to_csv(found), encoding="utf-8")
    log.info("flagged %d samples", len(found))


def cmd_gradcheck(args):
    results = gradcheck.run_suite(args.seed, args.draws)
    failed = [r for r in results if not r.passed]
    for name in dict.fromkeys(r.name for r in results):
        worst = max(r.max_rel_error for r in results if r.name == name)
        print(f"{name}: worst relative error {worst:.3e}")
    if failed:
        raise RuntimeError(f"{len(failed)} of {len(results)} gradient checks exceed tolerance {gradcheck.TOLERANCE}")


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "agreement": cmd_agreement,
    "activations": cmd_activations, "suspects": cmd_suspects, "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, ArithmeticError, RuntimeError, CheckpointError, pgm.PGMError) as exc:
        msg = " ".join(str(exc).split())
        print(f"diqa {args.command}: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
