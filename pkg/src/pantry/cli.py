"""``pantry`` command-line interface.

Exit status: 0 on success, 1 for invalid input or configuration, 2 for
file-system and decoding failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from pantry import imaging, recommender, synthetic
from pantry.dataset import ClassLabels, load_arrays, load_manifest, split_dataset, write_split_csv
from pantry.errors import ConfigError, PantryError
from pantry.resnet import build_graph, count_layers, infer_shapes, replace_head
from pantry.training import TrainConfig, evaluate, fit, predict, transfer_train, write_history_csv
from pantry.weights import load_weights, save_weights

U64_MAX = 2**64 - 1
DEFAULT_SIZES = {"resnet50": 224, "micro": 32}


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {value}")
    return value


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios must be three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"ratios must be three comma-separated numbers, got {text!r}")
    return parts


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=_u64, default=default(0), help="random seed (unsigned 64-bit)")
    parser.add_argument("--data-dir", type=Path, default=default(None),
                        help="directory holding labels.txt / recipes.csv overrides (env PANTRY_DATA_DIR)")
    parser.add_argument("--weights", type=Path, default=default(None), help="weights file to read or write")
    parser.add_argument("--json", action="store_true", default=default(False), help="machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pantry", description="Ingredient classifier and recipe recommender.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(p, suppress=True)
        return p

    p = command("verify-arch", "print the layer table, shape trace and layer count")
    p.add_argument("--arch", choices=("resnet50", "micro"), default="resnet50")
    p.add_argument("--num-classes", type=int, default=1000)
    p.add_argument("--replace-head", type=int, metavar="N", help="show the graph after swapping in an N-way head")
    p.add_argument("--input-size", type=int)

    p = command("train", "train a classifier and write weights plus a history CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", type=Path, help="path,label[,split] CSV")
    src.add_argument("--synthetic", type=int, metavar="PER_CLASS", help="generate a pattern dataset instead")
    p.add_argument("--labels", type=Path, help="class names file (default: the 32 ingredient classes)")
    p.add_argument("--arch", choices=("resnet50", "micro"), default="micro")
    p.add_argument("--input-size", type=int)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lr-schedule", choices=("none", "reduce_on_plateau"), default="none")
    p.add_argument("--protocol", choices=("transfer", "frozen", "full"), default="transfer",
                   help="transfer: frozen-base warm-up then full fine-tune; frozen: head only; full: everything")
    p.add_argument("--head-epochs", type=int, default=5)
    p.add_argument("--augment", type=int, default=0, metavar="K", help="add K augmented copies of each train image")
    p.add_argument("--history", type=Path, help="history CSV path (default: <weights>.history.csv)")

    p = command("classify", "classify one image")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--top", type=int, default=0, help="print only the K most probable classes")

    p = command("augment", "write augmented copies next to each source image")
    p.add_argument("images", type=Path, nargs="*")
    p.add_argument("--manifest", type=Path, help="augment every image listed in this manifest")
    p.add_argument("--labels", type=Path)
    p.add_argument("--count", type=int, default=1, help="copies per image")

    p = command("split", "assign train/test/val splits to a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--labels", type=Path)
    p.add_argument("--out", type=Path, help="output CSV (default: <manifest>_split.csv)")
    p.add_argument("--ratios", type=_ratios, default=(0.7, 0.2, 0.1), help="train,test,val")

    p = command("recommend", "suggest recipes for a set of detected ingredients")
    p.add_argument("--ingredients", action="append", required=True,
                   help="comma-separated names; may be repeated to accumulate several detections")
    p.add_argument("--mode", choices=recommender.MODES, default="subset")
    p.add_argument("--matrix", type=Path, help="recipe CSV (default: bundled matrix)")
    p.add_argument("--strict", action="store_true", help="treat matrix validation failures as errors")

    p = command("eval", "evaluate weights on a manifest split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test", "val", "all"), default="test")
    p.add_argument("--report", type=Path, help="also write the JSON report here")
    return parser


# ---- helpers -------------------------------------------------------------------


def _labels(args, path=None) -> ClassLabels:
    if path is not None:
        return ClassLabels.from_file(path)
    return ClassLabels.canonical(args.data_dir)


def _emit(args, payload, text: str) -> None:
    print(json.dumps(payload, indent=2) if args.json else text)


def _need_weights(args) -> Path:
    if args.weights is None:
        raise ConfigError(f"{args.command} needs --weights")
    return args.weights


def _load_model(args):
    graph, wf = load_weights(_need_weights(args))
    names = wf.meta.get("labels")
    labels = ClassLabels(names) if names else ClassLabels.canonical(args.data_dir)
    if len(labels) != graph.num_classes:
        raise ConfigError(f"weights have {graph.num_classes} classes but {len(labels)} labels")
    return graph, labels


def _shape_text(shape) -> str:
    # drop the batch axis; report H x W x C like the usual architecture tables
    dims = shape[1:]
    if len(dims) == 3:
        dims = (dims[1], dims[2], dims[0])
    return "x".join(str(d) for d in dims)


# ---- commands ------------------------------------------------------------------


def cmd_verify_arch(args) -> None:
    graph = build_graph(args.arch, args.num_classes, args.input_size, init=False)
    if args.replace_head:
        graph = replace_head(graph, args.replace_head)
    size = graph.input_shape[1]
    rows = infer_shapes(graph, (1, 3, size, size))
    counts = count_layers(graph)
    payload = {
        "arch": args.arch,
        "input": [3, size, size],
        "layers": [{"index": r.index, "name": r.name, "kind": r.kind, "hyper": r.hyper,
                    "output": list(r.shape[1:]), "counted": r.counted} for r in rows],
        "counts": counts.as_dict(),
        "breakdown": counts.breakdown(),
    }
    lines = [f"{'#':>4}  {'layer':<24} {'kind':<13} {'hyper':<20} {'output':<14} counted"]
    for r in rows:
        lines.append(f"{r.index:>4}  {r.name:<24} {r.kind:<13} {r.hyper:<20} {_shape_text(r.shape):<14} "
                     f"{'yes' if r.counted else ''}")
    lines.append("  ".join(f"{k}={v}" for k, v in counts.as_dict().items()))
    lines.append(counts.breakdown())
    _emit(args, payload, "\n".join(lines))


def _augmented(x: np.ndarray, y: np.ndarray, copies: int, seed: int):
    if copies <= 0:
        return x, y
    xs, ys = [x], [y]
    for k in range(copies):
        batch = np.empty_like(x)
        for i in range(len(x)):
            hwc = x[i].transpose(1, 2, 0)
            batch[i] = imaging.augment(hwc, imaging.sample_params(seed, k * len(x) + i)).transpose(2, 0, 1)
        xs.append(batch)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def cmd_train(args) -> None:
    weights_path = _need_weights(args)
    size = args.input_size or DEFAULT_SIZES[args.arch]
    if args.synthetic is not None:
        names = list(synthetic.PATTERNS)
        splits = synthetic.make_splits(args.synthetic, size, args.seed, synthetic.PATTERNS)
        train, val = splits["train"], splits["val"]
    else:
        labels = _labels(args, args.labels)
        manifest = load_manifest(args.manifest, labels)
        if any(r.split is None for r in manifest.records):
            manifest = split_dataset(manifest, seed=args.seed)
        train = load_arrays(manifest, "train", size)
        val = load_arrays(manifest, "val", size)
        names = labels.names
    train = _augmented(*train, args.augment, args.seed)

    base_classes = 1000 if args.arch == "resnet50" else 10
    graph = replace_head(build_graph(args.arch, base_classes, size, seed=args.seed), len(names), seed=args.seed)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, learning_rate=args.lr,
                         lr_schedule=args.lr_schedule, freeze_base=args.protocol != "full")
    if args.protocol == "transfer":
        history = transfer_train(graph, train, val, config, head_epochs=args.head_epochs)
    else:
        if args.protocol == "full":
            for p in graph.params.values():
                p.requires_grad = True
        history = fit(graph, train, val, config)

    history_path = args.history or weights_path.with_name(weights_path.name + ".history.csv")
    save_weights(weights_path, graph, labels=names)
    write_history_csv(history, history_path)
    last = history[-1]
    payload = {"weights": str(weights_path), "history": str(history_path), "epochs": len(history),
               "train_loss": last.train_loss, "train_acc": last.train_acc,
               "val_loss": last.val_loss, "val_acc": last.val_acc}
    text = (f"trained {len(history)} epochs: train loss {last.train_loss:.4f} acc {last.train_acc:.3f}, "
            f"val loss {last.val_loss:.4f} acc {last.val_acc:.3f}\n"
            f"weights -> {weights_path}\nhistory -> {history_path}")
    _emit(args, payload, text)


def cmd_classify(args) -> None:
    graph, labels = _load_model(args)
    size = graph.input_shape[1]
    img = imaging.load_image(args.image)
    if img.shape[:2] != (size, size):
        img = imaging.resize_bilinear(img, size, size)
    probs = predict(graph, imaging.to_input_tensor(img, graph.dtype).data)[0]
    best = int(np.argmax(probs))
    order = np.argsort(-probs, kind="stable")
    if args.top:
        order = order[: args.top]
    payload = {"label": labels.names[best], "index": best, "probability": float(probs[best]),
               "probabilities": {labels.names[i]: float(probs[i]) for i in range(len(probs))}}
    lines = [f"{labels.names[best]} ({probs[best]:.4f})"]
    lines += [f"  {labels.names[i]:<20} {probs[i]:.4f}" for i in order]
    _emit(args, payload, "\n".join(lines))


def _save_like(path: Path, image) -> None:
    if path.suffix.lower() in (".ppm", ".pnm"):
        imaging.save_ppm(path, image)
        return
    from PIL import Image

    Image.fromarray(image).save(path)


def cmd_augment(args) -> None:
    sources = list(args.images)
    if args.manifest is not None:
        manifest = load_manifest(args.manifest, _labels(args, args.labels))
        sources += [manifest.resolve_path(r) for r in manifest.records]
    if not sources:
        raise ConfigError("augment needs image paths or --manifest")
    if args.count < 1:
        raise ConfigError("--count must be positive")
    written = []
    for i, src in enumerate(sources):
        img = imaging.load_image(src)
        for k in range(1, args.count + 1):
            params = imaging.sample_params(args.seed, i * args.count + k - 1)
            out = src.with_name(f"{src.stem}_aug{k}{src.suffix}")
            _save_like(out, imaging.augment(img, params))
            written.append({"source": str(src), "output": str(out), "params": params.as_dict()})
    _emit(args, written, "\n".join(w["output"] for w in written))


def cmd_split(args) -> None:
    manifest = load_manifest(args.manifest, _labels(args, args.labels))
    result = split_dataset(manifest, args.ratios, args.seed)
    out = args.out or args.manifest.with_name(args.manifest.stem + "_split.csv")
    write_split_csv(result, out)
    counts = result.counts()
    payload = {"output": str(out), "counts": counts, "total": len(result)}
    _emit(args, payload, "  ".join(f"{k}={v}" for k, v in counts.items()) + f"  total={len(result)}\n-> {out}")


def cmd_recommend(args) -> None:
    path = args.matrix
    if path is None and args.data_dir is not None and (args.data_dir / "recipes.csv").exists():
        path = args.data_dir / "recipes.csv"
    matrix = recommender.load_matrix(path, strict=args.strict)
    detected = [n.strip() for chunk in args.ingredients for n in chunk.split(",") if n.strip()]
    results = recommender.recommend(matrix, detected, args.mode)
    if args.json:
        print(recommender.recommendations_json(results))
        return
    if not results:
        print(f"no recipes ({args.mode} match)")
    for r in results:
        print(f"{r.rank}. {r.recipe}  [{', '.join(r.required)}]")


def cmd_eval(args) -> None:
    graph, labels = _load_model(args)
    manifest = load_manifest(args.manifest, labels)
    split = None if args.split == "all" else args.split
    size = graph.input_shape[1]
    report = evaluate(graph, load_arrays(manifest, split, size), labels.names)
    if args.report is not None:
        args.report.write_text(report.to_json())
    if args.json:
        print(report.to_json())
        return
    width = max(len(n) for n in labels.names)
    lines = [f"accuracy {report.accuracy:.4f} on {report.total} images ({args.split})",
             f"{'class':<{width}}  precision  recall"]
    lines += [f"{n:<{width}}  {p:9.4f}  {r:6.4f}" for n, p, r in zip(labels.names, report.precision, report.recall)]
    lines.append("confusion matrix (rows: true, columns: predicted)")
    lines += [" ".join(f"{v:4d}" for v in row) for row in report.confusion_matrix]
    print("\n".join(lines))


COMMANDS = {
    "verify-arch": cmd_verify_arch,
    "train": cmd_train,
    "classify": cmd_classify,
    "augment": cmd_augment,
    "split": cmd_split,
    "recommend": cmd_recommend,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.data_dir is None and os.environ.get("PANTRY_DATA_DIR"):
        args.data_dir = Path(os.environ["PANTRY_DATA_DIR"])
    if args.command == "train":
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except OSError as exc:
        print(f"pantry: error: {exc}", file=sys.stderr)
        return 2
    except (PantryError, ValueError) as exc:
        print(f"pantry: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
