"""Command line entry point: ``swis <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
Set ``SWIS_DETERMINISTIC=1`` for deterministic kernels and single-threaded execution.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("swis")


def deterministic_mode() -> bool:
    return os.environ.get("SWIS_DETERMINISTIC", "") not in ("", "0")


def configure_runtime() -> None:
    import torch

    if deterministic_mode():
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def code_fingerprint() -> str:
    """Hash of the package sources, stamped into every run directory."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def version_stamp() -> dict:
    import sklearn
    import torch

    return {
        "swis": __version__,
        "code_sha256": code_fingerprint(),
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "sklearn": sklearn.__version__,
        "deterministic": deterministic_mode(),
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_ingest(args) -> int:
    from .dataset import Split, assign_references, build_manifest, write_manifest

    manifest = build_manifest(args.root, args.dataset_id, args.seed)
    manifest = assign_references(manifest, args.n_ref, args.seed)
    write_manifest(manifest, args.out)
    n_ref = sum(s.role.value == "reference" for s in manifest.samples)
    print(f"wrote {args.out}: {len(manifest.samples)} samples, "
          f"{len(manifest.writers(Split.PRETRAIN))} pretrain writers, "
          f"{n_ref} references")
    return 0


def cmd_preprocess(args) -> int:
    import cv2

    from .dataset import Manifest, load_grayscale, read_manifest, write_manifest
    from .preprocess import otsu_crop

    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = manifest.root
    new_samples = []
    for s in manifest.samples:
        try:
            rel = s.image_path.relative_to(base)
        except ValueError:
            rel = Path(s.writer_id) / s.image_path.name
        dest = (out / "images" / rel).with_suffix(".png")
        dest.parent.mkdir(parents=True, exist_ok=True)
        cv2.imwrite(str(dest), otsu_crop(load_grayscale(s)))
        new_samples.append(s.__class__(dest.resolve(), s.writer_id, s.label, s.split, s.role))
    write_manifest(Manifest(manifest.dataset_id, new_samples, manifest.seed), out / "manifest.csv")
    print(f"cropped {len(new_samples)} images into {out}")
    return 0


def cmd_pretrain(args) -> int:
    from .config import parse_config, write_config
    from .dataset import assign_references, build_manifest, read_manifest
    from .engine import load_pretrain_images, pretrain_images
    from .dataset import pretrain_samples
    from .plotting import plot_training_curves

    cfg = parse_config(args.config)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if cfg.dataset.manifest:
        mpath = Path(cfg.dataset.manifest)
        if not mpath.is_absolute():
            mpath = Path(args.config).parent / mpath
        manifest = read_manifest(mpath)
        if cfg.dataset.dataset_id == "custom" and manifest.dataset_id != "custom":
            cfg.dataset.dataset_id = manifest.dataset_id
    elif cfg.dataset.root:
        manifest = build_manifest(cfg.dataset.root, cfg.dataset.dataset_id, cfg.seeds.data)
        manifest = assign_references(manifest, cfg.dataset.n_ref)
    else:
        print("error: config needs dataset.manifest or dataset.root", file=sys.stderr)
        return 2

    run_dir = Path(args.run_dir) if args.run_dir else Path(cfg.run.dir) / cfg.run.name
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(cfg, run_dir / "config.txt")
    _write_json(run_dir / "seeds.json", {k: getattr(cfg.seeds, k) for k in ("data", "augment", "init", "eval")})
    _write_json(run_dir / "version.json", version_stamp())

    images = load_pretrain_images(pretrain_samples(manifest, cfg.dataset.include_pretrain_forgeries))
    result = pretrain_images(
        images, cfg.model_config(), cfg.schedule_config(), cfg.optimizer_config(),
        batch_size=cfg.train.batch_size, objective=cfg.objective.name,
        temperature=cfg.objective.temperature, normalization=cfg.objective.normalization,
        augment_cfg=cfg.augment_config(), data_seed=cfg.seeds.data, augment_seed=cfg.seeds.augment,
        init_seed=cfg.seeds.init, run_dir=run_dir, checkpoint_every=cfg.train.checkpoint_every,
    )
    plot_training_curves(result.history, run_dir / "train_curves.png")
    first, last = result.epoch_summary[0], result.epoch_summary[-1]
    print(f"checkpoint {result.checkpoint}")
    print(f"loss {first['total']:.4f} -> {last['total']:.4f} in {result.seconds:.1f}s")
    return 0


def _eval_config(args):
    from .config import RunConfig, parse_config

    cfg = parse_config(args.config) if args.config else RunConfig()
    ecfg = cfg.eval_config()
    if getattr(args, "seed", None) is not None:
        ecfg.seed = args.seed
    if getattr(args, "stage", None):
        ecfg.stage = args.stage
    return cfg, ecfg


def _feature_set(args, cfg, stage):
    from .dataset import read_manifest
    from .evaluate import FeatureSet, features_from_manifest

    if args.features:
        return FeatureSet.load(args.features)
    if not (args.checkpoint and args.manifest):
        raise UsageError("give --features, or both --checkpoint and --manifest")
    from .encoder import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    return features_from_manifest(model, read_manifest(args.manifest), stage)


class UsageError(Exception):
    pass


def cmd_evaluate(args) -> int:
    from .config import write_config
    from .evaluate import evaluate_features

    cfg, ecfg = _eval_config(args)
    fs = _feature_set(args, cfg, ecfg.stage)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        from .encoder import load_checkpoint

        _, meta = load_checkpoint(args.checkpoint)
        ecfg.extra.update(checkpoint_epoch=meta["epoch"], config_hash=meta["config_hash"])
    report, _ = evaluate_features(fs, out, ecfg)
    write_config(cfg, out / "config.txt")
    _write_json(out / "version.json", version_stamp())
    print(f"accuracy {report.accuracy:.4f}  FAR {report.far:.4f}  FRR {report.frr:.4f}  "
          f"({report.n_genuine} genuine, {report.n_forged} forged queries)")
    return 0


def cmd_tsne(args) -> int:
    from .evaluate import tsne_plot

    cfg, ecfg = _eval_config(args)
    fs = _feature_set(args, cfg, ecfg.stage)
    perplexity = args.perplexity if args.perplexity is not None else ecfg.tsne_perplexity
    path = tsne_plot(fs.features, fs.writer_ids, args.out, perplexity, ecfg.seed, ecfg.tsne_iterations)
    print(f"wrote {path}")
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run

    return 0 if run() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swis", description="Self-supervised signature verification toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    s = sub.add_parser("ingest", help="scan a dataset and write a manifest CSV")
    s.add_argument("--root", required=True, help="dataset root directory (or CSV for custom)")
    s.add_argument("--dataset-id", required=True,
                   choices=["icdar2011_dutch", "icdar2011_chinese", "bhsig260_bengali", "bhsig260_hindi", "custom"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-ref", type=int, default=8, help="reference signatures per test writer")
    s.add_argument("--out", required=True, help="manifest CSV to write")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("preprocess", help="write Otsu-cropped copies of every manifest image")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("pretrain", help="self-supervised pretraining from a config file")
    s.add_argument("--config", required=True, help="flat key = value config file")
    s.add_argument("--run-dir", help="override run directory (default runs/<run.name>)")
    s.add_argument("--epochs", type=int, help="override train.epochs")
    s.set_defaults(func=cmd_pretrain)

    for name, helptext in (("evaluate", "SVM verification metrics, records and t-SNE plot"),
                           ("tsne", "t-SNE scatter of test features")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--checkpoint", help="pretrained checkpoint")
        s.add_argument("--manifest", help="manifest with assigned references")
        s.add_argument("--features", help="precomputed features (.npz) instead of checkpoint + manifest")
        s.add_argument("--config", help="config file for eval.* and seeds.eval")
        s.add_argument("--seed", type=int, help="override seeds.eval")
        s.add_argument("--stage", choices=["pooled", "projected"], help="feature stage")
        s.add_argument("--out", required=True,
                       help="output directory" if name == "evaluate" else "PNG path")
        if name == "tsne":
            s.add_argument("--perplexity", type=float)
        s.set_defaults(func=cmd_evaluate if name == "evaluate" else cmd_tsne)

    s = sub.add_parser("selfcheck", help="run the invariant checks; nonzero exit on failure")
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    configure_runtime()
    from .errors import SwisError

    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"swis {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (SwisError, FileNotFoundError, ValueError) as exc:
        print(f"swis {args.command}: {exc}", file=sys.stderr)
        return 1


dispatch = main

if __name__ == "__main__":
    sys.exit(main())
