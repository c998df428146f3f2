"""Command-line surface: synth-data, train, eval-verify, eval-identify,
export-embeddings, plot-curves.

Every command reads a JSON run config, honors --seed, and writes its
outputs under a run directory so results are reproducible from the run
directory alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .backend import CosineBackend, RelationBackend
from .config import RunConfig, load_config, save_config
from .data import (DatasetManifest, SyntheticSpeakerSpec,
                   generate_synthetic_corpus, load_manifest)
from .evaluation import (evaluate_identification, evaluate_verification,
                         load_trials, save_scores, score_trials)
from .training import (FeatureStore, embed_clips, model_from_checkpoint,
                       run_training)


def _fail(message: str, **context) -> int:
    record = {"error": message}
    record.update(context)
    print(json.dumps(record), file=sys.stderr)
    return 1


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, seed=args.seed))
    return config


def cmd_synth_data(args) -> int:
    spec = SyntheticSpeakerSpec(
        n_speakers=args.n_speakers, n_heldout=args.n_heldout,
        clips_per_speaker=args.clips_per_speaker,
        clip_seconds=args.clip_seconds, seed=args.seed or 0)
    manifest = generate_synthetic_corpus(spec, args.out_dir)
    print(json.dumps({"out_dir": str(args.out_dir),
                      "n_clips": len(manifest.entries),
                      "n_speakers": len(manifest.speakers)}))
    return 0


def cmd_train(args) -> int:
    config = _load_run_config(args)
    if args.regime:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, regime=args.regime))
    if args.stage == "local":
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, epochs_finetune=0))
    manifest_path = Path(args.manifest or config.manifest_path)
    manifest = load_manifest(manifest_path)
    final = run_training(config, manifest, args.run_dir, base_dir=manifest_path.parent)
    print(json.dumps({"checkpoint": str(final), "run_dir": str(args.run_dir)}))
    return 0


def _make_backend(model, name: str):
    if name in ("relation-improved", "relation-vanilla"):
        mode = name.split("-")[1]
        if model.relation.config.mode != mode:
            raise ValueError("checkpointed relation net is %r, requested %r"
                             % (model.relation.config.mode, mode))
        return RelationBackend(model.relation)
    if name in ("cosine", "proto"):
        return CosineBackend()
    raise ValueError("unknown backend %r" % name)


def cmd_eval_verify(args) -> int:
    model, config = model_from_checkpoint(args.checkpoint)
    backend = _make_backend(model, args.backend)
    manifest_path = Path(args.manifest or config.manifest_path)
    manifest = load_manifest(manifest_path)
    store = FeatureStore(manifest, config.features, manifest_path.parent)
    trials = load_trials(args.trials)
    ids = sorted({t.enroll_id for t in trials} | {t.test_id for t in trials})
    embs = embed_clips(model.encoder, store, ids)
    report = evaluate_verification(trials, embs.__getitem__, backend,
                                   config.eval.p_target, config.eval.c_fa,
                                   config.eval.c_miss)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    scores = score_trials(trials, embs.__getitem__, backend)
    save_scores(trials, scores, run_dir / "scores.txt")
    with open(run_dir / "verification_report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report.to_dict()))
    return 0


def cmd_eval_identify(args) -> int:
    model, config = model_from_checkpoint(args.checkpoint)
    backend = _make_backend(model, args.backend)
    manifest_path = Path(args.manifest or config.manifest_path)
    manifest = load_manifest(manifest_path)
    if not args.allow_seen:
        manifest.check_unseen_protocol()
    store = FeatureStore(manifest, config.features, manifest_path.parent)
    clips = manifest.clips_by_speaker("test")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    cache = embed_clips(model.encoder, store,
                        [c for clips_ in clips.values() for c in clips_])
    report = evaluate_identification(
        clips, cache.__getitem__, backend, n_way=args.n_way,
        k=config.eval.ident_k, q=config.eval.ident_q,
        n_episodes=args.episodes, rng=rng)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "identification_report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report.to_dict()))
    return 0


def cmd_export_embeddings(args) -> int:
    model, config = model_from_checkpoint(args.checkpoint)
    manifest_path = Path(args.manifest or config.manifest_path)
    manifest = load_manifest(manifest_path)
    store = FeatureStore(manifest, config.features, manifest_path.parent)
    ids = [e.clip_id for e in manifest.entries
           if args.split is None or e.split == args.split]
    embs = embed_clips(model.encoder, store, ids)
    out = Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "embeddings.npz", **{cid: e.numpy() for cid, e in embs.items()})
    print(json.dumps({"n_embeddings": len(embs),
                      "path": str(out / "embeddings.npz")}))
    return 0


def cmd_plot_curves(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for log_path in args.logs:
        epochs, eers = [], []
        with open(log_path) as fh:
            for line in fh:
                rec = json.loads(line)
                if rec.get("val_eer") is not None:
                    epochs.append(rec["epoch"])
                    eers.append(100.0 * rec["val_eer"])
        ax.plot(epochs, eers, marker="o", markersize=3, label=Path(log_path).parent.name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation EER (%)")
    ax.legend()
    ax.grid(alpha=0.3)
    out = Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig.savefig(out / "convergence.png", dpi=120, bbox_inches="tight")
    print(json.dumps({"figure": str(out / "convergence.png")}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relspeaker")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--run-dir", type=Path, default=Path("runs/default"))

    p = sub.add_parser("synth-data", help="generate a synthetic speaker corpus")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--n-speakers", type=int, default=10)
    p.add_argument("--n-heldout", type=int, default=0)
    p.add_argument("--clips-per-speaker", type=int, default=20)
    p.add_argument("--clip-seconds", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="run staged episodic training")
    common(p)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--stage", choices=["local", "global"], default="global")
    p.add_argument("--regime", choices=["vanilla", "improved"], default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-verify", help="score a trial list and report EER/minDCF")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--trials", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--backend", default="relation-improved",
                   choices=["relation-improved", "relation-vanilla", "cosine", "proto"])
    p.set_defaults(func=cmd_eval_verify)

    p = sub.add_parser("eval-identify", help="N-way unseen speaker identification")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--backend", default="relation-improved",
                   choices=["relation-improved", "relation-vanilla", "cosine", "proto"])
    p.add_argument("--n-way", type=int, default=5)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--allow-seen", action="store_true",
                   help="skip the disjoint-speaker check")
    p.set_defaults(func=cmd_eval_identify)

    p = sub.add_parser("export-embeddings", help="dump eval-mode embeddings to npz")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--split", choices=["train", "val", "test"], default=None)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("plot-curves", help="juxtapose validation-EER curves")
    common(p, config=False)
    p.add_argument("logs", nargs="+", type=Path, help="metrics.log files")
    p.set_defaults(func=cmd_plot_curves)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # config/manifest errors exit nonzero, machine-readable
        return _fail(str(exc), command=args.command, type=type(exc).__name__)


if __name__ == "__main__":
    raise SystemExit(main())
