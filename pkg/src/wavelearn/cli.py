"""Command line entry point.

Subcommands: train, evaluate, predict, decompose, synth-data, gradcheck.
Every artifact lands under --out-dir with fixed names and carries the
effective config in its header.  Exit codes: 0 ok, 2 config error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import training
from .autodiff import Tensor
from .data import (
    build_emodb_manifest,
    generate_synthetic,
    load_manifest,
    load_wav,
    resample_to_16k,
    write_wav_pcm16,
)
from .errors import (
    ConfigError,
    DatasetError,
    FormatError,
    LabelError,
    NumericalError,
    ParseError,
    WavelearnError,
)
from .model import ABLATION_TAGS, Network
from .training import (
    AdamState,
    LossConfig,
    evaluate,
    inverse_frequency_alphas,
    metrics_from_pairs,
    predict,
    stratified_split,
    train_model,
)
from .wavelet import FrontEndConfig, FrontEndFilters, frontend_forward

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="wavelearn",
        description="Learnable wavelet filter-bank classifier for raw waveforms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="overrides training.seed")
        p.add_argument("--workers", type=int, default=1, help="evaluation thread count")
        p.add_argument("--epochs", type=int, default=None, help="overrides training.epochs")
        p.add_argument("--ablation", default=None, choices=ABLATION_TAGS)
        p.add_argument("--out-dir", default="out", help="artifact directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="dotted config override")

    p_train = sub.add_parser("train", help="train on the configured dataset")
    common(p_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on the configured dataset")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=("all", "test"), default="test")

    p_pred = sub.add_parser("predict", help="classify wav files, CSV on stdout")
    common(p_pred)
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("wavs", nargs="+", help="wav files to classify")

    p_dec = sub.add_parser("decompose", help="dump wavelet band coefficients (filters only)")
    common(p_dec)
    p_dec.add_argument("wav", help="input wav file")

    p_synth = sub.add_parser("synth-data", help="write the synthetic dataset as wav + manifest")
    common(p_synth)
    p_synth.add_argument("--per-class", type=int, default=None,
                         help="overrides data.synthetic_n_per_class")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    common(p_grad)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _load_run_config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"training.seed={args.seed}")
    if args.epochs is not None:
        overrides.append(f"training.epochs={args.epochs}")
    if args.ablation is not None:
        overrides.append(f"ablation={args.ablation}")
    return cfgmod.load_config(args.config, overrides)


def _load_dataset(cfg):
    """Clips, integer labels, and label names for the configured source."""
    if cfg.data.manifest:
        manifest = load_manifest(cfg.data.manifest, cfg.data.root)
        clips = manifest.load_all()
        return ([c.samples for c in clips], [c.label for c in clips],
                list(manifest.vocabulary))
    spec = cfg.synthetic_spec()
    clips = generate_synthetic(spec, cfg.data.synthetic_n_per_class)
    return ([c.samples for c in clips], [c.label for c in clips], spec.label_names())


def _config_comment(cfg):
    return "# config: " + json.dumps(cfg.to_dict(), sort_keys=True)


def _write_metrics(out_dir, cfg, report, extra=None):
    payload = {"config": cfg.to_dict(), "metrics": report.to_dict()}
    if extra:
        payload.update(extra)
    (out_dir / "metrics.json").write_text(json.dumps(payload, sort_keys=True, indent=2))
    lines = [_config_comment(cfg), "true\\predicted," + ",".join(
        str(i) for i in range(report.confusion.shape[1]))]
    for i, row in enumerate(report.confusion):
        lines.append(f"{i}," + ",".join(str(int(v)) for v in row))
    (out_dir / "confusion.csv").write_text("\n".join(lines) + "\n")


def _write_epochs(out_dir, cfg, records):
    lines = [_config_comment(cfg), "epoch,split,loss,accuracy"]
    for r in records:
        lines.append(f"{r.epoch},{r.split},{r.loss:.10g},{r.accuracy:.10g}")
    (out_dir / "epochs.csv").write_text("\n".join(lines) + "\n")


def _make_network(cfg, n_classes):
    model_cfg = cfg.resolved_model()
    from dataclasses import replace

    model_cfg = replace(model_cfg, classes=n_classes)
    return Network(model_cfg, seed=cfg.training.seed)


def cmd_train(args):
    cfg = _load_run_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips, labels, names = _load_dataset(cfg)
    n_classes = len(names)
    plan = stratified_split(labels, cfg.training.seed,
                            test_frac=cfg.training.test_frac,
                            n_folds=cfg.training.folds)
    train_idx, val_idx = plan.folds[0]
    labels_arr = np.asarray(labels)
    train_clips = [clips[i] for i in train_idx]
    train_labels = labels_arr[train_idx].tolist()
    val_clips = [clips[i] for i in val_idx]
    val_labels = labels_arr[val_idx].tolist()

    net = _make_network(cfg, n_classes)
    loss_cfg = LossConfig(
        gamma=cfg.training.gamma,
        class_alpha=inverse_frequency_alphas(train_labels, n_classes),
        lam=cfg.training.lam,
    )
    adam = AdamState(lr=cfg.training.lr, beta1=cfg.training.beta1,
                     beta2=cfg.training.beta2, eps=cfg.training.eps)
    records = train_model(
        net, train_clips, train_labels, loss_cfg, adam,
        epochs=cfg.training.epochs, seed=cfg.training.seed,
        batch_size=cfg.training.batch_size,
        val_clips=val_clips, val_labels=val_labels,
    )
    _write_epochs(out_dir, cfg, records)
    ckpt.save_checkpoint(out_dir / "checkpoint.bin", net.state(),
                         {"run": cfg.to_dict(), "classes": names})
    test_clips = [clips[i] for i in plan.test_indices]
    test_labels = labels_arr[plan.test_indices].tolist()
    report = evaluate(net, test_clips, test_labels, n_classes, workers=args.workers)
    _write_metrics(out_dir, cfg, report, extra={"classes": names, "split": "test"})
    print(f"train done: test accuracy {report.accuracy:.4f}; artifacts in {out_dir}")
    return EXIT_OK


def _restore(checkpoint_path, cfg_fallback):
    state, meta = ckpt.load_checkpoint(checkpoint_path)
    names = meta.get("classes") or []
    run = meta.get("run")
    if run:
        cfg = cfgmod.load_config(None, ())
        cfgmod._apply_mapping(cfg, run)
    else:
        cfg = cfg_fallback
    net = _make_network(cfg, len(names) or cfg.model.classes)
    net.load_state(state)
    return net, cfg, names


def cmd_evaluate(args):
    file_cfg = _load_run_config(args)
    net, cfg, names = _restore(args.checkpoint, file_cfg)
    clips, labels, data_names = _load_dataset(file_cfg)
    if names and data_names != names:
        raise LabelError(
            f"checkpoint classes {names} do not match dataset classes {data_names}"
        )
    if args.split == "test":
        plan = stratified_split(labels, file_cfg.training.seed,
                                test_frac=file_cfg.training.test_frac,
                                n_folds=file_cfg.training.folds)
        keep = plan.test_indices
        clips = [clips[i] for i in keep]
        labels = np.asarray(labels)[keep].tolist()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate(net, clips, labels, len(names) or max(labels) + 1,
                      workers=args.workers)
    _write_metrics(out_dir, file_cfg, report,
                   extra={"classes": names, "split": args.split})
    print(f"evaluate done: accuracy {report.accuracy:.4f}; artifacts in {out_dir}")
    return EXIT_OK


def cmd_predict(args):
    file_cfg = _load_run_config(args)
    net, _, names = _restore(args.checkpoint, file_cfg)
    clips = []
    for wav in args.wavs:
        clip = resample_to_16k(load_wav(wav))
        clips.append(clip.samples)
    predicted, log_probs = predict(net, clips, workers=args.workers)
    header = ["path", "predicted"] + [f"logp_{i}" for i in range(log_probs.shape[1])]
    print(",".join(header))
    for wav, cls, row in zip(args.wavs, predicted, log_probs):
        label = names[cls] if names else str(int(cls))
        print(",".join([wav, label] + [f"{v:.10g}" for v in row]))
    return EXIT_OK


def cmd_decompose(args):
    cfg = _load_run_config(args)
    fe = cfg.resolved_model().frontend
    analysis = FrontEndConfig(levels=fe.levels, kernel_size=fe.kernel_size,
                              sharing=fe.sharing, laht_enabled=False)
    filters = FrontEndFilters(analysis)
    clip = resample_to_16k(load_wav(args.wav))
    out = frontend_forward(Tensor(clip.samples.reshape(1, 1, -1)), analysis, filters)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [_config_comment(cfg), "band,index,value"]
    for level, detail in enumerate(out.details, start=1):
        values = detail.data.reshape(-1)
        lines.extend(f"d{level},{i},{v:.17g}" for i, v in enumerate(values))
    approx = out.approximation.data.reshape(-1)
    lines.extend(f"a{fe.levels},{i},{v:.17g}" for i, v in enumerate(approx))
    path = out_dir / "bands.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"decompose done: {len(out.details)} detail bands + approximation in {path}")
    return EXIT_OK


def cmd_synth_data(args):
    cfg = _load_run_config(args)
    n = args.per_class or cfg.data.synthetic_n_per_class
    spec = cfg.synthetic_spec()
    clips = generate_synthetic(spec, n)
    out_dir = Path(args.out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, clip in enumerate(clips):
        name = f"wav/clip_{i:04d}.wav"
        write_wav_pcm16(out_dir / name, clip.samples, clip.sample_rate)
        rows.append((name, spec.label_names()[clip.label]))
    lines = [_config_comment(cfg), "path,label"]
    lines.extend(f"{p},{label}" for p, label in rows)
    (out_dir / "manifest.csv").write_text("\n".join(lines) + "\n")
    print(f"synth-data done: {len(clips)} clips under {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(tol=args.tolerance)
    worst = max(results.values())
    print(f"gradcheck worst max_rel_err={worst:.3e} over {len(results)} ops")
    if worst >= args.tolerance:
        raise NumericalError(f"gradient check failed: {worst:.3e} >= {args.tolerance}")
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "predict": cmd_predict,
        "decompose": cmd_decompose,
        "synth-data": cmd_synth_data,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, LabelError, ParseError, FormatError) as exc:
        print(f"data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except WavelearnError as exc:
        print(f"internal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
