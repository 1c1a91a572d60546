"""Command-line operator surface.

Verbs: gen-data, train, transfer, sweep, eval, error-study, report. Every verb
takes --config (YAML, strict schema), plus --seed (overrides the config seed),
--workers (per-image fan-out; bitwise determinism is only claimed at 1), and
--cache-dir (or the RESTAIN_CACHE_DIR environment variable) for the
trajectory/prompt cache. Each run writes a run manifest capturing the resolved
config, input hashes, seed, and timings; failures exit nonzero with a
machine-readable JSON error record on stderr.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .adapters import (
    IdentityAdapter,
    external_image_adapter,
    histogram_match_adapter,
    noisy_oracle_adapter,
    oracle_recolor_adapter,
)
from .config import (
    AdapterSpec,
    ErrorStudyCliConfig,
    EvalCliConfig,
    GenDataConfig,
    ReportCliConfig,
    SweepCliConfig,
    TrainCliConfig,
    TransferCliConfig,
    load_raw_config,
    parse_command_config,
)
from .data import Corpus, MANIFEST_NAME, default_domains, generate_synthetic_corpus, load_corpus
from .errors import ConfigurationError, CorpusError, RestainError
from .losses import LossConfig
from .metrics import (
    load_featurizer,
    metric_report,
    read_metric_table,
    save_featurizer,
    ssim,
    train_featurizer,
    write_metric_table,
)
from .model import ABSENT, NULL
from .plots import plot_error_study, plot_lines, plot_loss_log
from .prompts import optimize_prompts
from .train import TrainConfig, load_checkpoint, model_fingerprint, save_checkpoint, train_conditional_denoiser
from .trajectories import invert_trajectory
from .transfer import TransferConfig, ddim_sample, prompted_sample, save_transfer_result, transfer, _sweep
from .utils import fingerprint_json, hwc_to_tensor, load_image, sha256_file, tensor_to_hwc

CACHE_DIR_ENV = "RESTAIN_CACHE_DIR"


# ---------------------------------------------------------------------------
# shared plumbing


def _corpus_hash(corpus: Corpus) -> str:
    return sha256_file(corpus.root / MANIFEST_NAME)


def write_run_manifest(out_dir, command, cfg, seed, input_hashes, checkpoint_hash, output_paths, timings, started):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": dataclasses.asdict(cfg),
        "input_hashes": input_hashes,
        "checkpoint_hash": checkpoint_hash,
        "output_paths": [str(p) for p in output_paths],
        "seed": seed,
        "version": __version__,
        "timings_s": timings,
        "started_unix": started,
        "finished_unix": time.time(),
    }
    path = out_dir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path


def resolve_label(corpus: Corpus, value) -> int:
    if isinstance(value, bool) or value is None:
        raise ConfigurationError(f"invalid domain label {value!r}")
    if isinstance(value, int):
        corpus.domain_by_id(value)  # raises KeyError if absent
        return value
    try:
        return corpus.domain_by_name(str(value)).id
    except KeyError:
        names = [d.name for d in corpus.domains]
        raise ConfigurationError(f"unknown domain {value!r} (corpus has {names})") from None


def build_adapter(spec: AdapterSpec, corpus: Corpus, source_label: int, target_label: int):
    if spec.kind == "identity":
        return IdentityAdapter()
    if spec.kind == "external":
        return external_image_adapter(spec.lookup)
    target = corpus.domain_by_id(target_label)
    source = corpus.domain_by_id(source_label)
    if spec.kind == "oracle":
        return oracle_recolor_adapter(target, source)
    if spec.kind == "noisy-oracle":
        return noisy_oracle_adapter(target, source, spec.noise_level, spec.seed)
    if spec.kind == "histogram-match":
        ids = corpus.sample_ids(split=spec.reference_split)
        if not ids:
            raise ConfigurationError(f"no {spec.reference_split!r}-split samples to pool references from")
        return histogram_match_adapter([corpus.image(sid, target_label) for sid in ids])
    raise ConfigurationError(f"unknown adapter kind {spec.kind!r}")


def _select_ids(corpus: Corpus, sample_ids, split: str, limit) -> list:
    ids = list(sample_ids) if sample_ids else corpus.sample_ids(split=split)
    if not ids:
        raise ConfigurationError(f"no samples selected (split {split!r} empty and no sample_ids given)")
    if limit is not None:
        ids = ids[: int(limit)]
    return ids


def _ensure_featurizer(corpus: Corpus, seed: int, cache_dir, fallback_dir):
    """Load a cached corpus featurizer or train one; returns (featurizer, path)."""
    key = fingerprint_json({"corpus": _corpus_hash(corpus), "seed": seed, "role": "featurizer"})
    directory = Path(cache_dir) if cache_dir else Path(fallback_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"featurizer_{key[:16]}.pt"
    if path.exists():
        feat, _ = load_featurizer(path)
        return feat, path
    feat, accuracy = train_featurizer(corpus, seed=seed)
    save_featurizer(path, feat, accuracy)
    print(f"trained domain featurizer (test accuracy {accuracy:.3f}) -> {path}", flush=True)
    return feat, path


def _map_images(fn, ids, workers: int):
    """Apply fn to each id, preserving input order; fans out when workers > 1."""
    if workers <= 1:
        return [fn(sid) for sid in ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, ids))


def _write_loss_log(loss_log, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "inner_step", "struct_loss", "style_loss", "total"])
        for t, k, s, y, total in loss_log:
            w.writerow([t, k, f"{s:.10g}", f"{y:.10g}", f"{total:.10g}"])


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: GenDataConfig, args) -> int:
    started = time.time()
    if not 2 <= cfg.n_domains <= len(default_domains()):
        raise ConfigurationError(f"n_domains must be in [2, {len(default_domains())}] (got {cfg.n_domains})")
    domains = default_domains()[: cfg.n_domains]
    generate_synthetic_corpus(
        cfg.out_dir,
        cfg.n_samples,
        domains=domains,
        image_size=cfg.image_size,
        seed=cfg.seed,
        test_fraction=cfg.test_fraction,
    )
    corpus = load_corpus(cfg.out_dir)  # validates every referenced file
    n_train = len(corpus.sample_ids(split="train"))
    n_test = len(corpus.sample_ids(split="test"))
    print(
        f"corpus at {corpus.root}: {cfg.n_samples} samples x {len(domains)} domains "
        f"({[d.name for d in domains]}), {len(corpus)} images, splits train={n_train} test={n_test}"
    )
    manifest_path = corpus.root / MANIFEST_NAME
    write_run_manifest(
        cfg.out_dir,
        "gen-data",
        cfg,
        cfg.seed,
        {"config": sha256_file(args.config)},
        None,
        [manifest_path],
        {"total_s": time.time() - started},
        started,
    )
    print(f"corpus hash {sha256_file(manifest_path)}")
    return 0


def cmd_train(cfg: TrainCliConfig, args) -> int:
    started = time.time()
    corpus = load_corpus(cfg.corpus)
    tc = TrainConfig(
        total_steps=cfg.total_steps,
        beta_min=cfg.beta_min,
        beta_max=cfg.beta_max,
        iterations=cfg.iterations,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        null_prob=cfg.null_prob,
        base=cfg.base,
        mults=tuple(cfg.mults),
        emb_dim=cfg.emb_dim,
        flip_augment=cfg.flip_augment,
        seed=cfg.seed,
        log_every=cfg.log_every,
    )
    model, history, aux = train_conditional_denoiser(corpus, tc, progress=True, resume_from=cfg.resume)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model, tc, history, aux)
    loss_path = out.with_suffix(out.suffix + ".loss.csv")
    with open(loss_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss"])
        w.writerows(history)
    print(f"checkpoint -> {out} (hash {sha256_file(out)})")
    write_run_manifest(
        out.parent,
        "train",
        cfg,
        cfg.seed,
        {"config": sha256_file(args.config), "corpus": _corpus_hash(corpus)},
        sha256_file(out),
        [out, loss_path],
        {"total_s": time.time() - started},
        started,
    )
    return 0


def _load_transfer_context(cfg: TransferCliConfig, args):
    corpus = load_corpus(cfg.corpus)
    model, train_cfg, _ = load_checkpoint(cfg.checkpoint)
    src = resolve_label(corpus, cfg.source)
    tgt = resolve_label(corpus, cfg.target)
    tcfg = TransferConfig(
        source_label=src,
        target_label=tgt,
        lam=cfg.lam,
        total_steps=cfg.total_steps,
        ist_init=cfg.ist_init,
        c1=cfg.c1,
        c2=cfg.c2,
        inner_learning_rate=cfg.inner_learning_rate,
        loss_variant=cfg.loss_variant,
        style_condition=cfg.style_condition,
        seed=cfg.seed,
        use_cache=cfg.use_cache,
    )
    adapter = build_adapter(cfg.adapter_spec(), corpus, src, tgt)
    ids = _select_ids(corpus, cfg.sample_ids, "test", cfg.limit)
    featurizer = None
    feat_path = None
    if cfg.evaluate:
        if cfg.featurizer:
            featurizer, _ = load_featurizer(cfg.featurizer)
            feat_path = Path(cfg.featurizer)
        else:
            featurizer, feat_path = _ensure_featurizer(corpus, cfg.seed, args.cache_dir, cfg.out_dir)
    real_images = None
    if cfg.evaluate:
        real_images = [corpus.image(sid, tgt) for sid in corpus.sample_ids(split="test")]
    return corpus, model, tcfg, adapter, ids, featurizer, feat_path, real_images


def cmd_transfer(cfg: TransferCliConfig, args) -> int:
    started = time.time()
    corpus, model, tcfg, adapter, ids, featurizer, feat_path, real_images = _load_transfer_context(cfg, args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    def run_one(sid):
        return sid, transfer(
            corpus.image(sid, tcfg.source_label),
            model,
            tcfg,
            adapter,
            sample_id=sid,
            cache_dir=args.cache_dir,
            progress=args.workers <= 1,
        )

    # transfers may fan out, but file writes and plots stay on this thread
    # (the plotting backend is not thread-safe)
    results = []
    for sid, res in _map_images(run_one, ids, args.workers):
        img_path, sidecar = save_transfer_result(res, out_dir, sid)
        paths = [img_path, sidecar]
        if res.loss_log:
            loss_path = out_dir / f"{sid}_loss.csv"
            _write_loss_log(res.loss_log, loss_path)
            plot_loss_log(res.loss_log, out_dir / f"{sid}_loss.png", title=f"prompt optimization ({sid})")
            paths += [loss_path, out_dir / f"{sid}_loss.png"]
        results.append((sid, res, paths))
    bundle = None
    if cfg.evaluate:
        pairs = [(sid, res.output, corpus.image(sid, tcfg.target_label)) for sid, res, _ in results]
        bundle = metric_report(pairs, lam=tcfg.lam, real_images=real_images, featurizer=featurizer, seed=cfg.seed)
        write_metric_table(bundle, out_dir / "metrics.csv")
        print(
            f"transfer {cfg.source}->{cfg.target} on {len(ids)} images: "
            f"ssim {bundle.mean_ssim:.4f}  ms-ssim {bundle.mean_ms_ssim:.4f}  "
            f"psnr {bundle.mean_psnr_db:.2f} dB  frechet {bundle.frechet}"
        )
    for _, res, paths in results:
        outputs += paths
    if bundle is not None:
        outputs.append(out_dir / "metrics.csv")
    write_run_manifest(
        out_dir,
        "transfer",
        cfg,
        cfg.seed,
        {
            "config": sha256_file(args.config),
            "corpus": _corpus_hash(corpus),
            "featurizer": str(feat_path) if feat_path else None,
        },
        sha256_file(cfg.checkpoint),
        outputs,
        {"total_s": time.time() - started},
        started,
    )
    return 0


def cmd_sweep(cfg: SweepCliConfig, args) -> int:
    started = time.time()
    param, values = cfg.grid_values()
    corpus, model, tcfg, adapter, ids, featurizer, feat_path, real_images = _load_transfer_context(cfg, args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundles, results = _sweep(
        corpus,
        ids,
        model,
        tcfg,
        adapter,
        param,
        values,
        cache_dir=args.cache_dir,
        featurizer=featurizer,
        real_images=real_images,
        progress=True,
    )
    outputs = []
    for (value, sid), res in results.items():
        sub = out_dir / f"{param}_{value:g}" if isinstance(value, float) else out_dir / f"{param}_{value}"
        img_path, sidecar = save_transfer_result(res, sub, sid)
        outputs += [img_path, sidecar]
    table_path = out_dir / "sweep_metrics.csv"
    write_metric_table(bundles, table_path)
    outputs.append(table_path)
    xlabel = "structure weight" if param == "lam" else "initial inner steps"
    series = {
        "ssim": [b.mean_ssim for b in bundles],
        "ms_ssim": [b.mean_ms_ssim for b in bundles],
        "psnr_db": [b.mean_psnr_db for b in bundles],
        "frechet": [b.frechet for b in bundles],
    }
    for metric, ys in series.items():
        if any(v is None for v in ys):
            continue
        plot_path = out_dir / f"sweep_{metric}.png"
        plot_lines(values, {metric: ys}, xlabel, metric, plot_path, title=f"{metric} vs {xlabel}")
        outputs.append(plot_path)
    write_run_manifest(
        out_dir,
        "sweep",
        cfg,
        cfg.seed,
        {
            "config": sha256_file(args.config),
            "corpus": _corpus_hash(corpus),
            "featurizer": str(feat_path) if feat_path else None,
        },
        sha256_file(cfg.checkpoint),
        outputs,
        {"total_s": time.time() - started},
        started,
    )
    return 0


def cmd_eval(cfg: EvalCliConfig, args) -> int:
    started = time.time()
    corpus = load_corpus(cfg.corpus)
    tgt = resolve_label(corpus, cfg.target)
    ids = _select_ids(corpus, cfg.sample_ids, cfg.split, cfg.limit)
    if cfg.images is not None:
        image_dir = Path(cfg.images)

        def load_output(sid):
            path = image_dir / f"{sid}.png"
            if not path.exists():
                raise ConfigurationError(f"missing output image for sample {sid!r}: {path}")
            return load_image(path)

        outputs = [load_output(sid) for sid in ids]
        source_desc = str(image_dir)
    else:
        if cfg.source is None:
            raise ConfigurationError("eval with an adapter needs the 'source' domain key")
        src = resolve_label(corpus, cfg.source)
        from .config import coerce_config

        adapter = build_adapter(coerce_config(cfg.adapter, AdapterSpec, "adapter"), corpus, src, tgt)
        outputs = [adapter(corpus.image(sid, src), sid) for sid in ids]
        source_desc = f"adapter:{adapter.name}"
    featurizer = None
    if cfg.featurizer:
        featurizer, _ = load_featurizer(cfg.featurizer)
    real_images = [corpus.image(sid, tgt) for sid in corpus.sample_ids(split="test")]
    pairs = [(sid, out, corpus.image(sid, tgt)) for sid, out in zip(ids, outputs)]
    bundle = metric_report(
        pairs,
        lam=cfg.lam,
        real_images=real_images if featurizer is not None else None,
        featurizer=featurizer,
        seed=cfg.seed,
    )
    out_path = Path(cfg.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_metric_table(bundle, out_path)
    print(
        f"eval of {source_desc} vs {cfg.target} ground truth on {bundle.count} images: "
        f"ssim {bundle.mean_ssim:.4f} (se {bundle.bootstrap_se['ssim']:.4f})  "
        f"ms-ssim {bundle.mean_ms_ssim:.4f}  psnr {bundle.mean_psnr_db:.2f} dB  frechet {bundle.frechet}"
    )
    write_run_manifest(
        out_path.parent,
        "eval",
        cfg,
        cfg.seed,
        {"config": sha256_file(args.config), "corpus": _corpus_hash(corpus)},
        None,
        [out_path],
        {"total_s": time.time() - started},
        started,
    )
    return 0


ERROR_STUDY_MODES = ("null/null", "source/source", "target/source", "none/target")


def cmd_error_study(cfg: ErrorStudyCliConfig, args) -> int:
    started = time.time()
    corpus = load_corpus(cfg.corpus)
    model, _, _ = load_checkpoint(cfg.checkpoint)
    src = resolve_label(corpus, cfg.source)
    tgt = resolve_label(corpus, cfg.target)
    ids = _select_ids(corpus, None, "test", cfg.n_images)
    x0 = torch.cat([hwc_to_tensor(corpus.image(sid, src)) for sid in ids])
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def conditions(mode):
        return {
            "null/null": (NULL, NULL),
            "source/source": (src, src),
            "target/source": (tgt, src),
            "none/target": (ABSENT, tgt),
        }[mode]

    def score(y0):
        outs = tensor_to_hwc(y0)
        outs = outs[None] if outs.ndim == 3 else outs
        ssims = [ssim(outs[i], tensor_to_hwc(x0[i : i + 1])) for i in range(len(ids))]
        mse = float(((y0 - x0) ** 2).mean())
        return float(np.mean(ssims)), mse

    rows = []
    for t_steps in cfg.t_grid:
        m = model.with_schedule(model.schedule.subsample(int(t_steps)))
        for mode in ERROR_STUDY_MODES:
            c_inv, c_smp = conditions(mode)
            traj = invert_trajectory(m, x0, c_inv, "structural")
            mean_ssim, mean_mse = score(ddim_sample(traj.state(m.schedule.total_steps), m, c_smp))
            rows.append(
                {"t": int(t_steps), "mode": mode, "prompted": False, "mean_ssim": mean_ssim, "mean_mse": mean_mse}
            )
            if cfg.with_prompts and mode in ("null/null", "source/source"):
                loss_cfg = LossConfig(lam=1.0, ist_init=cfg.ist_init)
                prompts, _, _ = optimize_prompts(traj, None, m, c_smp, loss_cfg)
                mean_ssim, mean_mse = score(
                    prompted_sample(traj.state(m.schedule.total_steps), prompts, m, c_smp)
                )
                rows.append(
                    {"t": int(t_steps), "mode": mode, "prompted": True, "mean_ssim": mean_ssim, "mean_mse": mean_mse}
                )
            print(
                f"T={t_steps} {mode}: ssim {rows[-1]['mean_ssim']:.4f} mse {rows[-1]['mean_mse']:.6f}"
                f"{' (prompted)' if rows[-1]['prompted'] else ''}",
                flush=True,
            )

    table_path = out_dir / "error_study.csv"
    with open(table_path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["t", "mode", "prompted", "mean_ssim", "mean_mse"])
        w.writeheader()
        w.writerows(rows)
    plot_path = out_dir / "error_study_ssim.png"
    plot_error_study(rows, plot_path)

    t_max = max(int(t) for t in cfg.t_grid)
    labels = {
        ("null/null", False): "unconditional round trip",
        ("null/null", True): "unconditional + prompts",
        ("source/source", False): "conditional round trip",
        ("source/source", True): "conditional + prompts",
    }
    summary_path = out_dir / "summary.txt"
    with open(summary_path, "w", encoding="utf-8") as f:
        for row in rows:
            key = (row["mode"], row["prompted"])
            if row["t"] == t_max and key in labels:
                line = f"{labels[key]:32s} T={t_max}  ssim {row['mean_ssim']:.4f}  mse {row['mean_mse']:.6f}"
                print(line)
                f.write(line + "\n")
    write_run_manifest(
        out_dir,
        "error-study",
        cfg,
        cfg.seed,
        {"config": sha256_file(args.config), "corpus": _corpus_hash(corpus)},
        sha256_file(cfg.checkpoint),
        [table_path, plot_path, summary_path],
        {"total_s": time.time() - started},
        started,
    )
    return 0


def cmd_report(cfg: ReportCliConfig, args) -> int:
    started = time.time()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    summary_lines = []
    for table in cfg.tables:
        rows = read_metric_table(table)
        corpus_rows = [r for r in rows if r["image_id"] == "corpus"]
        stem = Path(table).stem
        for r in corpus_rows:
            summary_lines.append(
                f"{stem}: lambda={r['lambda']} ssim={r['ssim']:.4f} ms_ssim={r['ms_ssim']:.4f} "
                f"psnr={r['psnr_db']:.2f} frechet={r['frechet']}"
            )
        lams = [r["lambda"] for r in corpus_rows]
        if len(corpus_rows) > 1 and all(v is not None for v in lams):
            for metric in ("ssim", "ms_ssim", "psnr_db", "frechet"):
                ys = [r[metric] for r in corpus_rows]
                if any(v is None for v in ys):
                    continue
                path = out_dir / f"{stem}_{metric}.png"
                plot_lines(lams, {metric: ys}, "structure weight", metric, path)
                outputs.append(path)
    for log_path in cfg.loss_logs:
        with open(log_path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            log = [
                (int(r["t"]), int(r["inner_step"]), float(r["struct_loss"]), float(r["style_loss"]), float(r["total"]))
                for r in reader
            ]
        path = out_dir / f"{Path(log_path).stem}.png"
        plot_loss_log(log, path)
        outputs.append(path)
    for err_table in cfg.error_tables:
        with open(err_table, newline="", encoding="utf-8") as f:
            rows = [
                {**r, "prompted": r["prompted"] == "True", "t": int(r["t"]), "mean_ssim": float(r["mean_ssim"])}
                for r in csv.DictReader(f)
            ]
        path = out_dir / f"{Path(err_table).stem}_ssim.png"
        plot_error_study(rows, path)
        outputs.append(path)
    summary_path = out_dir / "summary.txt"
    with open(summary_path, "w", encoding="utf-8") as f:
        f.write("\n".join(summary_lines) + ("\n" if summary_lines else ""))
    outputs.append(summary_path)
    for line in summary_lines:
        print(line)
    write_run_manifest(
        out_dir,
        "report",
        cfg,
        cfg.seed,
        {"config": sha256_file(args.config)},
        None,
        outputs,
        {"total_s": time.time() - started},
        started,
    )
    return 0


# ---------------------------------------------------------------------------
# entry point


HANDLERS = {
    "gen-data": (GenDataConfig, cmd_gen_data),
    "train": (TrainCliConfig, cmd_train),
    "transfer": (TransferCliConfig, cmd_transfer),
    "sweep": (SweepCliConfig, cmd_sweep),
    "eval": (EvalCliConfig, cmd_eval),
    "error-study": (ErrorStudyCliConfig, cmd_error_study),
    "report": (ReportCliConfig, cmd_report),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML config file (strict schema)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--workers", type=int, default=1, help="per-image fan-out; determinism holds at 1")
    common.add_argument(
        "--cache-dir",
        default=os.environ.get(CACHE_DIR_ENV),
        help=f"trajectory/prompt cache directory (default: ${CACHE_DIR_ENV})",
    )
    parser = argparse.ArgumentParser(prog="restain", description="Dual-path diffusion stain transfer toolkit")
    parser.add_argument("--version", action="version", version=f"restain {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-data": "generate the paired synthetic multi-stain corpus",
        "train": "train the class-conditional denoiser",
        "transfer": "run the three-stage transfer on corpus images",
        "sweep": "sweep the balance weight or inner-step budget",
        "eval": "score outputs (or an adapter) against ground-truth renders",
        "error-study": "round-trip error vs step count under different conditions",
        "report": "re-plot and summarize existing metric tables",
    }
    for verb in HANDLERS:
        sub.add_parser(verb, parents=[common], help=helps[verb])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers <= 1:
        torch.set_num_threads(1)
    schema, handler = HANDLERS[args.command]
    try:
        raw = load_raw_config(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = parse_command_config(args.command, raw)
        return handler(cfg, args)
    except (ConfigurationError, CorpusError) as e:
        _emit_error(args.command, e)
        return 2
    except RestainError as e:
        _emit_error(args.command, e)
        return 3
    except (ValueError, OSError, KeyError) as e:
        _emit_error(args.command, e)
        return 1


def _emit_error(command: str, exc: Exception) -> None:
    record = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
