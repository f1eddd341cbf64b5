"""Command-line interface.

Verbs: simulate, register, contrast, train, sample, eval, pipeline.
Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.

Heavy modules are imported inside the handlers so that --threads can pin
the BLAS/OpenMP pool size before numpy is loaded.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, NumericalError, PipelineStageError


def _load_cfg(args):
    from .config import load_config, override_seeds

    if not args.config:
        raise ConfigError("this command requires --config")
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = override_seeds(cfg, args.seed_override)
    return cfg


def _cmd_simulate(args) -> int:
    from pathlib import Path

    from .pipeline import PhantomRun, _phantom_spec_from_config, simulate_phantom

    cfg = _load_cfg(args)
    out_dir = Path(args.out_dir)
    for i in range(cfg.phantom.n_phantoms):
        run = PhantomRun(
            index=i,
            seq_id=f"ph_{i:03d}",
            spec=_phantom_spec_from_config(cfg, cfg.seeds.phantom + i),
        )
        simulate_phantom(cfg, run, out_dir)
    print(f"wrote {cfg.phantom.n_phantoms} phantoms to {out_dir}")
    return 0


def _cmd_register(args) -> int:
    from .register import stabilize
    from .tensorfile import read_tensor, write_csv, write_tensor

    seq = read_tensor(args.infile)
    aligned, shifts, confidence = stabilize(
        seq, eps=args.eps, mode=args.mode, min_peak=args.min_peak
    )
    write_tensor(args.outfile, aligned, metadata={"eps": args.eps, "mode": args.mode})
    write_csv(
        args.shifts_csv,
        ["frame", "dy", "dx", "confidence"],
        [[t, d.dy, d.dx, float(c)] for t, (d, c) in enumerate(zip(shifts, confidence))],
    )
    print(f"aligned {seq.shape[0]} frames -> {args.outfile}")
    return 0


def _cmd_contrast(args) -> int:
    from .contrast import contrast_map, flow_prior, temporal_stats
    from .tensorfile import read_tensor, write_tensor

    seq = read_tensor(args.infile)
    mu, sigma = temporal_stats(seq)
    k = contrast_map(mu, sigma, eps=args.contrast_eps)
    flow = flow_prior(k, eps=args.flow_eps)
    write_tensor(args.k_out, k, metadata={"contrast_eps": args.contrast_eps})
    write_tensor(args.flow_out, flow, metadata={"flow_eps": args.flow_eps})
    print(f"contrast and flow maps written from {seq.shape[0]} frames")
    return 0


def _cmd_train(args) -> int:
    from pathlib import Path

    import numpy as np

    from .diffusion import DenoiserArch, TrainConfig, init_params, linear_schedule, train
    from .tensorfile import read_tensor, save_model, write_csv

    cfg = _load_cfg(args)
    data_dir = Path(args.data_dir)
    target_files = sorted(data_dir.glob("*/target.spkt"))
    if not target_files:
        raise ConfigError(f"no <sample>/target.spkt files under {data_dir}")
    targets, conds = [], []
    for tf in target_files:
        cf = tf.parent / "condition.spkt"
        if not cf.exists():
            raise ConfigError(f"missing condition tensor next to {tf}")
        targets.append(read_tensor(tf))
        conds.append(read_tensor(cf))
    targets = np.stack(targets)
    conds = np.stack(conds)
    di = cfg.diffusion
    if conds.shape[1] != di.n_few + 1:
        raise ConfigError(
            f"condition files have {conds.shape[1]} channels, config expects {di.n_few + 1}"
        )
    arch = DenoiserArch(
        in_channels=1 + di.n_few + 1,
        hidden_channels=di.hidden_channels,
        n_layers=di.n_layers,
        kernel_size=di.kernel_size,
        time_embed_dim=di.time_embed_dim,
    )
    sched = linear_schedule(di.timesteps, di.beta_start, di.beta_end)
    params = init_params(arch, seed=cfg.seeds.train)
    tconf = TrainConfig(
        steps=di.train_steps,
        batch_size=di.batch_size,
        learning_rate=di.learning_rate,
        weight_decay=di.weight_decay,
        seed=cfg.seeds.train,
    )
    trained, trace = train(params, targets, conds, sched, tconf)
    save_model(
        args.model_out,
        trained,
        sched,
        di.beta_start,
        di.beta_end,
        n_few=di.n_few,
        seeds={"train": cfg.seeds.train},
        metadata={
            "train_samples": len(targets),
            "contrast_eps": cfg.contrast.contrast_eps,
            "flow_eps": cfg.contrast.flow_eps,
        },
    )
    trace_path = str(args.model_out) + ".loss.csv"
    write_csv(trace_path, ["step", "loss"], [[i + 1, v] for i, v in enumerate(trace)])
    print(f"trained {len(trace)} steps; final loss {trace[-1]:.6f}; model -> {args.model_out}")
    return 0


def _cmd_sample(args) -> int:
    from .contrast import contrast_map, flow_prior, temporal_stats
    from .diffusion import make_condition, sample_flow, uniform_sampler_config
    from .tensorfile import load_model, read_tensor, write_tensor

    params, sched, header = load_model(args.model)
    frames = read_tensor(args.frames)
    n_few = int(header["n_few"])
    if frames.ndim != 3 or frames.shape[0] != n_few:
        raise ConfigError(f"frames tensor must be ({n_few}, H, W); got {frames.shape}")
    meta = header.get("metadata", {})
    contrast_eps = float(meta.get("contrast_eps", 1e-6))
    flow_eps = float(meta.get("flow_eps", 1e-6))
    mu, sigma = temporal_stats(frames)
    prior = flow_prior(contrast_map(mu, sigma, eps=contrast_eps), eps=flow_eps)
    cond = make_condition(frames, prior)
    sampler = uniform_sampler_config(sched.T, args.steps)
    # without a multiframe reference, the prior's own record is the only
    # available denormalization convention; recorded in the sidecar
    _, flow = sample_flow(params, cond, sched, sampler, seed=args.seed, record=cond.prior_record)
    write_tensor(
        args.outfile,
        flow,
        metadata={
            "norm_lo": cond.prior_record.lo,
            "norm_hi": cond.prior_record.hi,
            "denorm_convention": "few-frame prior record",
            "steps": args.steps,
            "seed": args.seed,
        },
    )
    print(f"reconstructed flow map -> {args.outfile}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import evaluate_pair
    from .tensorfile import read_tensor, write_csv

    pred = read_tensor(args.pred)
    ref = read_tensor(args.ref)
    row = evaluate_pair(pred, ref)
    write_csv(
        args.out_csv,
        ["method", "sequence_id", "ssim", "psnr_db", "mae"],
        [[args.method, args.sequence_id, row["ssim"], row["psnr_db"], row["mae"]]],
    )
    print(f"ssim {row['ssim']:.4f}  psnr {row['psnr_db']:.2f} dB  mae {row['mae']:.4g}")
    return 0


def _cmd_pipeline(args) -> int:
    from pathlib import Path

    from .config import load_config, override_seeds
    from .pipeline import run_pipeline

    if not args.config:
        raise ConfigError("pipeline requires --config")
    config_text = Path(args.config).read_text(encoding="utf-8")
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = override_seeds(cfg, args.seed_override)
        config_text = None  # seeds changed; re-render so the manifest hash is honest
    summary = run_pipeline(cfg, args.out_dir, config_text=config_text)
    print(f"pipeline complete; summary -> {summary}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speckleflow",
        description="Laser-speckle flow imaging: stabilization, contrast, diffusion reconstruction.",
    )
    parser.add_argument("--config", help="run configuration file (sectioned key = value)")
    parser.add_argument("--out-dir", default="runs/latest", help="output directory")
    parser.add_argument("--seed-override", type=int, default=None, help="replace all config seeds")
    parser.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize phantom sequences with ground truth")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("register", help="stabilize a sequence by phase correlation")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--shifts-csv", required=True)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--mode", choices=["circular", "zero_fill"], default="circular")
    p.add_argument("--min-peak", type=float, default=0.03)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("contrast", help="temporal contrast and flow maps from a sequence")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--k-out", required=True)
    p.add_argument("--flow-out", required=True)
    p.add_argument("--contrast-eps", type=float, default=1e-6)
    p.add_argument("--flow-eps", type=float, default=1e-6)
    p.set_defaults(func=_cmd_contrast)

    p = sub.add_parser("train", help="train the conditional denoiser on prepared pairs")
    p.add_argument("--data-dir", required=True, help="directory of <sample>/{target,condition}.spkt")
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="reconstruct a flow map from a few aligned frames")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True, help="(n_few, H, W) aligned raw frames tensor")
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="SSIM/PSNR/MAE of a prediction against a reference")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--method", default="pred")
    p.add_argument("--sequence-id", default="seq")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="full run: simulate, stabilize, train, sample, evaluate")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineStageError):
        exc = exc.__cause__ or exc
    if isinstance(exc, NumericalError):
        return 3
    if isinstance(exc, (ConfigError, ValueError, KeyError)):
        return 2
    if isinstance(exc, OSError):
        return 4
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single funnel to exit codes
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
