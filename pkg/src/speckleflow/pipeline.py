"""End-to-end experiment run: simulate, stabilize, build references and
conditions, train, sample, and evaluate the direct few-frame baseline
against the diffusion reconstruction.

A run directory holds every artifact plus a manifest (config hash + seeds)
so the whole run can be reproduced from those alone. When a stage fails,
everything produced so far stays on disk and the failing stage is named.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, contrast, metrics, phantom, register
from .config import PipelineConfig, config_hash, render_config
from .diffusion import (
    Condition,
    DenoiserArch,
    TrainConfig,
    init_params,
    linear_schedule,
    make_condition,
    sample,
    train,
    uniform_sampler_config,
)
from .errors import ConfigError, PipelineStageError
from .tensorfile import (
    export_png,
    load_model,
    read_tensor,
    save_model,
    write_csv,
    write_metadata,
    write_tensor,
)

SUMMARY_HEADER = ["method", "sequence_id", "ssim", "psnr_db", "mae"]
AGGREGATE_HEADER = [
    "method",
    "ssim_mean",
    "ssim_std",
    "psnr_db_mean",
    "psnr_db_std",
    "mae_mean",
    "mae_std",
]


@dataclass
class PhantomRun:
    """Per-phantom state carried through the pipeline stages."""

    index: int
    seq_id: str
    spec: phantom.PhantomSpec
    reference_flow: np.ndarray | None = None  # multiframe flow from the aligned stack
    reference_record: contrast.NormalizationRecord | None = None
    direct_flow: np.ndarray | None = None  # flow from the n_few aligned frames
    condition: Condition | None = None
    target: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_train(self) -> bool:
        return self.spec.seed % 2 == 0


def _phantom_spec_from_config(cfg: PipelineConfig, seed: int) -> phantom.PhantomSpec:
    ph = cfg.phantom
    return phantom.random_phantom_spec(
        seed=seed,
        height=ph.height,
        width=ph.width,
        n_frames=ph.n_frames,
        n_vessels=(ph.vessel_count_min, ph.vessel_count_max),
        radius_range=(ph.vessel_radius_min, ph.vessel_radius_max),
        k_range=(ph.vessel_k_min, ph.vessel_k_max),
        background_k=ph.background_k,
        base_intensity=ph.base_intensity,
        intensity_scale=ph.intensity_scale,
        max_shift=ph.max_shift,
        boundary=ph.boundary,
    )


def simulate_phantom(cfg: PipelineConfig, run: PhantomRun, phantoms_dir: Path) -> None:
    """Synthesize one phantom and write its raw artifacts."""
    seq, gt = phantom.synthesize_sequence(
        run.spec, contrast_eps=cfg.contrast.contrast_eps, flow_eps=cfg.contrast.flow_eps
    )
    pdir = phantoms_dir / run.seq_id
    pdir.mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": run.spec.seed,
        "rng_transform": phantom.RNG_TRANSFORM,
        "boundary": run.spec.boundary,
    }
    write_tensor(pdir / "sequence.spkt", seq, metadata=meta)
    write_tensor(pdir / "k_true.spkt", gt.k_true_map)
    write_tensor(pdir / "mu.spkt", gt.mu_map)
    write_tensor(pdir / "reference_flow_gt.spkt", gt.reference_flow)
    write_csv(
        pdir / "shifts_gt.csv",
        ["frame", "dy", "dx"],
        [[t, d.dy, d.dx] for t, d in enumerate(gt.shifts)],
    )


def stabilize_and_condition(
    cfg: PipelineConfig, run: PhantomRun, seq: np.ndarray, stabilized_dir: Path
) -> None:
    """Stage 1 for one phantom: align the sequence, then derive the
    multiframe reference flow, the direct few-frame flow, the conditioning
    tensor, and the normalized training target."""
    reg = cfg.registration
    aligned, shifts, confidence = register.stabilize(
        seq, eps=reg.eps, mode=reg.mode, min_peak=reg.min_peak, reference=reg.reference
    )
    pdir = stabilized_dir / run.seq_id
    pdir.mkdir(parents=True, exist_ok=True)
    write_tensor(pdir / "aligned.spkt", aligned)
    write_csv(
        pdir / "shifts.csv",
        ["frame", "dy", "dx", "confidence"],
        [[t, d.dy, d.dx, float(c)] for t, (d, c) in enumerate(zip(shifts, confidence))],
    )

    co = cfg.contrast
    mu, sigma = contrast.temporal_stats(aligned)
    k_full = contrast.contrast_map(mu, sigma, eps=co.contrast_eps)
    run.reference_flow = contrast.flow_prior(k_full, eps=co.flow_eps)
    target, record = contrast.robust_normalize(
        run.reference_flow, co.lo_percentile, co.hi_percentile
    )
    run.reference_record = record
    run.target = target.astype(np.float32)

    # the direct few-frame flow doubles as baseline and conditioning prior,
    # computed on exactly the frames the model sees
    few = aligned[: cfg.diffusion.n_few]
    mu_few, sigma_few = contrast.temporal_stats(few)
    k_few = contrast.contrast_map(mu_few, sigma_few, eps=co.contrast_eps)
    run.direct_flow = contrast.flow_prior(k_few, eps=co.flow_eps)
    run.condition = make_condition(few, run.direct_flow, co.lo_percentile, co.hi_percentile)

    write_tensor(
        pdir / "target.spkt",
        run.target,
        metadata={
            "norm_lo": record.lo,
            "norm_hi": record.hi,
            "contrast_eps": co.contrast_eps,
            "flow_eps": co.flow_eps,
        },
    )
    write_tensor(
        pdir / "condition.spkt", run.condition.channels, metadata={"n_few": cfg.diffusion.n_few}
    )
    write_tensor(pdir / "direct_flow.spkt", run.direct_flow)
    write_tensor(pdir / "reference_flow.spkt", run.reference_flow)


def train_model(cfg: PipelineConfig, runs: list[PhantomRun], model_dir: Path) -> Path:
    train_runs = [r for r in runs if r.is_train]
    if not train_runs:
        raise ConfigError("train split is empty (no even-seed phantoms)")
    di = cfg.diffusion
    targets = np.stack([r.target for r in train_runs])
    conds = np.stack([r.condition.channels for r in train_runs])
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
    model_dir.mkdir(parents=True, exist_ok=True)
    model_path = model_dir / "model.spkm"
    save_model(
        model_path,
        trained,
        sched,
        di.beta_start,
        di.beta_end,
        n_few=di.n_few,
        seeds={"train": cfg.seeds.train, "init": cfg.seeds.train},
        metadata={
            "train_samples": len(train_runs),
            "contrast_eps": cfg.contrast.contrast_eps,
            "flow_eps": cfg.contrast.flow_eps,
        },
    )
    write_csv(
        model_dir / "loss_trace.csv",
        ["step", "loss"],
        [[i + 1, loss] for i, loss in enumerate(trace)],
    )
    return model_path


def sample_and_evaluate(
    cfg: PipelineConfig, runs: list[PhantomRun], model_path: Path, out_dir: Path
) -> tuple[Path, Path]:
    test_runs = [r for r in runs if not r.is_train]
    if not test_runs:
        raise ConfigError("test split is empty (no odd-seed phantoms)")
    params, sched, _header = load_model(model_path)
    sampler = uniform_sampler_config(sched.T, cfg.diffusion.sample_steps)
    sample_dir = out_dir / "samples"
    sample_dir.mkdir(parents=True, exist_ok=True)
    rows: list[list] = []
    per_method: dict[str, list[dict[str, float]]] = {"direct5f": [], "diffusion": []}
    for run in test_runs:
        x0_norm = sample(params, run.condition, sched, sampler, seed=cfg.seeds.sample + run.index)
        # report in physical units using the multiframe reference's record
        flow = contrast.denormalize(x0_norm, run.reference_record)
        write_tensor(
            sample_dir / f"{run.seq_id}_flow.spkt",
            flow,
            metadata={
                "norm_lo": run.reference_record.lo,
                "norm_hi": run.reference_record.hi,
                "sample_seed": cfg.seeds.sample + run.index,
                "steps": sampler.S,
            },
        )
        for method, pred in (("direct5f", run.direct_flow), ("diffusion", flow)):
            row = metrics.evaluate_pair(pred, run.reference_flow)
            per_method[method].append(row)
            rows.append([method, run.seq_id, row["ssim"], row["psnr_db"], row["mae"]])

    eval_dir = out_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    summary_path = eval_dir / "summary.csv"
    write_csv(summary_path, SUMMARY_HEADER, rows)
    agg_rows = []
    for method in ("direct5f", "diffusion"):
        agg = metrics.aggregate(per_method[method])
        agg_rows.append([method] + [agg[key] for key in AGGREGATE_HEADER[1:]])
    aggregate_path = eval_dir / "aggregate.csv"
    write_csv(aggregate_path, AGGREGATE_HEADER, agg_rows)

    _export_figures(test_runs[0], out_dir)
    return summary_path, aggregate_path


def _export_figures(run: PhantomRun, out_dir: Path) -> None:
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    sampled = read_tensor(out_dir / "samples" / f"{run.seq_id}_flow.spkt")
    export_png(run.direct_flow, fig_dir / f"{run.seq_id}_direct5f.png")
    export_png(sampled, fig_dir / f"{run.seq_id}_diffusion.png")
    export_png(run.reference_flow, fig_dir / f"{run.seq_id}_reference.png")


def run_pipeline(cfg: PipelineConfig, out_dir, config_text: str | None = None) -> Path:
    """Execute the full pipeline; returns the summary CSV path.

    ``config_text`` should be the original config file contents so the
    manifest hash matches what the user wrote; it is re-rendered from the
    parsed config when omitted.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config_text is None:
        config_text = render_config(cfg)
    (out_dir / "config.ini").write_text(config_text, encoding="utf-8")

    runs = [
        PhantomRun(
            index=i,
            seq_id=f"ph_{i:03d}",
            spec=_phantom_spec_from_config(cfg, cfg.seeds.phantom + i),
        )
        for i in range(cfg.phantom.n_phantoms)
    ]
    manifest = {
        "config_sha256": config_hash(config_text),
        "package_version": __version__,
        "seed_phantom": cfg.seeds.phantom,
        "seed_train": cfg.seeds.train,
        "seed_sample": cfg.seeds.sample,
        "split_rule": "phantom seed parity (even=train, odd=test)",
        "train_ids": ",".join(r.seq_id for r in runs if r.is_train),
        "test_ids": ",".join(r.seq_id for r in runs if not r.is_train),
        "rng_transform": phantom.RNG_TRANSFORM,
        "condition_axes": (
            f"motion amplitude <= {cfg.phantom.max_shift}px, "
            f"vessel k_true in [{cfg.phantom.vessel_k_min}, {cfg.phantom.vessel_k_max}]"
        ),
    }
    write_metadata(out_dir / "manifest.txt", manifest)

    stage = "simulate"
    try:
        for run in runs:
            simulate_phantom(cfg, run, out_dir / "phantoms")

        stage = "stabilize"
        for run in runs:
            seq = read_tensor(out_dir / "phantoms" / run.seq_id / "sequence.spkt")
            stabilize_and_condition(cfg, run, seq, out_dir / "stabilized")

        stage = "train"
        model_path = train_model(cfg, runs, out_dir / "model")

        stage = "sample_evaluate"
        summary_path, _ = sample_and_evaluate(cfg, runs, model_path, out_dir)
    except Exception as exc:
        raise PipelineStageError(stage, exc) from exc
    return summary_path
