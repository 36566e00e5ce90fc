"""Command-line entry points for the segmentation toolkit.

Subcommands cover the full artifact chain: synthesize data, train the
three networks, benchmark multi-round refinement, segment a single
volume, and serve the HTTP session API. Every subcommand accepts
``--preset {desk,paper}`` for bundled configurations or ``--config``
with a preset JSON file, plus ``--seed`` for the stochastic parts of
the subcommand itself.

Exit codes: 0 on success, 2 on argument or validation errors, 1 on
runtime failures (missing files, diverged training, numeric faults).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import socket
import sys
from pathlib import Path

import numpy as np

from .data import (INTERACTION_TYPES, NumericError, TrainingError, ValidationError,
                   Volume)
from .engine import (INTERACTION_WEIGHTS_FILE, MEMORY_WEIGHTS_FILE, ModelBundle,
                     Session, default_weights_dir)
from .evaluation import POLICIES, emit_report, pick_round_one_slice, run_benchmark
from .interaction import save_interaction_net
from .memory import load_memory_segmenter, save_memory_segmenter
from .presets import BUILTIN_PRESETS, Preset, load_preset
from .rasterize import GeometryError, rasterize_geometry
from .simulate import simulate_guidance
from .synthetic import generate_dataset, generate_synthetic_volume
from .training import (make_memory_samples, train_interaction_pipeline,
                       train_memory_net, train_quality_head, write_loss_csv)
from .volume_io import load_volume, save_volume_raw, save_volume_nifti


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, metavar="FILE",
                        help="preset JSON file (overrides --preset)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for this subcommand's randomness (default 0)")
    common.add_argument("--preset", choices=BUILTIN_PRESETS, default=argparse.SUPPRESS,
                        help="bundled configuration (default desk)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="memseg", parents=[common],
        description="Interactive volumetric segmentation with a quality-aware memory network.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("generate-data", parents=[common],
                       help="write synthetic volumes with ground truth")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--count", type=int, default=None,
                   help="number of volumes (default: preset's num_volumes)")

    for name, help_text in (("train-memory", "fit the propagation network"),
                            ("train-interaction", "fit the interaction network"),
                            ("train-quality", "fit the quality head (needs a trained "
                                              "propagation network)")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--data", metavar="DIR", default=None,
                       help="dataset from generate-data (default: synthesize in memory)")
        p.add_argument("--weights", metavar="DIR", default=None,
                       help="weights directory (default: $MEMSEG_WEIGHTS_DIR or ./weights)")
        p.add_argument("--epochs", type=int, default=None,
                       help="override the preset's epoch count")

    p = sub.add_parser("benchmark", parents=[common],
                       help="multi-round refinement benchmark -> CSV/JSON/PNG report")
    p.add_argument("--policy", choices=POLICIES, default="quality")
    p.add_argument("--rounds", type=int, default=6)
    p.add_argument("--interaction", choices=INTERACTION_TYPES + ("all",), default="all")
    p.add_argument("--volumes", type=int, default=20,
                   help="held-out volumes to synthesize when --data is not given")
    p.add_argument("--data", metavar="DIR", default=None)
    p.add_argument("--data-seed", type=int, default=7777,
                   help="seed for synthesized held-out volumes (kept apart from "
                        "training seeds)")
    p.add_argument("--weights", metavar="DIR", default=None)
    p.add_argument("--out", metavar="DIR", default="report")

    p = sub.add_parser("segment", parents=[common],
                       help="segment one volume from simulated or file-provided guidance")
    p.add_argument("--volume", metavar="FILE", default=None,
                   help="input volume (.raw with sidecar, .nii, .nii.gz)")
    p.add_argument("--synthetic", action="store_true",
                   help="segment a synthesized volume instead of a file")
    p.add_argument("--guidance", metavar="FILE", default=None,
                   help="guidance JSON: {slice_index, type, geometry}")
    p.add_argument("--interaction", choices=INTERACTION_TYPES, default=None,
                   help="simulate guidance of this type from ground truth")
    p.add_argument("--gt", metavar="FILE", default=None,
                   help="ground-truth volume for simulated guidance")
    p.add_argument("--rounds", type=int, default=1,
                   help="refinement rounds (simulated guidance only)")
    p.add_argument("--weights", metavar="DIR", default=None)
    p.add_argument("--out", metavar="FILE", default="mask.nii.gz",
                   help="output mask (.raw, .nii, or .nii.gz)")

    p = sub.add_parser("serve", parents=[common], help="start the HTTP session API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000,
                   help="TCP port; 0 binds an ephemeral port and prints it")
    p.add_argument("--weights", metavar="DIR", default=None)

    return parser


def _resolve_preset(args: argparse.Namespace) -> Preset:
    config = getattr(args, "config", None)
    if config is not None:
        return load_preset(config)
    return load_preset(getattr(args, "preset", "desk"))


def _weights_dir(args: argparse.Namespace) -> Path:
    given = getattr(args, "weights", None)
    return Path(given) if given else default_weights_dir()


def _load_data_dir(data_dir: Path) -> list[tuple[Volume, np.ndarray]]:
    """Read vol_*.raw / vol_*_gt.raw pairs written by generate-data."""
    pairs = []
    for raw in sorted(data_dir.glob("*.raw")):
        if raw.stem.endswith("_gt"):
            continue
        gt_path = raw.with_name(raw.stem + "_gt.raw")
        if not gt_path.exists():
            raise ValidationError(f"missing ground truth next to {raw.name}")
        volume = load_volume(raw)
        gt = (load_volume(gt_path).voxels > 0.5).astype(np.uint8)
        pairs.append((volume, gt))
    if not pairs:
        raise ValidationError(f"no volume pairs found in {data_dir}")
    return pairs


def _training_volumes(args: argparse.Namespace, preset: Preset):
    if args.data is not None:
        return _load_data_dir(Path(args.data))
    return generate_dataset(preset.num_volumes, preset.data, seed=preset.data.seed)


def _with_overrides(cfg, args: argparse.Namespace):
    if hasattr(args, "seed"):
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    return cfg


def _save_mask_volume(mask: np.ndarray, source: Volume, path: Path) -> None:
    out = Volume(mask.astype(np.float32), spacing=source.spacing,
                 identifier=f"{source.identifier}-mask")
    name = path.name
    if name.endswith((".nii", ".nii.gz")):
        save_volume_nifti(out, path)
    elif name.endswith(".raw"):
        save_volume_raw(out, path)
    else:
        raise ValidationError(f"unsupported mask extension on {name!r} "
                              "(use .raw, .nii, or .nii.gz)")


# -- subcommands -------------------------------------------------------------

def _cmd_generate_data(args: argparse.Namespace, preset: Preset) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = args.count if args.count is not None else preset.num_volumes
    seed = getattr(args, "seed", preset.data.seed)
    volumes = generate_dataset(count, preset.data, seed=seed)
    for i, (volume, gt) in enumerate(volumes):
        stem = f"vol_{i:04d}"
        save_volume_raw(volume, out / f"{stem}.raw")
        gt_vol = Volume(gt.astype(np.float32), spacing=volume.spacing,
                        identifier=f"{volume.identifier}-gt")
        save_volume_raw(gt_vol, out / f"{stem}_gt.raw")
    print(f"wrote {count} volumes to {out}")
    return 0


def _cmd_train_memory(args: argparse.Namespace, preset: Preset) -> int:
    hparams = _with_overrides(preset.memory_train, args)
    volumes = _training_volumes(args, preset)
    samples = make_memory_samples(volumes, per_volume=preset.samples_per_volume,
                                  seed=hparams.seed)
    model, losses = train_memory_net(samples, hparams, feature_cfg=preset.feature)
    out = _weights_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_memory_segmenter(model, out / MEMORY_WEIGHTS_FILE)
    write_loss_csv(out / "memory_loss.csv", losses)
    print(f"memory net: {len(losses)} epochs, final loss {losses[-1]:.6f}, "
          f"weights in {out}")
    return 0


def _cmd_train_interaction(args: argparse.Namespace, preset: Preset) -> int:
    hparams = _with_overrides(preset.interaction_train, args)
    volumes = _training_volumes(args, preset)
    model, losses = train_interaction_pipeline(volumes, preset.interaction, hparams,
                                               preset.simulator)
    out = _weights_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_interaction_net(model, out / INTERACTION_WEIGHTS_FILE)
    write_loss_csv(out / "interaction_loss.csv", losses)
    print(f"interaction net: {len(losses)} epochs, final loss {losses[-1]:.6f}, "
          f"weights in {out}")
    return 0


def _cmd_train_quality(args: argparse.Namespace, preset: Preset) -> int:
    hparams = _with_overrides(preset.quality_train, args)
    weights = _weights_dir(args)
    model = load_memory_segmenter(weights / MEMORY_WEIGHTS_FILE)
    volumes = _training_volumes(args, preset)
    samples = make_memory_samples(volumes, per_volume=preset.samples_per_volume,
                                  seed=hparams.seed)
    model, losses = train_quality_head(model, samples, hparams)
    save_memory_segmenter(model, weights / MEMORY_WEIGHTS_FILE)
    write_loss_csv(weights / "quality_loss.csv", losses)
    print(f"quality head: {len(losses)} epochs, final loss {losses[-1]:.6f}, "
          f"weights in {weights}")
    return 0


def _cmd_benchmark(args: argparse.Namespace, preset: Preset) -> int:
    bundle = ModelBundle.load(_weights_dir(args))
    if args.data is not None:
        volumes = _load_data_dir(Path(args.data))
    else:
        volumes = generate_dataset(args.volumes, preset.data, seed=args.data_seed)
    engine_cfg = preset.engine
    if engine_cfg.max_rounds < args.rounds:
        engine_cfg = dataclasses.replace(engine_cfg, max_rounds=args.rounds)
    types = INTERACTION_TYPES if args.interaction == "all" else (args.interaction,)
    results = []
    for interaction_type in types:
        result = run_benchmark(volumes, bundle, interaction_type, rounds=args.rounds,
                               policy=args.policy, sim_cfg=preset.simulator,
                               engine_cfg=engine_cfg,
                               master_seed=getattr(args, "seed", 0))
        means = result.mean_per_round
        print(f"{interaction_type}/{args.policy}: "
              f"round 1 DSC {means[0]:.4f} -> round {args.rounds} DSC {means[-1]:.4f}")
        results.append(result)
    paths = emit_report(results, args.out)
    print("report: " + ", ".join(str(p) for p in paths))
    return 0


def _segment_from_guidance_file(session: Session, guidance_path: Path) -> None:
    payload = json.loads(guidance_path.read_text())
    if not isinstance(payload, dict):
        raise ValidationError("guidance JSON must be an object")
    for name in ("slice_index", "type", "geometry"):
        if name not in payload:
            raise ValidationError(f"guidance JSON is missing {name!r}")
    k = payload["slice_index"]
    if not isinstance(k, int) or not (0 <= k < session.volume.num_slices):
        raise ValidationError(
            f"guidance slice_index must be in [0, {session.volume.num_slices})")
    guidance = rasterize_geometry(payload["type"], payload["geometry"],
                                  session.volume.shape[:2], k)
    session.initialize(guidance)
    session.propagate(k)


def _segment_simulated(session: Session, gt: np.ndarray, interaction_type: str,
                       rounds: int, sim_cfg, seed: int) -> None:
    k = pick_round_one_slice(gt)
    for r in range(rounds):
        cfg = sim_cfg.with_seed(seed * 1_000_003 + r)
        guidance = simulate_guidance(interaction_type, gt[:, :, k].astype(bool),
                                     cfg, slice_index=k)
        if r == 0:
            session.initialize(guidance)
            session.propagate(k)
        else:
            session.refine_round(guidance)
        nxt = session.suggest_next_slice()
        if nxt is None:
            break
        k = nxt


def _cmd_segment(args: argparse.Namespace, preset: Preset) -> int:
    if (args.volume is None) == (not args.synthetic):
        raise ValidationError("provide exactly one of --volume or --synthetic")
    if (args.guidance is None) == (args.interaction is None):
        raise ValidationError("provide exactly one of --guidance or --interaction")
    if args.rounds < 1:
        raise ValidationError("--rounds must be >= 1")
    seed = getattr(args, "seed", 0)

    bundle = ModelBundle.load(_weights_dir(args))
    if args.synthetic:
        spec = dataclasses.replace(preset.data, seed=seed)
        volume, gt = generate_synthetic_volume(spec)
    else:
        volume = load_volume(args.volume)
        gt = None
        if args.gt is not None:
            gt = (load_volume(args.gt).voxels > 0.5).astype(np.uint8)

    engine_cfg = preset.engine
    if engine_cfg.max_rounds < args.rounds:
        engine_cfg = dataclasses.replace(engine_cfg, max_rounds=args.rounds)
    session = Session(volume, bundle, engine_cfg)

    if args.guidance is not None:
        if args.rounds != 1:
            raise ValidationError("--rounds needs simulated guidance (--interaction)")
        _segment_from_guidance_file(session, Path(args.guidance))
    else:
        if gt is None:
            raise ValidationError("--interaction needs ground truth "
                                  "(--gt FILE, or --synthetic)")
        _segment_simulated(session, gt, args.interaction, args.rounds,
                           preset.simulator, seed)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _save_mask_volume(session.mask_volume(), volume, out)
    print(f"wrote mask to {out}")
    return 0


def _cmd_serve(args: argparse.Namespace, preset: Preset) -> int:
    import uvicorn

    from .server import create_app

    bundle = ModelBundle.load(_weights_dir(args))
    app = create_app(bundle, preset.engine)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((args.host, args.port))
    port = sock.getsockname()[1]
    print(f"serving on http://{args.host}:{port}", flush=True)
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])
    return 0


_COMMANDS = {
    "generate-data": _cmd_generate_data,
    "train-memory": _cmd_train_memory,
    "train-interaction": _cmd_train_interaction,
    "train-quality": _cmd_train_quality,
    "benchmark": _cmd_benchmark,
    "segment": _cmd_segment,
    "serve": _cmd_serve,
}


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        preset = _resolve_preset(args)
        return _COMMANDS[args.command](args, preset)
    except (ValidationError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, NumericError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
