"""Benchmark protocols: multi-round DSC curves, slice-selection policies,
runtime measurement, and report files.

A benchmark run drives the interactive engine exactly the way a user
would, but with simulated guidance: round 1 annotates the slice with the
largest ground-truth area, later rounds annotate whichever slice the
selection policy picks. Three policies are compared: "quality" trusts
the engine's predicted per-slice quality, "oracle" peeks at ground truth
and picks the worst actually-segmented slice, "random" picks uniformly
among slices not yet annotated.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    INTERACTION_TYPES,
    GuidanceMap,
    ValidationError,
    Volume,
    binarize,
    dsc,
)
from .engine import EngineConfig, ModelBundle, Session
from .simulate import SimulatorConfig, simulate_guidance

POLICIES = ("quality", "random", "oracle")


def pick_round_one_slice(gt: np.ndarray) -> int:
    """Index of the slice with the largest ground-truth foreground area."""
    if gt.ndim != 3:
        raise ValidationError(f"gt must be 3D (h, w, c), got {gt.shape}")
    areas = gt.reshape(-1, gt.shape[2]).sum(axis=0)
    return int(np.argmax(areas))


def oracle_next_slice(session: Session, gt: np.ndarray) -> int | None:
    """Worst currently-segmented slice by true DSC; None when all annotated.

    Ties break toward the lowest slice index, mirroring suggest_next_slice.
    """
    state = session.state
    thr = session.config.binarize_threshold
    scored = []
    for k in range(session.volume.num_slices):
        if k in state.annotated_slices:
            continue
        pred = binarize(state.masks[k].probabilities, thr)
        scored.append((dsc(pred, gt[:, :, k]), k))
    if not scored:
        return None
    return min(scored)[1]


def random_next_slice(session: Session, rng: np.random.Generator) -> int | None:
    """Uniform pick among non-annotated slices; None when all annotated."""
    free = [k for k in range(session.volume.num_slices)
            if k not in session.state.annotated_slices]
    if not free:
        return None
    return int(rng.choice(free))


@dataclass(frozen=True)
class BenchmarkResult:
    """Per-volume, per-round DSC for one (interaction type, policy) run."""

    interaction_type: str
    policy: str
    volume_ids: tuple[str, ...]
    dsc: np.ndarray  # shape (num_volumes, rounds)

    @property
    def mean_per_round(self) -> np.ndarray:
        return self.dsc.mean(axis=0)

    @property
    def rounds(self) -> int:
        return self.dsc.shape[1]


def _guidance_seed(master_seed: int, volume_index: int, round_index: int) -> int:
    return master_seed * 1_000_003 + volume_index * 131 + round_index


def run_benchmark(volumes, bundle: ModelBundle, interaction_type: str,
                  rounds: int = 6, policy: str = "quality",
                  sim_cfg: SimulatorConfig | None = None,
                  engine_cfg: EngineConfig | None = None,
                  master_seed: int = 0) -> BenchmarkResult:
    """Run the engine for `rounds` rounds on every volume, recording DSC.

    `volumes` is a list of (Volume, gt) pairs. All randomness (guidance
    jitter, the random policy's picks) derives from `master_seed`, so a
    repeated run reproduces the result exactly.
    """
    if not volumes:
        raise ValidationError("benchmark needs at least one volume")
    if rounds < 1:
        raise ValidationError(f"rounds must be >= 1, got {rounds}")
    if policy not in POLICIES:
        raise ValidationError(f"policy must be one of {POLICIES}, got {policy!r}")
    if interaction_type not in INTERACTION_TYPES:
        raise ValidationError(
            f"interaction_type must be one of {INTERACTION_TYPES}, got {interaction_type!r}")
    sim_cfg = sim_cfg or SimulatorConfig()
    engine_cfg = engine_cfg or EngineConfig(max_rounds=max(rounds, 1))
    if engine_cfg.max_rounds < rounds:
        raise ValidationError(
            f"engine max_rounds {engine_cfg.max_rounds} below benchmark rounds {rounds}")

    scores = np.zeros((len(volumes), rounds), dtype=np.float64)
    ids = []
    for vi, (volume, gt) in enumerate(volumes):
        ids.append(volume.identifier)
        session = Session(volume, bundle, engine_cfg)
        policy_rng = np.random.default_rng((master_seed, 17, vi))
        k = pick_round_one_slice(gt)
        for r in range(rounds):
            cfg = sim_cfg.with_seed(_guidance_seed(master_seed, vi, r))
            guidance = simulate_guidance(interaction_type, gt[:, :, k].astype(bool),
                                         cfg, slice_index=k)
            if r == 0:
                session.initialize(guidance)
                session.propagate(k)
            else:
                session.refine_round(guidance)
            scores[vi, r] = dsc(session.mask_volume(), gt)
            if r + 1 == rounds:
                break
            if policy == "quality":
                nxt = session.suggest_next_slice()
            elif policy == "oracle":
                nxt = oracle_next_slice(session, gt)
            else:
                nxt = random_next_slice(session, policy_rng)
            if nxt is None:
                scores[vi, r + 1:] = scores[vi, r]
                break
            k = nxt
    return BenchmarkResult(interaction_type=interaction_type, policy=policy,
                           volume_ids=tuple(ids), dsc=scores)


@dataclass(frozen=True)
class RuntimeReport:
    """Median one-round wall time plus the individual repetitions."""

    seconds: float
    repetitions: tuple[float, ...]
    hardware: str


def _center_box_guidance(volume: Volume) -> tuple[np.ndarray, int]:
    """Filled box over the central half of the middle slice, for timing runs."""
    h, w, c = volume.shape
    pixels = np.zeros((h, w), dtype=np.uint8)
    pixels[h // 4:h - h // 4, w // 4:w - w // 4] = 1
    return pixels, c // 2


def measure_runtime(volume: Volume, bundle: ModelBundle,
                    engine_cfg: EngineConfig | None = None,
                    repeats: int = 3) -> RuntimeReport:
    """Median wall-clock seconds for one full round (annotate + propagate).

    Runs one untimed warm-up round first, then `repeats` timed rounds on
    fresh sessions. Accuracy is irrelevant here, so guidance is a fixed
    centered box on the middle slice rather than simulated from gt.
    """
    if repeats < 3:
        raise ValidationError(f"need >= 3 repetitions, got {repeats}")
    engine_cfg = engine_cfg or EngineConfig()
    pixels, k = _center_box_guidance(volume)
    guidance = GuidanceMap(pixels=pixels, interaction_type="bounding_box",
                           slice_index=k)

    def one_round() -> float:
        session = Session(volume, bundle, engine_cfg)
        t0 = time.perf_counter()
        session.initialize(guidance)
        session.propagate(k)
        return time.perf_counter() - t0

    one_round()  # warm-up
    reps = tuple(one_round() for _ in range(repeats))
    hardware = f"{platform.machine()} {platform.system()}, {os.cpu_count()} cpu"
    return RuntimeReport(seconds=float(np.median(reps)), repetitions=reps,
                         hardware=hardware)


CSV_HEADER = ("volume", "interaction_type", "policy", "round", "dsc")


def write_benchmark_csv(path, results: list[BenchmarkResult]) -> None:
    """One row per (volume, round), DSC fixed to 6 decimals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for res in results:
            for vi, vid in enumerate(res.volume_ids):
                for r in range(res.rounds):
                    writer.writerow([vid, res.interaction_type, res.policy,
                                     r + 1, f"{res.dsc[vi, r]:.6f}"])


def plot_curves_from_csv(csv_path, png_path) -> None:
    """DSC-vs-round mean curves, one line per (interaction type, policy).

    Reads only the CSV, so regenerating the plot from the CSV alone
    reproduces the original file.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series: dict[tuple[str, str], dict[int, list[float]]] = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["interaction_type"], row["policy"])
            series.setdefault(key, {}).setdefault(int(row["round"]), []).append(
                float(row["dsc"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (itype, policy) in sorted(series):
        per_round = series[(itype, policy)]
        xs = sorted(per_round)
        ys = [float(np.mean(per_round[r])) for r in xs]
        ax.plot(xs, ys, marker="o", label=f"{itype}/{policy}")
    ax.set_xlabel("round")
    ax.set_ylabel("mean volume DSC")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100, metadata={"Software": "memseg"})
    plt.close(fig)


def emit_report(results: list[BenchmarkResult], out_dir) -> list[Path]:
    """Write dsc.csv, summary.json and curves.png under out_dir."""
    if not results:
        raise ValidationError("no benchmark results to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "dsc.csv"
        write_benchmark_csv(csv_path, results)

        summary = {}
        for res in results:
            summary[f"{res.interaction_type}/{res.policy}"] = {
                "volumes": len(res.volume_ids),
                "rounds": res.rounds,
                "mean_per_round": [round(float(x), 6) for x in res.mean_per_round],
                "final_round_mean": round(float(res.mean_per_round[-1]), 6),
            }
        json_path = out / "summary.json"
        with open(json_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")

        png_path = out / "curves.png"
        plot_curves_from_csv(csv_path, png_path)
    except OSError as exc:
        raise OSError(f"cannot write report under {out}: {exc}") from exc
    return [csv_path, json_path, png_path]
