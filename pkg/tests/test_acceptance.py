"""Acceptance suite: one test per acceptance criterion.

Each test prints a single "ACCEPTANCE PASS" line with the measured
numbers when it succeeds, and `pytest -v` shows one PASSED/FAILED line
per criterion. The desk-preset bundle comes from the session fixture in
conftest.py (trained once, cached across runs with a source
fingerprint); everything else is computed here.
"""

import io
import json
import time

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from fastapi.testclient import TestClient
from PIL import Image

from memseg.cli import cli
from memseg.data import INTERACTION_TYPES, Volume, dsc
from memseg.engine import EngineConfig, ModelBundle, Session
from memseg.evaluation import measure_runtime, run_benchmark
from memseg.memory import MemoryBank, attention_readout, read_memory
from memseg.rasterize import rasterize_geometry
from memseg.server import create_app
from memseg.simulate import simulate_guidance
from memseg.synthetic import SyntheticVolumeSpec, generate_synthetic_volume
from memseg.training import build_quality_dataset, make_memory_samples
from memseg.volume_io import load_volume, save_volume_raw

VALIDATION_SAMPLE_SEED = 9
VALIDATION_DATASET_SEED = 11
RUNTIME_VOLUME_SEED = 4242
PARITY_VOLUME_SEED = 4243


def _report(label: str, detail: str) -> None:
    print(f"ACCEPTANCE PASS — {label}: {detail}")


# -- shared benchmark runs (quality policy, all interaction types) ------------

@pytest.fixture(scope="module")
def quality_runs(desk, held_out):
    return {
        itype: run_benchmark(held_out, desk.bundle, itype, rounds=6,
                             policy="quality", sim_cfg=desk.preset.simulator,
                             master_seed=0)
        for itype in INTERACTION_TYPES
    }


# -- criterion: memory-read oracle equivalence --------------------------------

def _bruteforce_read(keys: np.ndarray, values: np.ndarray, query_key: np.ndarray,
                     eps: float = 1e-8) -> np.ndarray:
    """Textbook double-loop attention read, deliberately unvectorized.

    For every query location, walk every memory location, accumulate the
    epsilon-stabilized cosine similarities, softmax them, and weight-sum
    the memory values.
    """
    n, h, w, _ = keys.shape
    cv = values.shape[-1]
    hq, wq = query_key.shape[:2]
    out = np.zeros((hq, wq, cv), dtype=np.float64)
    for y in range(hq):
        for x in range(wq):
            q = query_key[y, x].astype(np.float64)
            q = q / (np.sqrt(np.dot(q, q)) + eps)
            sims = []
            vals = []
            for m in range(n):
                for i in range(h):
                    for j in range(w):
                        k = keys[m, i, j].astype(np.float64)
                        k = k / (np.sqrt(np.dot(k, k)) + eps)
                        sims.append(float(np.dot(q, k)))
                        vals.append(values[m, i, j].astype(np.float64))
            sims = np.asarray(sims)
            weights = np.exp(sims - sims.max())
            weights = weights / weights.sum()
            out[y, x] = sum(wt * v for wt, v in zip(weights, vals))
    return out


def test_memory_read_matches_bruteforce_oracle():
    rng = np.random.default_rng(0)
    n, h, w, c = 3, 4, 4, 16
    start = time.monotonic()
    worst = 0.0
    for _ in range(100):
        keys = rng.standard_normal((n, h, w, c // 8))
        values = rng.standard_normal((n, h, w, c // 2))
        query_key = rng.standard_normal((h, w, c // 8))
        bank = MemoryBank(keys=keys, values=values, slice_indices=list(range(n)))
        got = read_memory(bank, query_key)
        expected = _bruteforce_read(keys, values, query_key)
        worst = max(worst, float(np.abs(got - expected).max()))
    elapsed = time.monotonic() - start
    assert worst < 1e-5, f"max |diff| {worst:.2e} exceeds 1e-5"
    assert elapsed < 10.0, f"took {elapsed:.1f}s, budget 10s"
    _report("memory-read oracle equivalence",
            f"100 instances, max |diff| {worst:.2e} < 1e-5, {elapsed:.2f}s < 10s")


# -- criterion: attention invariants ------------------------------------------

def test_attention_invariants():
    rng = np.random.default_rng(1)
    n, h, w = 3, 4, 4
    worst_sum = worst_perm = worst_scale = 0.0
    for _ in range(20):
        keys = rng.standard_normal((n, h, w, 2))
        values = rng.standard_normal((n, h, w, 8))
        query_key = rng.standard_normal((h, w, 2))
        bank = MemoryBank(keys=keys, values=values, slice_indices=list(range(n)))
        base, weights = read_memory(bank, query_key, return_weights=True)

        worst_sum = max(worst_sum, float(np.abs(weights.sum(axis=0) - 1.0).max()))

        perm = rng.permutation(n)
        permuted = MemoryBank(keys=keys[perm], values=values[perm],
                              slice_indices=[int(p) for p in perm])
        worst_perm = max(worst_perm, float(
            np.abs(read_memory(permuted, query_key) - base).max()))

        scale = rng.uniform(0.25, 4.0, size=(n, h, w, 1))
        scaled = MemoryBank(keys=keys * scale, values=values,
                            slice_indices=list(range(n)))
        worst_scale = max(worst_scale, float(
            np.abs(read_memory(scaled, query_key) - base).max()))
    assert worst_sum < 1e-6, f"weight column sums off by {worst_sum:.2e}"
    assert worst_perm < 1e-6, f"permutation changed readout by {worst_perm:.2e}"
    assert worst_scale < 1e-6, f"key scaling changed readout by {worst_scale:.2e}"
    _report("attention invariants",
            f"weight sums {worst_sum:.1e}, permutation {worst_perm:.1e}, "
            f"scaling {worst_scale:.1e}, all < 1e-6")


# -- criterion: gradient checks ------------------------------------------------

def _max_relative_error(analytic, numeric) -> float:
    """Relative error of the full gradient vector of a scalar loss.

    All input gradients are flattened into one vector before comparing, so
    the error is measured against the gradient's overall scale rather than
    per input.  With a single key channel the cosine similarity saturates
    and the key gradients shrink to the epsilon floor; judged in isolation
    those coordinates would compare finite-difference noise against a
    near-zero denominator.
    """
    a = torch.cat([t.reshape(-1) for t in analytic])
    f = torch.cat([t.reshape(-1) for t in numeric])
    scale = max(float(a.abs().max()), float(f.abs().max()), 1e-12)
    return float((a - f).abs().max()) / scale


def _central_differences(fn, tensors: list[torch.Tensor], step: float = 1e-5):
    grads = []
    for t in tensors:
        grad = torch.zeros_like(t)
        flat = t.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.numel()):
            orig = flat[idx].item()
            flat[idx] = orig + step
            hi = fn().item()
            flat[idx] = orig - step
            lo = fn().item()
            flat[idx] = orig
            gflat[idx] = (hi - lo) / (2 * step)
        grads.append(grad)
    return grads


def test_gradient_checks_vs_finite_differences():
    torch.manual_seed(2)
    start = time.monotonic()
    n, h, w, c = 2, 2, 2, 8
    mem_keys = torch.randn(1, n, c // 8, h, w, dtype=torch.float64,
                           requires_grad=True)
    mem_values = torch.randn(1, n, c // 2, h, w, dtype=torch.float64,
                             requires_grad=True)
    query_key = torch.randn(1, c // 8, h, w, dtype=torch.float64,
                            requires_grad=True)
    projection = torch.randn(1, c // 2, h, w, dtype=torch.float64)

    def read_loss():
        return (attention_readout(mem_keys, mem_values, query_key) * projection).sum()

    loss = read_loss()
    analytic = torch.autograd.grad(loss, (mem_keys, mem_values, query_key))
    with torch.no_grad():
        numeric = _central_differences(read_loss, [mem_keys, mem_values, query_key])
    read_err = _max_relative_error(analytic, numeric)
    assert read_err < 1e-3, f"memory-read gradient error {read_err:.2e}"

    logits = torch.randn(2, 1, h, w, dtype=torch.float64, requires_grad=True)
    targets = (torch.rand(2, 1, h, w, dtype=torch.float64) > 0.5).double()

    def ce_loss():
        return F.binary_cross_entropy_with_logits(logits, targets)

    analytic_ce = torch.autograd.grad(ce_loss(), (logits,))
    with torch.no_grad():
        numeric_ce = _central_differences(ce_loss, [logits])
    ce_err = _max_relative_error(analytic_ce, numeric_ce)
    assert ce_err < 1e-3, f"cross-entropy gradient error {ce_err:.2e}"

    elapsed = time.monotonic() - start
    assert elapsed < 1.0, f"gradient checks took {elapsed:.2f}s, budget 1s"
    _report("gradient checks",
            f"memory-read rel err {read_err:.1e}, cross-entropy rel err "
            f"{ce_err:.1e}, both < 1e-3 at float64, {elapsed:.2f}s < 1s")


# -- criterion: end-to-end synthetic benchmark ---------------------------------

def test_desk_benchmark_round_means(desk, quality_runs):
    assert desk.num_train_volumes >= 50
    assert desk.train_seconds < 30 * 60, (
        f"desk training took {desk.train_seconds:.0f}s, budget 1800s")
    summary = []
    for itype in INTERACTION_TYPES:
        means = quality_runs[itype].mean_per_round
        assert means[0] > 0.80, f"{itype}: round-1 mean DSC {means[0]:.4f} <= 0.80"
        assert means[-1] > 0.85, f"{itype}: round-6 mean DSC {means[-1]:.4f} <= 0.85"
        summary.append(f"{itype} r1 {means[0]:.3f}/r6 {means[-1]:.3f}")
    _report("end-to-end synthetic benchmark",
            f"trained on {desk.num_train_volumes} volumes in "
            f"{desk.train_seconds:.0f}s (< 1800s); " + ", ".join(summary) +
            " (> 0.80 / > 0.85)")


# -- criterion: selection-policy ordering --------------------------------------

def test_policy_ordering_quality_between_oracle_and_random(desk, held_out,
                                                           quality_runs):
    kwargs = dict(rounds=6, sim_cfg=desk.preset.simulator, master_seed=0)
    quality = quality_runs["extreme_points"]
    random_run = run_benchmark(held_out, desk.bundle, "extreme_points",
                               policy="random", **kwargs)
    oracle_run = run_benchmark(held_out, desk.bundle, "extreme_points",
                               policy="oracle", **kwargs)
    repeat = run_benchmark(held_out, desk.bundle, "extreme_points",
                           policy="quality", **kwargs)
    assert np.array_equal(quality.dsc, repeat.dsc), (
        "benchmark not reproducible under the fixed master seed")
    mean_q = quality.mean_per_round[-1]
    mean_r = random_run.mean_per_round[-1]
    mean_o = oracle_run.mean_per_round[-1]
    assert mean_o >= mean_q >= mean_r, (
        f"ordering violated: oracle {mean_o:.4f}, quality {mean_q:.4f}, "
        f"random {mean_r:.4f}")
    assert mean_q - mean_r > 0, f"quality-random gap {mean_q - mean_r:+.4f} <= 0"
    _report("selection-policy ordering",
            f"oracle {mean_o:.4f} >= quality {mean_q:.4f} >= random {mean_r:.4f}, "
            f"gap {mean_q - mean_r:+.4f} > 0, reproducible at master seed 0")


# -- criterion: multi-round trend ----------------------------------------------

def test_multi_round_trend_non_decreasing(quality_runs):
    details = []
    for itype in INTERACTION_TYPES:
        means = quality_runs[itype].mean_per_round
        steps = np.diff(means)
        assert (steps >= -0.01).all(), (
            f"{itype}: round means {np.round(means, 4)} fall by "
            f"{steps.min():.4f} in one step")
        details.append(f"{itype} min step {steps.min():+.4f}")
    _report("multi-round trend",
            "; ".join(details) + " (all >= -0.01 across rounds 1..6)")


# -- criterion: quality-head fidelity -------------------------------------------

def test_quality_head_correlates_with_true_iou(desk, held_out):
    samples = make_memory_samples(held_out, per_volume=2,
                                  seed=VALIDATION_SAMPLE_SEED)
    fused, masks, targets = build_quality_dataset(desk.bundle.segmenter, samples,
                                                  seed=VALIDATION_DATASET_SEED)
    with torch.no_grad():
        predicted = torch.sigmoid(
            desk.bundle.segmenter.quality_batch(fused, masks)).numpy()
    true_iou = targets.numpy()
    r = float(np.corrcoef(predicted, true_iou)[0, 1])
    assert r > 0.6, f"Pearson r {r:.4f} <= 0.6"
    _report("quality-head fidelity",
            f"Pearson r {r:.4f} > 0.6 over {len(true_iou)} validation examples "
            f"(true IoU spread [{true_iou.min():.2f}, {true_iou.max():.2f}])")


# -- criterion: simulator properties --------------------------------------------

def _random_target(rng: np.random.Generator, side: int = 96) -> np.ndarray:
    from skimage.draw import disk as draw_disk, ellipse as draw_ellipse

    gt = np.zeros((side, side), dtype=bool)
    center = rng.integers(30, side - 30, size=2)
    if rng.random() < 0.5:
        rr, cc = draw_disk(tuple(center), rng.integers(6, 21), shape=gt.shape)
    else:
        rr, cc = draw_ellipse(center[0], center[1], rng.integers(6, 21),
                              rng.integers(6, 21), shape=gt.shape,
                              rotation=rng.uniform(-np.pi, np.pi))
    gt[rr, cc] = True
    return gt


def test_simulator_thousand_case_sweep():
    from memseg.presets import load_preset

    simulator_cfg = load_preset("desk").simulator
    rng = np.random.default_rng(3)
    checked = {itype: 0 for itype in INTERACTION_TYPES}
    min_coverage = 1.0
    for case in range(1000):
        itype = INTERACTION_TYPES[case % len(INTERACTION_TYPES)]
        gt = _random_target(rng)
        cfg = simulator_cfg.with_seed(10_000 + case)
        first = simulate_guidance(itype, gt, cfg)
        again = simulate_guidance(itype, gt, cfg)
        assert np.array_equal(first.pixels, again.pixels), (
            f"case {case}: {itype} not deterministic under a fixed seed")
        fg = first.pixels.astype(bool)
        if itype == "bounding_box":
            coverage = float((fg & gt).sum() / gt.sum())
            min_coverage = min(min_coverage, coverage)
            assert coverage >= 0.90, f"case {case}: bbox covers {coverage:.2%}"
        else:
            assert not (fg & ~gt).any(), (
                f"case {case}: {itype} guidance leaves the true foreground")
        checked[itype] += 1
    _report("simulator properties",
            f"1000 cases ({checked}); scribble/extreme subsets of gt, "
            f"bbox coverage >= {min_coverage:.2%} (>= 90%), deterministic")


# -- criterion: runtime sanity ---------------------------------------------------

def test_runtime_one_round_large_volume(desk):
    data = desk.preset.data
    spec = SyntheticVolumeSpec(shape=(128, 128, 100), kind=data.kind,
                               drift_px=data.drift_px,
                               radius_range=data.radius_range,
                               noise_level=data.noise_level,
                               contrast=data.contrast, seed=RUNTIME_VOLUME_SEED)
    volume, _ = generate_synthetic_volume(spec)
    report = measure_runtime(volume, desk.bundle)
    assert report.seconds < 60.0, (
        f"one round over 128x128x100 took {report.seconds:.1f}s, budget 60s")
    _report("runtime sanity",
            f"one round over 128x128x100 in median {report.seconds:.2f}s < 60s "
            f"({report.hardware})")


# -- criterion: CLI/API parity ----------------------------------------------------

def test_cli_api_bit_identical_masks(desk, tmp_path, capsys):
    spec = SyntheticVolumeSpec(shape=(96, 96, 20), kind=desk.preset.data.kind,
                               drift_px=desk.preset.data.drift_px,
                               radius_range=desk.preset.data.radius_range,
                               noise_level=desk.preset.data.noise_level,
                               contrast=desk.preset.data.contrast,
                               seed=PARITY_VOLUME_SEED)
    volume, _ = generate_synthetic_volume(spec)
    vol_path = tmp_path / "volume.raw"
    save_volume_raw(volume, vol_path)
    guidance = {"slice_index": 10, "type": "bounding_box",
                "geometry": {"corners": [[24, 24], [72, 72]]}}
    guidance_path = tmp_path / "guidance.json"
    guidance_path.write_text(json.dumps(guidance))

    cli_mask_path = tmp_path / "cli_mask.raw"
    code = cli(["segment", "--volume", str(vol_path),
                "--guidance", str(guidance_path),
                "--weights", str(desk.weights_dir),
                "--out", str(cli_mask_path)])
    assert code == 0
    capsys.readouterr()
    cli_mask = load_volume(cli_mask_path)

    app = create_app(ModelBundle.load(desk.weights_dir), desk.preset.engine)
    with TestClient(app) as client:
        sid = client.post("/sessions", json={"path": str(vol_path)}).json()["session_id"]
        resp = client.post(f"/sessions/{sid}/guidance", json=guidance)
        assert resp.status_code == 200
        api_mask = np.zeros(volume.shape, dtype=np.float32)
        for k in range(volume.num_slices):
            png = client.get(f"/sessions/{sid}/masks/{k}").content
            api_mask[:, :, k] = np.asarray(Image.open(io.BytesIO(png))) > 127

    api_mask_path = tmp_path / "api_mask.raw"
    save_volume_raw(Volume(api_mask, spacing=volume.spacing,
                           identifier=cli_mask.identifier), api_mask_path)
    assert cli_mask_path.read_bytes() == api_mask_path.read_bytes(), (
        "CLI and API mask files differ")
    fraction = float(cli_mask.voxels.mean())
    _report("CLI/API parity",
            f"mask files byte-identical across {volume.num_slices} slices "
            f"(foreground fraction {fraction:.3f})")
