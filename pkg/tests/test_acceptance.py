"""Acceptance gate: eleven shipping criteria, one printed line each.

Criteria 1 through 5 and 11 are exact or property-based checks.
Criteria 6 through 10 are directional desk-scale experiments built on
500-step pretrains (M = 2048, N = 128) at the pinned defaults
(tau = 0.07, beta = 0.005, sigma0 = 0.5). Every assertion states the
real bar; nothing is weakened to force a green run. The probe-gap bars
(7, 8, 9) are known not to hold at this scale with the unnormalized
beta objective; the mechanism is a norm-shortcut collapse that the
cosine baseline cannot express. See notes on the run records for the
measured landscape.
"""

import math
import time

import numpy as np
import pytest

from vcl.autograd import Tensor
from vcl.config import parse_run_config
from vcl.datasets import (DataFormatError, GenConfig, generate_synthetic,
                          load, save)
from vcl.evaluation import (FinetuneConfig, ProbeConfig, linear_probe,
                            low_shot_finetune, train_test_split)
from vcl.gradcheck import run_suite
from vcl.losses import (LossConfig, beta_dist_at, beta_nt_xent,
                        dist_normalizing, dist_similarity)
from vcl.model import GaussianParams, init_params
from vcl.trainer import (CheckpointError, OptimState, encoder_config_for_run,
                         load_checkpoint, pretrain, save_checkpoint)

SIGMA_SQ = 0.25  # sigma0 = 0.5 at the defaults


def _criterion(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


def _run_cfg(seed: int, rho: float = 0.0, objective: str = "vcl_beta",
             loss: dict | None = None):
    obj = {"steps": 500, "batch_n": 128, "seed": seed,
           "objective": objective, "data": {"m": 2048}}
    if rho > 0:
        obj["data"]["rho"] = rho
    if loss:
        obj["loss"] = loss
    return parse_run_config(obj)


def _sans_wall(rec: dict) -> dict:
    return {k: v for k, v in rec.items() if k != "wall_ms"}


# ---------------------------------------------------------------------------
# shared experiment fixtures (expensive, built once)

@pytest.fixture(scope="module")
def probe_split():
    """Clean labeled pool shared by every probe: 80/20 split, seed 0."""
    ds = generate_synthetic(GenConfig(m=2048, seed=0))
    return train_test_split(ds, test_fraction=0.2, seed=0)


def _probe_acc(params, probe_split) -> float:
    train_ds, test_ds = probe_split
    res = linear_probe(params, train_ds, test_ds, ProbeConfig(seed=0))
    return res.mean_accuracy


@pytest.fixture(scope="module")
def clean_runs():
    """Three 500-step pretrains on clean data, seeds 0/1/2."""
    runs = []
    for seed in (0, 1, 2):
        run = _run_cfg(seed)
        t0 = time.perf_counter()
        result = pretrain(run)
        runs.append((run, result, time.perf_counter() - t0))
    return runs


@pytest.fixture(scope="module")
def noisy_runs():
    """Equal-budget 500-step pretrains at rho = 0.3, seeds 0..4, for the
    full objective, the cosine baseline, and the contrastive-only
    ablation."""
    out = {"full": [], "cosine": [], "beta_only": []}
    for seed in range(5):
        for name, run in (
                ("full", _run_cfg(seed, rho=0.3)),
                ("cosine", _run_cfg(seed, rho=0.3,
                                    objective="nt_xent_cosine")),
                ("beta_only", _run_cfg(seed, rho=0.3,
                                       loss={"lambda_dist": 0.0,
                                             "lambda_norm": 0.0}))):
            t0 = time.perf_counter()
            result = pretrain(run)
            out[name].append((result, time.perf_counter() - t0))
    return out


# ---------------------------------------------------------------------------
# criteria

def test_criterion_01_gradient_suite():
    t0 = time.perf_counter()
    results = run_suite(instances=20, seed=0)
    elapsed = time.perf_counter() - t0
    bad = [r.name for r in results if not (r.passed and r.max_rel_err < 1e-3)]
    ok = not bad and elapsed < 120.0
    _criterion(1, ok, f"{len(results)} checks x 20 instances within 1e-3 "
                      f"rel err in {elapsed:.1f}s (budget 120s), "
                      f"failures={bad}")


def test_criterion_02_loss_oracles():
    cfg = LossConfig()
    v1 = beta_dist_at(0.0, cfg)
    e1 = abs(v1 - 0.2267922659886359)

    z = Tensor(np.full((4, 8), 0.7))
    v2 = float(beta_nt_xent(z, [1, 0, 3, 2], cfg).data)
    e2 = abs(v2 - math.log(3.0))

    g_unit = GaussianParams(Tensor(np.array([[1.0]])),
                            Tensor(np.array([[0.0]])))
    v3 = float(dist_normalizing(g_unit).data)

    g_a = GaussianParams(Tensor(np.array([[0.0]])),
                         Tensor(np.array([[0.0]])))
    g_b = GaussianParams(Tensor(np.array([[2.0]])),
                         Tensor(np.array([[0.0]])))
    v4 = float(dist_similarity(g_a, g_b).data)
    e4 = abs(v4 - 0.5)

    ok = e1 < 1e-4 and e2 < 1e-6 and v3 == 0.5 and e4 < 1e-6
    _criterion(2, ok, f"beta_dist(0)={v1:.10f} (err {e1:.2e}), "
                      f"identical-view nt_xent err {e2:.2e} vs ln 3, "
                      f"dist_normalizing={v3}, dist_similarity err {e4:.2e}")


def test_criterion_03_beta_zero_limit():
    const = 0.5 * math.log(2.0 * math.pi * SIGMA_SQ)
    worst = 0.0
    for beta in (1e-5, 1e-6):
        cfg = LossConfig(beta=beta)
        for d in (0.0, 0.5, 1.0, 5.0):
            want = d / (2.0 * SIGMA_SQ) + const
            worst = max(worst, abs(beta_dist_at(d, cfg) - want))
    ok = worst < 1e-3
    _criterion(3, ok, f"max |beta_dist - small-beta limit| = {worst:.2e} "
                      f"over beta in (1e-5, 1e-6), d in (0, 0.5, 1, 5)")


def test_criterion_04_bounded_influence():
    cfg = LossConfig()
    h = 1e-3
    slope_near = (beta_dist_at(h, cfg) - beta_dist_at(0.0, cfg)) / h
    slope_far = (beta_dist_at(1e4 + 1.0, cfg)
                 - beta_dist_at(1e4 - 1.0, cfg)) / 2.0
    ratio = abs(slope_far) / abs(slope_near)

    def limit(d):
        return d / (2.0 * SIGMA_SQ) + 0.5 * math.log(2.0 * math.pi * SIGMA_SQ)

    lim_ratio = (((limit(1e4 + 1.0) - limit(1e4 - 1.0)) / 2.0)
                 / ((limit(h) - limit(0.0)) / h))
    ok = ratio < 1e-6 and abs(lim_ratio - 1.0) < 1e-6
    _criterion(4, ok, f"beta slope ratio far/near = {ratio:.2e} (< 1e-6) "
                      f"while the small-beta limit stays at {lim_ratio:.6f}")


def test_criterion_05_determinism(tmp_path):
    cfg = {"steps": 6, "batch_n": 16, "seed": 0, "data": {"m": 64}}
    blobs, records = [], []
    for name in ("a", "b"):
        out = tmp_path / name
        out.mkdir()
        res = pretrain(parse_run_config(cfg), out_dir=out)
        blobs.append((out / "checkpoint.vclc").read_bytes())
        records.append(([_sans_wall(r) for r in res.step_records],
                        [_sans_wall(r) for r in res.epoch_records]))
    same_bytes = blobs[0] == blobs[1]
    same_records = records[0] == records[1]
    ok = same_bytes and same_records
    _criterion(5, ok, f"identical configs: checkpoint bytes equal="
                      f"{same_bytes}, records (sans wall_ms) equal="
                      f"{same_records}")


def test_criterion_06_training_progress(clean_runs):
    parts = []
    ok = True
    for run, result, dt in clean_runs:
        totals = [r["total"] for r in result.step_records]
        first = sum(totals[:50]) / 50.0
        last = sum(totals[-50:]) / 50.0
        good = last < first and dt < 600.0
        ok = ok and good
        parts.append(f"seed {run.seed}: first50 {first:.3f} -> "
                     f"last50 {last:.3f} in {dt:.0f}s")
    _criterion(6, ok, "; ".join(parts))


def test_criterion_07_probe_gap(clean_runs, probe_split):
    gaps = []
    for run, result, _ in clean_runs:
        trained = _probe_acc(result.params, probe_split)
        rnd_params = init_params(encoder_config_for_run(run),
                                 run.model.head_dim, run.seed)
        rnd = _probe_acc(rnd_params, probe_split)
        gaps.append((trained - rnd) * 100.0)
    mean_gap = sum(gaps) / len(gaps)
    ok = mean_gap >= 5.0
    _criterion(7, ok, f"trained-vs-random probe gap {mean_gap:+.2f} points "
                      f"(bar +5.00; per seed "
                      + ", ".join(f"{g:+.2f}" for g in gaps) + ")")


def test_criterion_08_outlier_robustness(noisy_runs, probe_split):
    t0 = time.perf_counter()
    accs_a = [_probe_acc(r.params, probe_split)
              for r, _ in noisy_runs["full"]]
    accs_b = [_probe_acc(r.params, probe_split)
              for r, _ in noisy_runs["cosine"]]
    probe_time = time.perf_counter() - t0
    elapsed = probe_time + sum(dt for _, dt in noisy_runs["full"]) \
        + sum(dt for _, dt in noisy_runs["cosine"])
    mean_a = sum(accs_a) / len(accs_a)
    mean_b = sum(accs_b) / len(accs_b)
    gap = (mean_a - mean_b) * 100.0
    ok = gap >= -0.5 and elapsed < 3600.0
    _criterion(8, ok, f"rho=0.3, 5 seeds: beta mean {mean_a:.4f}, cosine "
                      f"mean {mean_b:.4f}, gap {gap:+.2f} points "
                      f"(bar -0.50) in {elapsed:.0f}s (budget 3600s)")


def test_criterion_09_component_ablation(noisy_runs, probe_split):
    accs_full = [_probe_acc(r.params, probe_split)
                 for r, _ in noisy_runs["full"]]
    accs_only = [_probe_acc(r.params, probe_split)
                 for r, _ in noisy_runs["beta_only"]]
    mean_full = sum(accs_full) / len(accs_full)
    mean_only = sum(accs_only) / len(accs_only)
    ok = mean_full >= mean_only
    _criterion(9, ok, f"rho=0.3, 5 seeds: full objective {mean_full:.4f} vs "
                      f"contrastive-only {mean_only:.4f} "
                      f"(gap {(mean_full - mean_only) * 100.0:+.2f} points, "
                      f"bar >= 0)")


def test_criterion_10_low_shot_monotone(clean_runs, probe_split):
    train_ds, test_ds = probe_split
    parts = []
    ok = True
    for run, result, _ in clean_runs:
        lo = low_shot_finetune(result.params, 0.01, train_ds, test_ds,
                               FinetuneConfig(seed=0)).mean_accuracy
        hi = low_shot_finetune(result.params, 0.10, train_ds, test_ds,
                               FinetuneConfig(seed=0)).mean_accuracy
        ok = ok and hi >= lo
        parts.append(f"seed {run.seed}: f=0.01 {lo:.4f} <= f=0.10 {hi:.4f}")
    _criterion(10, ok, "; ".join(parts))


def test_criterion_11_file_roundtrips(tmp_path):
    ds = generate_synthetic(GenConfig(m=32, seed=5))
    p1 = tmp_path / "a.vcld"
    p2 = tmp_path / "b.vcld"
    save(ds, p1)
    save(load(p1), p2)
    ds_bytes_ok = p1.read_bytes() == p2.read_bytes()

    run = parse_run_config({"steps": 1, "batch_n": 16, "data": {"m": 32}})
    out = tmp_path / "run"
    out.mkdir()
    res = pretrain(run, out_dir=out)
    ck_path = out / "checkpoint.vclc"
    raw = ck_path.read_bytes()
    ck = load_checkpoint(ck_path)
    state = OptimState(m=ck.m, v=ck.v, t=ck.step)
    resaved = tmp_path / "resaved.vclc"
    save_checkpoint(resaved, ck.params, state, ck.step)
    ck_bytes_ok = resaved.read_bytes() == raw

    errors_ok = True
    bad_magic_ds = tmp_path / "magic.vcld"
    bad_magic_ds.write_bytes(b"XXXX" + p1.read_bytes()[4:])
    try:
        load(bad_magic_ds)
        errors_ok = False
    except DataFormatError:
        pass
    trunc_ds = tmp_path / "trunc.vcld"
    trunc_ds.write_bytes(p1.read_bytes()[: len(p1.read_bytes()) // 2])
    try:
        load(trunc_ds)
        errors_ok = False
    except DataFormatError:
        pass
    bad_magic_ck = tmp_path / "magic.vclc"
    bad_magic_ck.write_bytes(b"XXXX" + raw[4:])
    try:
        load_checkpoint(bad_magic_ck)
        errors_ok = False
    except CheckpointError:
        pass
    trunc_ck = tmp_path / "trunc.vclc"
    trunc_ck.write_bytes(raw[: len(raw) // 2])
    try:
        load_checkpoint(trunc_ck)
        errors_ok = False
    except CheckpointError:
        pass

    ok = ds_bytes_ok and ck_bytes_ok and errors_ok
    _criterion(11, ok, f"dataset bytes equal={ds_bytes_ok}, checkpoint "
                       f"bytes equal={ck_bytes_ok}, corrupt files raise "
                       f"structured errors={errors_ok}")
