"""Optimizer, schedule, training loop, and checkpoint container."""

import numpy as np
import pytest

from vcl.autograd import Tensor
from vcl.model import params_fingerprint
from vcl.trainer import (CKPT_MAGIC, CheckpointError, NanLossError, Schedule,
                         adamw_step, cosine_lr, init_optim_state,
                         load_checkpoint, pretrain, save_checkpoint)


def _records_sans_wall(result):
    return [{k: v for k, v in r.items() if k != "wall_ms"}
            for r in result.step_records]


# ---------------------------------------------------------------------------
# schedule

def test_cosine_lr_endpoints_and_midpoint():
    sched = Schedule(base_lr=0.1, min_lr=0.01, total_steps=100)
    assert cosine_lr(sched, 0) == pytest.approx(0.1)
    assert cosine_lr(sched, 100) == pytest.approx(0.01)
    assert cosine_lr(sched, 50) == pytest.approx(0.055)
    vals = [cosine_lr(sched, t) for t in range(101)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        cosine_lr(sched, 101)
    with pytest.raises(ValueError):
        Schedule(base_lr=0.1, min_lr=0.2, total_steps=10)


# ---------------------------------------------------------------------------
# optimizer

def test_adamw_step_hand_value():
    params = {"w": Tensor(np.array([1.0]), requires_grad=True,
                          dtype=np.float64)}
    state = init_optim_state(params, lr=1e-2, weight_decay=1e-2)
    new, state2 = adamw_step(params, {"w": np.array([0.1])}, state)
    expected = 1.0 - 1e-2 * 1e-2 - 1e-2 * 0.1 / (0.1 + 1e-8)
    assert abs(new["w"].data[0] - expected) < 1e-12
    assert state2.t == 1
    assert state.t == 0  # out of place
    assert params["w"].data[0] == 1.0


def test_adamw_step_requires_matching_keys():
    params = {"w": Tensor(np.zeros(2), requires_grad=True)}
    state = init_optim_state(params)
    with pytest.raises(KeyError):
        adamw_step(params, {"v": np.zeros(2)}, state)


def test_adamw_converges_on_quadratic():
    params = {"w": Tensor(np.array([5.0]), requires_grad=True,
                          dtype=np.float64)}
    state = init_optim_state(params, lr=0.1, weight_decay=0.0)
    for _ in range(400):
        grad = {"w": 2.0 * (params["w"].data - 2.0)}
        params, state = adamw_step(params, grad, state)
    assert abs(params["w"].data[0] - 2.0) < 1e-3


# ---------------------------------------------------------------------------
# training loop

def test_pretrain_is_deterministic(tiny_cfg):
    run = tiny_cfg(steps=6)
    a = pretrain(run)
    b = pretrain(run)
    assert params_fingerprint(a.params) == params_fingerprint(b.params)
    assert _records_sans_wall(a) == _records_sans_wall(b)
    assert a.step == 6
    assert len(a.step_records) == 6
    c = pretrain(tiny_cfg(steps=6, seed=1))
    assert params_fingerprint(a.params) != params_fingerprint(c.params)


def test_pretrain_writes_checkpoints(tiny_cfg, tmp_path):
    run = tiny_cfg(steps=6, checkpoint_every=1)
    result = pretrain(run, out_dir=tmp_path)
    assert result.checkpoint_path == tmp_path / "checkpoint.vclc"
    assert result.checkpoint_path.is_file()
    # 48 rows / batch 16 gives 3 steps per epoch; one mid-run epoch ends
    assert (tmp_path / "ckpt_epoch0000.vclc").is_file()
    ck = load_checkpoint(result.checkpoint_path)
    assert ck.step == 6
    assert params_fingerprint(ck.params) == params_fingerprint(result.params)


def test_resume_reproduces_uninterrupted_run(tiny_cfg, tmp_path):
    run = tiny_cfg(steps=6, checkpoint_every=1)
    straight = pretrain(run)
    pretrain(run, out_dir=tmp_path)
    resumed = pretrain(run, resume=tmp_path / "ckpt_epoch0000.vclc")
    assert (params_fingerprint(resumed.params)
            == params_fingerprint(straight.params))
    tail = _records_sans_wall(straight)[3:]
    assert _records_sans_wall(resumed) == tail
    with pytest.raises(ValueError):
        pretrain(tiny_cfg(steps=3), resume=tmp_path / "checkpoint.vclc")


def test_epoch_records_summarize_steps(tiny_cfg):
    result = pretrain(tiny_cfg(steps=6))
    assert [e["epoch"] for e in result.epoch_records] == [0, 1]
    first = result.epoch_records[0]
    steps = result.step_records[:3]
    assert first["steps"] == 3
    assert first["mean_total"] == pytest.approx(
        sum(r["total"] for r in steps) / 3)


def test_cosine_objective_trains(tiny_cfg):
    result = pretrain(tiny_cfg(objective="nt_xent_cosine"))
    assert result.step == 4
    for rec in result.step_records:
        assert rec["l_dist"] == 0.0
        assert rec["l_norm"] == 0.0
        assert rec["total"] == rec["l_beta"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_abort_carries_diagnostics(tiny_cfg):
    run = tiny_cfg(steps=8, optim={"lr": 1e12})
    with pytest.raises(NanLossError) as err:
        pretrain(run)
    diag = err.value.diagnostics
    assert {"step", "l_beta", "l_dist", "l_norm", "total"} <= set(diag)
    assert not np.isfinite(diag["total"])


def test_pretrain_rejects_undersized_dataset(tiny_cfg):
    from vcl.datasets import GenConfig, generate_synthetic
    run = tiny_cfg()  # batch_n 16
    small = generate_synthetic(GenConfig(m=8, seed=0))
    with pytest.raises(ValueError, match="cannot fill"):
        pretrain(run, dataset=small)


# ---------------------------------------------------------------------------
# checkpoint container

def test_checkpoint_roundtrip(tiny_cfg, tmp_path):
    result = pretrain(tiny_cfg())
    p1 = tmp_path / "a.vclc"
    p2 = tmp_path / "b.vclc"
    save_checkpoint(p1, result.params, result.state, result.step)
    save_checkpoint(p2, result.params, result.state, result.step)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes()[:4] == CKPT_MAGIC
    ck = load_checkpoint(p1)
    assert ck.step == result.step
    assert params_fingerprint(ck.params) == params_fingerprint(result.params)
    for name in result.state.m:
        assert np.array_equal(ck.m[name], result.state.m[name])
        assert np.array_equal(ck.v[name], result.state.v[name])


def test_checkpoint_rejects_corruption(tiny_cfg, tmp_path):
    result = pretrain(tiny_cfg())
    p = tmp_path / "c.vclc"
    save_checkpoint(p, result.params, result.state, result.step)
    raw = p.read_bytes()

    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)

    p.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)

    p.write_bytes(raw + b"\x01")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(p)
