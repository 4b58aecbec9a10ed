"""Acceptance suite: one test per release criterion, each printing a
[PASS]/[FAIL] line with the measured values.

The statistical checks (3, 4, 5) train real models on the synthetic
shifted dataset; budgets are asserted alongside the properties. Run with
`pytest tests/test_acceptance.py -v -s` to watch the per-criterion lines.
"""

import hashlib
import json
import time

import numpy as np
import pytest

from dran import diagnostics as diag
from dran import tensor as T
from dran.cli import main as cli_main
from dran.config import ALPHA_BETA, DranConfig
from dran.data import (ShiftSpec, SplitSpec, WindowBatch, WindowSet,
                       extract_windows, split_windows, synth_generate)
from dran.model import batch_loss, dran_forward, init_params
from dran.tensor import Tensor

SEEDS = (31, 32, 33, 34, 35)

# shared desk-scale setup for the statistical criteria
ACC = dict(L=12, H=4, N=6, D_in=1, D_model=16, heads=2, tem_layers=1,
           spa_layers=1, ffn=32, latent=8, stat_hidden=16, sfl_width=16,
           C_e=8, batch=32, lr=0.002, alpha=0.5, beta=0.1, seed=31)
SHIFT = dict(trend_scale=0.04, mean_jump=5.0, var_factor=2.0)
GEN = dict(diffusion=0.3, noise_std=0.1)


def report(num, name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {name}"
          f"{' | ' + detail if detail else ''}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def shifted_panel(T_len):
    spec = ShiftSpec(shift_at=T_len // 2, **SHIFT)
    return synth_generate(ACC["N"], T_len, spec, seed=31, **GEN)


def acc_cfg(**kw):
    base = dict(ACC)
    base.update(kw)
    return DranConfig(**base)


# ---------------------------------------------------------------------------
# 1. gradient integrity
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_integrity():
    t0 = time.time()
    cfg = DranConfig(L=8, H=4, N=4, D_in=1, D_model=8, heads=2, tem_layers=1,
                     spa_layers=1, ffn=16, latent=8, stat_hidden=8,
                     sfl_width=8, C_e=4, seed=31)
    r = np.random.default_rng(123)
    batch = WindowBatch(Tensor(r.normal(size=(2, cfg.L, cfg.N, cfg.D_in))),
                        Tensor(r.normal(size=(2, cfg.H, cfg.N, cfg.D_in))),
                        np.arange(2))
    params = init_params(cfg, 31)

    def loss_fn():
        loss, _, _ = batch_loss(batch, params, cfg, np.random.default_rng(7))
        return loss

    params.zero_grad()
    loss_fn().backward()
    analytic = {p: t.grad.copy() for p, t in params.items()}

    h = 1e-5
    worst = 0.0
    failed = []
    n_scalars = 0
    for path, t in params.items():
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(loss_fn().data)
            flat[i] = orig - h
            lo = float(loss_fn().data)
            flat[i] = orig
            fd[i] = (hi - lo) / (2 * h)
        n_scalars += flat.size
        a = analytic[path].reshape(-1)
        err = np.abs(a - fd).max() / max(np.abs(a).max(), np.abs(fd).max(), 1e-8)
        worst = max(worst, err)
        if err >= 1e-4:
            failed.append((path, err))
    elapsed = time.time() - t0
    report(1, "gradient integrity",
           not failed and elapsed < 120,
           f"{n_scalars} scalars, worst rel err {worst:.2e}, {elapsed:.0f}s"
           + (f", failed: {failed[:3]}" if failed else ""))


# ---------------------------------------------------------------------------
# 2. normalization round-trip
# ---------------------------------------------------------------------------

def test_criterion_2_normalization_roundtrip():
    from dran.distadapt import invert_normalize, temporal_normalize
    r = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        scale = 10.0 ** r.uniform(-2, 2)
        x = Tensor(r.normal(size=(1, 8, 3, 2)) * scale + r.normal() * scale)
        xn, stats = temporal_normalize(x)
        back = invert_normalize(xn, stats)
        worst = max(worst, np.abs(back.data - x.data).max())
    const = Tensor(np.full((2, 6, 3, 1), 4.2))
    cn, _ = temporal_normalize(const)
    const_ok = (cn.data == 0.0).all()
    report(2, "normalization round-trip",
           worst < 1e-12 and const_ok,
           f"worst abs err {worst:.2e} over 1000 windows, "
           f"constant windows -> zeros: {const_ok}")


# ---------------------------------------------------------------------------
# 3. distribution-adaptation property
# ---------------------------------------------------------------------------

def test_criterion_3_sfl_moves_features_toward_horizon():
    from dran.training import train_on_windows
    t0 = time.time()
    cfg = acc_cfg(epochs=200)
    panel = shifted_panel(1000)
    split = SplitSpec(cfg.train_frac, cfg.val_frac, cfg.test_frac)
    windows = split_windows(panel, cfg.L, cfg.H, split)
    result = train_on_windows(windows, cfg)

    kl_spa, kl_tem = [], []
    with T.no_grad(), T.unchecked():
        for batch in windows["test"].batches(cfg.batch):
            res = dran_forward(batch, result.params, cfg, rng=None,
                               sample=False)
            for i in range(len(batch)):
                d_h = diag.kde(batch.horizon.data[i].reshape(-1), h=0.1)
                d_spa = diag.kde(res.inter["x_spa"].data[i].reshape(-1), h=0.1)
                d_tem = diag.kde(res.inter["x_tem"].data[i].reshape(-1), h=0.1)
                kl_spa.append(diag.kl_divergence(d_spa, d_h))
                kl_tem.append(diag.kl_divergence(d_tem, d_h))
    elapsed = time.time() - t0
    m_spa, m_tem = float(np.mean(kl_spa)), float(np.mean(kl_tem))
    report(3, "distribution adaptation (after-SFL features nearer horizon)",
           len(kl_spa) >= 100 and m_spa < m_tem and elapsed < 600,
           f"{len(kl_spa)} test windows, mean KL after SFL {m_spa:.3f} < "
           f"before SFL {m_tem:.3f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 4. ablation ordering
# ---------------------------------------------------------------------------

def test_criterion_4_ablation_ordering():
    from dran.training import evaluate, train_on_windows
    t0 = time.time()
    cfg = acc_cfg(epochs=45)
    panel = shifted_panel(600)
    split = SplitSpec(cfg.train_frac, cfg.val_frac, cfg.test_frac)
    windows = split_windows(panel, cfg.L, cfg.H, split)

    means = {}
    lines = []
    for variant in ("full", "no_sto", "no_sta", "no_sfl", "no_dsfl",
                    "no_gate"):
        vcfg = cfg.ablated(variant)
        maes = []
        for seed in SEEDS:
            res = train_on_windows(windows, vcfg.replace(seed=seed))
            maes.append(evaluate(windows["test"], res.params, vcfg)["mae"])
        means[variant] = float(np.mean(maes))
        lines.append(f"{variant} {means[variant]:.4f}±{np.std(maes):.4f}")
    elapsed = time.time() - t0
    ok = (means["full"] <= means["no_sfl"]
          and means["full"] <= means["no_gate"] and elapsed < 1800)
    report(4, "ablation ordering over seeds {31..35}", ok,
           "; ".join(lines) + f"; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5. overfit sanity
# ---------------------------------------------------------------------------

def test_criterion_5_overfit_sanity():
    from dran.training import train_on_windows
    cfg = acc_cfg(epochs=500, lr=0.005, alpha=0.3, beta=0.02)
    panel = synth_generate(ACC["N"], cfg.L + cfg.H + 32 + 11, ShiftSpec(),
                           seed=31, noise_std=0.02)
    ws = extract_windows(panel, cfg.L, cfg.H, 0, panel.T)
    ws = WindowSet(ws.lookback[:32], ws.horizon[:32], ws.starts[:32])
    assert len(ws) == 32
    result = train_on_windows({"train": ws}, cfg)
    final = result.report.epochs[-1]["pred"]
    threshold = 0.05 * float(ws.horizon.std())
    report(5, "overfit sanity (32 windows, 500 epochs)",
           final < threshold,
           f"train pred-MAE {final:.4f} < 0.05*std(target) {threshold:.4f}")


# ---------------------------------------------------------------------------
# 6. metric oracle equivalence
# ---------------------------------------------------------------------------

def test_criterion_6_metric_oracles():
    r = np.random.default_rng(6)
    worst_mae = worst_mape = 0.0
    for _ in range(100):
        shape = tuple(r.integers(1, 5, size=r.integers(1, 4)))
        pred = r.normal(size=shape) * 3
        target = r.normal(size=shape) * 3
        mae_oracle = 0.0
        for p, t in zip(pred.reshape(-1), target.reshape(-1)):
            mae_oracle += abs(p - t)
        mae_oracle /= pred.size
        worst_mae = max(worst_mae, abs(diag.mae(pred, target) - mae_oracle))

        tot = cnt = 0
        for p, t in zip(pred.reshape(-1), target.reshape(-1)):
            if abs(t) >= 1e-3:
                tot += abs((p - t) / t)
                cnt += 1
        if cnt:
            worst_mape = max(worst_mape,
                             abs(diag.mape(pred, target) - 100 * tot / cnt))
    floor_ok = diag.mape(np.array([1.0, 1.0]),
                         np.array([1e-9, 2.0])) == pytest.approx(50.0)
    report(6, "metric oracle equivalence",
           worst_mae < 1e-12 and worst_mape < 1e-12 and floor_ok,
           f"worst |ΔMAE| {worst_mae:.1e}, worst |ΔMAPE| {worst_mape:.1e}, "
           f"floor honored: {floor_ok}")


# ---------------------------------------------------------------------------
# 7. KDE / KL correctness
# ---------------------------------------------------------------------------

def test_criterion_7_kde_kl():
    r = np.random.default_rng(7)
    est = diag.kde(r.normal(size=5000), h=0.1)
    integral = float(np.trapezoid(est.density, est.grid))
    p = diag.kde(r.normal(0.0, 1.0, size=10_000), h=0.1)
    q = diag.kde(r.normal(1.0, 1.0, size=10_000), h=0.1)
    kl_pq = diag.kl_divergence(p, q)
    kl_pp = diag.kl_divergence(p, p)
    ok = (abs(integral - 1.0) < 1e-3 and abs(kl_pq - 0.5) < 0.05
          and kl_pp < 1e-9)
    report(7, "KDE/KL correctness", ok,
           f"integral {integral:.5f}, KL(N01||N11) {kl_pq:.4f} (target 0.5), "
           f"KL(p,p) {kl_pp:.1e}")


# ---------------------------------------------------------------------------
# 8. determinism through the CLI
# ---------------------------------------------------------------------------

def test_criterion_8_manifest_determinism(tmp_path):
    data_dir = tmp_path / "data"
    assert cli_main(["synth", "--nodes", "4", "--steps", "160",
                     "--shift", "mean:3@80", "--seed", "31",
                     "--out", str(data_dir)]) == 0
    cfg = dict(L=8, H=4, N=4, D_in=1, D_model=8, heads=2, tem_layers=1,
               spa_layers=1, ffn=16, latent=8, stat_hidden=8, sfl_width=8,
               C_e=4, batch=8, epochs=3, alpha=0.5, beta=0.1,
               data=str(data_dir / "panel.csv"), seeds=[31])
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))

    outs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        assert cli_main(["train", "--config", str(cfg_path),
                         "--out", str(out)]) == 0
        outs.append(out)

    reports = [(o / "report_seed31.json").read_bytes() for o in outs]
    traj_equal = reports[0] == reports[1]
    hashes = [hashlib.sha256((o / "ckpt_seed31.bin").read_bytes()).hexdigest()
              for o in outs]
    report(8, "determinism (loss trajectory and checkpoint hash)",
           traj_equal and hashes[0] == hashes[1],
           f"trajectories identical: {traj_equal}, "
           f"checkpoint sha256 match: {hashes[0] == hashes[1]}")


# ---------------------------------------------------------------------------
# 9. structural invariants
# ---------------------------------------------------------------------------

def test_criterion_9_structural_invariants():
    from dran import dsfl as dsfl_mod
    cfg = acc_cfg()
    params = init_params(cfg, 9)
    r = np.random.default_rng(9)
    batch = WindowBatch(Tensor(r.normal(size=(4, cfg.L, cfg.N, cfg.D_in)) * 3),
                        Tensor(r.normal(size=(4, cfg.H, cfg.N, cfg.D_in))),
                        np.arange(4))
    res = dran_forward(batch, params, cfg, np.random.default_rng(1))

    w_dy = T.softmax(res.inter["a_dy"], axis=-1).data
    softmax_ok = bool(np.allclose(w_dy.sum(axis=-1), 1.0, atol=1e-9)
                      and (w_dy >= 0).all())
    z = res.inter["z"].z.data
    gate_ok = bool((z > 0).all() and (z < 1).all())
    sigma_spa_ok = bool((res.inter["sfl"].sigma_spa.data > 0).all())
    sigma_sto_ok = bool((res.latent.sigma_b.data > 0).all()
                        and (res.latent.sigma_f.data > 0).all())

    gram = res.inter["a_st"].data
    psd_ok = all(np.allclose(g, g.T, atol=1e-12)
                 and np.linalg.eigvalsh(g).min() > -1e-10 for g in gram)

    x = r.normal(size=(2, cfg.L, cfg.N, cfg.D_model))
    perm = np.random.default_rng(10).permutation(cfg.N)
    out, _ = dsfl_mod.dynamic_branch(Tensor(x), params, cfg.spa_layers,
                                     cfg.heads)
    out_p, _ = dsfl_mod.dynamic_branch(Tensor(x[:, :, perm]), params,
                                       cfg.spa_layers, cfg.heads)
    equivariant = bool(np.allclose(out_p.data, out.data[:, :, perm],
                                   atol=1e-9))

    ok = (softmax_ok and gate_ok and sigma_spa_ok and sigma_sto_ok
          and psd_ok and equivariant)
    report(9, "structural invariants", ok,
           f"softmax rows {softmax_ok}, gate in (0,1) {gate_ok}, "
           f"sigma_spa>0 {sigma_spa_ok}, sigma_sto>0 {sigma_sto_ok}, "
           f"Gram sym PSD {psd_ok}, permutation equivariance {equivariant}")


# ---------------------------------------------------------------------------
# 10. config fidelity
# ---------------------------------------------------------------------------

def test_criterion_10_config_fidelity():
    cfg = DranConfig()
    snapshot = {
        "C_e": 80, "stat_hidden": 64, "sfl_width": 64, "latent": 64,
        "kernel_size": 3, "tem_layers": 3, "spa_layers": 3, "heads": 4,
        "ffn": 256, "D_model": 160, "dec_layers": 2, "lr": 0.001,
        "batch": 32, "epochs": 100,
    }
    mismatches = {k: (getattr(cfg, k), v) for k, v in snapshot.items()
                  if getattr(cfg, k) != v}
    table = {
        "weather": (1.00, 5.00), "nycbike1": (7.50, 5.00),
        "nycbike2": (3.50, 1.00), "nyctaxi": (3.50, 0.50),
        "pems04": (1.00, 10.00), "pems08": (1.00, 1.00),
    }
    table_ok = ALPHA_BETA == table and all(
        (DranConfig.for_dataset(k).alpha,
         DranConfig.for_dataset(k).beta) == v for k, v in table.items())
    report(10, "config fidelity", not mismatches and table_ok,
           f"defaults ok: {not mismatches}"
           + (f" ({mismatches})" if mismatches else "")
           + f", loss-weight table ok: {table_ok}")
