"""Acceptance criteria 1-10, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the terminal summary.  The
training and scenario criteria use the cached models of ``conftest.py``.
"""
import filecmp
import os
import time
from pathlib import Path

import numpy as np
import pytest

from anett import cli, experiments, grid, net, phantoms, training
from anett.regularizer import IdentityPrior, NetworkPrior, grad_augmented
from anett.solver import SolverConfig, admm_solve, soft_threshold, subproblem_grad, subproblem_value, xi_update
from anett.tomo import Geometry, IdentityOperator, RadonOperator, fbp, radon_adjoint, radon_forward

from test_solver import grid_search_prox
from test_tomo import chord_quadrature, smooth_phantom, supersampled_disc


def test_criterion_01_adjoint(criterion):
    t0 = time.perf_counter()
    g = Geometry(n=64, n_angles=60)
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        u = rng.normal(size=(64, 64))
        y = rng.normal(size=g.sino_shape)
        lhs = np.vdot(radon_forward(u, g), y)
        rhs = np.vdot(u, radon_adjoint(y, g))
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    seconds = time.perf_counter() - t0
    ok = criterion(1, worst <= 1e-10 and seconds < 10, f"max rel error {worst:.2e} over 20 pairs, {seconds:.2f} s")
    assert ok


def test_criterion_02_disc_chords(criterion):
    n, r = 128, 0.5
    g = Geometry(n=n, n_angles=60)
    sino = radon_forward(supersampled_disc(n, r), g)
    s = g.detectors
    inner = np.abs(s) < r - grid.pixel_size(n)
    oracle = np.array([chord_quadrature(v, r) for v in s[inner]])
    err = float(np.max(np.abs(sino[:, inner] - oracle)))
    ok = criterion(2, err <= 2.0 / n, f"max chord error {err:.4f} (tolerance {2.0 / n:.4f}) on {inner.sum()} bins x 60 angles")
    assert ok


def test_criterion_03_fbp_roundtrip(criterion):
    n = 128
    g = Geometry(n=n, n_angles=180)
    u = smooth_phantom(n)
    x, y = grid.meshgrid(n)
    score = grid.psnr(fbp(radon_forward(u, g), g), u, mask=x**2 + y**2 < 0.81)
    ok = criterion(3, score >= 30.0, f"PSNR {score:.2f} dB inside radius 0.9 at 180 angles")
    assert ok


def _rel(an, fd):
    return abs(an - fd) / max(abs(fd), 1e-12)


def test_criterion_04_gradient_suite(criterion):
    rng = np.random.default_rng(404)
    theta = net.init_params(net.DEFAULT_AE_ARCH, seed=41, zero_bias=False).astype(np.float64)
    kappa = net.init_params(net.DEFAULT_ADAPTER_ARCH, seed=42, zero_bias=False).astype(np.float64)
    kappa.arrays["head.w"] = rng.normal(scale=0.1, size=kappa.arrays["head.w"].shape)
    n, h, probes = 16, 1e-4, 10
    worst = {}

    def probe(name, f, vjp, sample_in, sample_out):
        errs = []
        for _ in range(probes):
            u, v, w = sample_in(), sample_in(), sample_out()
            an = float(np.dot(np.ravel(vjp(u, w)), np.ravel(v)))
            fd = float(np.dot(np.ravel(w), np.ravel(f(u + h * v) - f(u - h * v)))) / (2 * h)
            errs.append(_rel(an, fd))
        worst[name] = max(errs)

    code0 = net.encode(np.zeros((n, n)), theta)
    img = lambda: rng.uniform(size=(n, n))
    vec = lambda: rng.normal(size=code0.size)
    probe("encoder", lambda u: net.encode(u, theta).flat(),
          lambda u, w: net.vjp_input("encode", u, theta, code0.from_flat(w)), img, vec)
    probe("decoder", lambda c: net.decode(code0.from_flat(c), theta),
          lambda c, w: net.vjp_input("decode", code0.from_flat(c), theta, w).flat(), vec, lambda: rng.normal(size=(n, n)))
    probe("adapter", lambda u: net.adapt(u, kappa), lambda u, w: net.vjp_input("adapt", u, kappa, w), img,
          lambda: rng.normal(size=(n, n)))

    prior = NetworkPrior(theta, kappa)
    c = 7.0

    def aug(u):
        r = u - prior.network(u)
        return np.array([0.5 * c * float(np.sum(r * r))])

    probe("augmented term", aug, lambda u, w: w[0] * grad_augmented(u, prior, c), img, lambda: np.ones(1))

    g = Geometry(n=n, n_angles=12)
    op = RadonOperator(g)
    cfg = SolverConfig(alpha=0.05, c=20.0, rho=2.0)
    y = op.forward(rng.uniform(size=(n, n)))
    xi, eta = rng.normal(scale=0.1, size=(2, code0.size))
    probe("u-subproblem objective", lambda u: np.array([subproblem_value(u, xi, eta, y, op, prior, cfg)]),
          lambda u, w: w[0] * subproblem_grad(u, xi, eta, y, op, prior, cfg), img, lambda: np.ones(1))

    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    ok = criterion(4, max(worst.values()) <= 1e-4, f"max rel FD error per function ({probes} probes each): {detail}")
    assert ok


def test_criterion_05_prox_oracle(criterion):
    rng = np.random.default_rng(505)
    m = 1000
    a = rng.normal(size=m) * 2
    eta = rng.normal(size=m) * 0.5
    w = rng.choice(net.level_weights(3), size=m)
    cfg = SolverConfig(alpha=0.9, c=1.0, rho=2.0)
    got = xi_update(a - eta, eta, w, cfg)
    err = float(np.max(np.abs(got - grid_search_prox(a, cfg.alpha * w, cfg.rho))))
    ok = criterion(5, err <= 1e-6, f"max deviation from grid search {err:.1e} over {m} components")
    assert ok


def test_criterion_06_admm_identity_oracle(criterion):
    rng = np.random.default_rng(606)
    y = rng.normal(size=(32, 32))
    worst = 0.0
    for alpha in (0.05, 0.5, 2.0):
        cfg = SolverConfig(alpha=alpha, c=1.0, rho=2.0, outer=200, inner=10, stepsize=0.2)
        u, _ = admm_solve(y, IdentityOperator(y.shape), IdentityPrior(), cfg)
        worst = max(worst, float(np.max(np.abs(u - soft_threshold(y, alpha / 2)))))
    ok = criterion(6, worst <= 1e-4, f"max deviation from soft_threshold(y, alpha/2) {worst:.1e}")
    assert ok


def test_criterion_07_training(criterion, trained_ae, dataset):
    theta, meta = trained_ae
    _, val, _ = dataset
    th = theta.astype(np.float64)
    rel = np.array([np.linalg.norm(net.autoencode(u, th) - u) / np.linalg.norm(u) for u in val])
    untrained = net.init_params(theta.arch, seed=theta.seed).astype(np.float64)
    s_trained = float(np.median(training.code_sparsity(val, th)))
    s_untrained = float(np.median(training.code_sparsity(val, untrained)))
    hours = meta["seconds"] / 3600
    ok = criterion(7, rel.mean() <= 0.1 and s_trained > s_untrained and hours <= 2.0,
                   f"mean relative error {rel.mean():.4f} (max {rel.max():.4f}), median sparsity {s_trained:.4f} "
                   f"vs untrained {s_untrained:.4f}, training {hours:.2f} h")
    assert ok


def test_criterion_08_scenarios(criterion, scenario_report):
    nf, _ = scenario_report("noise-free")
    noisy, _ = scenario_report("noisy-5pct")
    adv, _ = scenario_report("adversarial")
    for rep in (nf, noisy, adv):
        assert len(rep.column("anett", "psnr")) >= 20
    a_gain = nf.median("anett", "psnr") - nf.median("fbp", "psnr")
    b_anett, b_post = noisy.median("anett", "flat_variance"), noisy.median("post", "flat_variance")
    c_disc = (adv.median("anett", "disc_psnr"), adv.median("post", "disc_psnr"))
    c_res = (adv.median("anett", "data_residual"), adv.median("post", "data_residual"))
    ok_a = a_gain >= 3.0
    ok_b = b_anett <= b_post
    ok_c = c_disc[0] > c_disc[1] and c_res[0] <= c_res[1]
    detail = (f"(a) median PSNR gain over FBP {a_gain:.2f} dB; "
              f"(b) flat-region variance aNETT {b_anett:.3e} vs post {b_post:.3e}; "
              f"(c) disc PSNR aNETT {c_disc[0]:.2f} vs post {c_disc[1]:.2f} dB, "
              f"residual aNETT {c_res[0]:.3f} vs post {c_res[1]:.3f}")
    ok = criterion(8, ok_a and ok_b and ok_c, detail)
    assert ok


def test_criterion_09_convergence(criterion, convergence_report):
    rep, _ = convergence_report
    mono = experiments.nonincreasing_within(rep.error, 0.10)
    slope = rep.slope
    ok = criterion(9, mono and 0.5 <= slope <= 1.5,
                   f"errors {', '.join(f'{e:.3f}' for e in rep.error)} (nonincreasing within 10%: {mono}), "
                   f"Bregman slope {slope:.3f}")
    assert ok


def _tree(root):
    return sorted(p.relative_to(root) for p in Path(root).rglob("*") if p.is_file())


def _same_tree(a, b):
    files = _tree(a)
    if files != _tree(b) or not files:
        return False
    return all(filecmp.cmp(Path(a) / f, Path(b) / f, shallow=False) for f in files)


def test_criterion_10_cli_determinism(criterion, tmp_path, capsys):
    data = tmp_path / "data"
    assert cli.main(["make-data", "--out", str(data), "--seed", "3", "--n", "32", "--train", "6", "--val", "2",
                     "--test", "2"]) == 0
    y = radon_forward(phantoms.random_phantom(np.random.default_rng(0), 32), Geometry(n=32, n_angles=12))
    grid.write_grid(y, tmp_path / "sino.grd")
    capsys.readouterr()
    commands = {
        "make-data": lambda o: ["make-data", "--out", str(o), "--seed", "3", "--n", "32", "--train", "6",
                                "--val", "2", "--test", "2"],
        "train-ae": lambda o: ["train-ae", "--data", str(data), "--out", str(o / "ae.net"), "--epochs", "2",
                               "--batch-size", "4"],
        "train-adapter": lambda o: ["train-adapter", "--data", str(data), "--ae", str(tmp_path / "ae.net"),
                                    "--out", str(o / "adapter.net"), "--epochs", "2", "--batch-size", "4",
                                    "--n-angles", "12"],
        "reconstruct": lambda o: ["reconstruct", "--input", str(tmp_path / "sino.grd"), "--n", "32",
                                  "--ae", str(tmp_path / "ae.net"), "--adapter", str(tmp_path / "adapter.net"),
                                  "--out", str(o / "rec.grd"), "--outer", "3"],
        "benchmark": lambda o: ["benchmark", "--scenario", "noisy-5pct", "--data", str(data),
                                "--ae", str(tmp_path / "ae.net"), "--adapter", str(tmp_path / "adapter.net"),
                                "--out", str(o), "--n-angles", "12", "--outer", "2", "--seed", "5"],
        "convergence-study": lambda o: ["convergence-study", "--data", str(data), "--ae", str(tmp_path / "ae.net"),
                                        "--adapter", str(tmp_path / "adapter.net"), "--out", str(o),
                                        "--n-angles", "12", "--outer", "2", "--levels", "2"],
        "inspect": lambda o: ["inspect", "--model", str(tmp_path / "ae.net"), "--grid", str(tmp_path / "sino.grd"),
                              "--scenario", "adversarial"],
    }
    results = {}
    for name, argv in commands.items():
        outs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            out.mkdir(parents=True)
            code = cli.main(argv(out))
            outs.append((code, capsys.readouterr().out.replace(str(out), "<out>"), out))
        if name == "train-ae":
            (tmp_path / "ae.net").write_bytes((outs[0][2] / "ae.net").read_bytes())
        if name == "train-adapter":
            (tmp_path / "adapter.net").write_bytes((outs[0][2] / "adapter.net").read_bytes())
        (ca, sa, oa), (cb, sb, ob) = outs
        files_ok = name == "inspect" or _same_tree(oa, ob)
        results[name] = ca == 0 and cb == 0 and sa == sb and files_ok
    bad = [k for k, v in results.items() if not v]
    ok = criterion(10, not bad, f"{len(results)} subcommands run twice; byte-identical: "
                                f"{'all' if not bad else 'not ' + ', '.join(bad)}")
    assert ok
