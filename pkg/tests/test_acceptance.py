"""Acceptance criteria 1-14, one test each, each reporting a PASS/FAIL line."""

import dataclasses
import logging
import math
import time

import numpy as np
import pytest
import scipy.sparse as sp

from nysopt.bench import read_trace_csv, run_experiment
from nysopt.config import config_from_dict
from nysopt.data import Dataset, subsample, synthetic_adult
from nysopt.diagnostics import newton_closeness, quality_sweep
from nysopt.losses import LossModel
from nysopt.nystrom import apply_inverse, build_factor, dense_reconstruct, factor_from_z, sample_columns
from nysopt.optimizers import TIMING_FIELDS, OptimizerConfig, newton_minimize, run, svrg_direction

from conftest import away_from_kink, fd_grad, fd_hessian_columns, random_dataset, random_spsd

pytestmark = pytest.mark.acceptance

ETAS = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
RHOS = [1.0, 1e-1, 1e-2, 1e-3]
LAM = 1e-3
SEEDS = 3
EPOCHS = 20


def log_fit(x, ly):
    slope, intercept = np.polyfit(x, ly, 1)
    resid = ly - (slope * x + intercept)
    return slope, 1 - resid @ resid / np.sum((ly - ly.mean()) ** 2)


def iterates(config, model, data):
    seen = []
    run(config, model, data, callback=lambda t, w: seen.append(w.copy()))
    return np.array(seen)


@pytest.fixture(scope="module")
def adult_grid(tmp_path_factory):
    """Nystrom-SVRG and SVRG over the full eta x rho grid on an adult-sized subsample.

    ell = 2 * ceil(n / b) inner steps per outer epoch, the same for both methods.
    """
    out = tmp_path_factory.mktemp("adult_grid")
    cfg = config_from_dict(
        dict(
            train="synthetic:adult", n_train=2000, data_seed=0, loss="logistic", lambdas=[LAM],
            methods=["nys_svrg", "svrg"], etas=ETAS, rhos=RHOS, m=50, batch_size=128, ell=32,
            epochs=EPOCHS, seeds=SEEDS, out=str(out),
        )
    ).validate()
    logging.disable(logging.WARNING)
    try:
        start = time.perf_counter()
        summary = run_experiment(cfg)
        elapsed = time.perf_counter() - start
    finally:
        logging.disable(logging.NOTSET)

    def errors(method):
        cell = summary.best[f"{LAM:g}"][method]
        rows = [read_trace_csv(out / "traces" / f"{cell}__rep{r}.csv") for r in range(SEEDS)]
        return cell, np.array([[float(row["opt_error"]) for row in trace] for trace in rows])

    return summary, elapsed, errors


def test_c01_woodbury_exactness(criterion):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 201))
        k = int(rng.integers(0, min(20, d) + 1))
        rho = float(rng.uniform(1e-3, 1.0))
        f = factor_from_z(rng.standard_normal((d, k)) * rng.uniform(0.1, 3.0, size=k), rho)
        v = rng.standard_normal(d)
        x = np.linalg.solve(f.Z @ f.Z.T + rho * np.eye(d), v)
        worst = max(worst, np.linalg.norm(apply_inverse(f, v) - x) / np.linalg.norm(x))
    elapsed = time.perf_counter() - start
    criterion(1, worst <= 1e-9 and elapsed <= 10, f"max rel error {worst:.2e} (<= 1e-9), {elapsed:.2f}s (<= 10s)")


def test_c02_exact_nystrom_recovery(criterion):
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 51))
        r = int(rng.integers(1, min(10, d) + 1))
        H = random_spsd(rng, d, r)
        while True:
            omega = sample_columns(d, int(rng.integers(r, min(d, r + 5) + 1)), rng)
            if np.linalg.matrix_rank(H[:, omega]) == r:
                break
        N = dense_reconstruct(build_factor(H[:, omega], omega, rho=1.0))
        worst = max(worst, np.linalg.norm(N - H) / np.linalg.norm(H))
    criterion(2, worst <= 1e-8, f"max relative Frobenius error {worst:.2e} (<= 1e-8)")


def test_c03_sketch_identity(criterion):
    rng = np.random.default_rng(103)
    model = LossModel("quadratic")
    worst = 0.0
    for _ in range(20):
        n, d = int(rng.integers(30, 80)), int(rng.integers(3, 31))
        data = random_dataset(rng, n, d, density=0.5)
        w = rng.standard_normal(d)
        omega = sample_columns(d, int(rng.integers(1, d + 1)), rng)
        N = dense_reconstruct(build_factor(model.hessian_columns(data, w, omega), omega, rho=1.0))
        # column-selection embedding W, then the top left singular vectors of X W
        X = data.X.toarray()
        W = np.zeros((d, omega.size))
        W[omega, np.arange(omega.size)] = 1.0
        U, s, _ = np.linalg.svd(X @ W, full_matrices=False)
        Uk = U[:, s > 1e-10 * max(s[0], 1e-300)] if s.size and s[0] > 0 else U[:, :0]
        H_hat = X.T @ Uk @ Uk.T @ X / n
        worst = max(worst, np.linalg.norm(N - H_hat))
    criterion(3, worst <= 1e-8, f"max Frobenius gap {worst:.2e} (<= 1e-8)")


def test_c04_spectral_sandwich(criterion):
    rng = np.random.default_rng(104)
    violations = 0
    for _ in range(200):
        d = int(rng.integers(2, 60))
        H = random_spsd(rng, d, int(rng.integers(1, d + 1)), scale=rng.uniform(0.1, 3.0))
        omega = sample_columns(d, int(rng.integers(1, d + 1)), rng)
        f = build_factor(H[:, omega], omega, rho=float(10 ** rng.uniform(-3, 1)))
        N = dense_reconstruct(f)
        ev = np.linalg.eigvalsh(N + f.rho * np.eye(d))
        top = np.linalg.eigvalsh(N)[-1] if f.k else 0.0
        if ev[0] < f.rho - 1e-10 or ev[-1] > top + f.rho + 1e-10:
            violations += 1
    criterion(4, violations == 0, f"{violations} of 200 factors outside [rho - 1e-10, lambda_max + rho + 1e-10]")


def test_c05_oracle_consistency(criterion):
    rng = np.random.default_rng(105)
    worst_g = worst_h = 0.0
    for kind in ("logistic", "l2svm"):
        model = LossModel(kind, 1e-2)
        data = random_dataset(rng, 80, 50, density=0.3)
        checked = 0
        while checked < 20:
            w = rng.standard_normal(50) * 0.3
            if not away_from_kink(model, data, w):
                continue
            g = model.grad(data, w)
            worst_g = max(worst_g, np.linalg.norm(g - fd_grad(model, data, w)) / max(np.linalg.norm(g), 1.0))
            omega = sample_columns(50, 5, rng)
            C = model.hessian_columns(data, w, omega)
            fd = fd_hessian_columns(model, data, w, omega)
            worst_h = max(worst_h, np.linalg.norm(C - fd) / max(np.linalg.norm(C), 1.0))
            checked += 1
    ok = worst_g <= 1e-5 and worst_h <= 1e-4
    criterion(5, ok, f"gradient rel error {worst_g:.2e} (<= 1e-5), Hessian columns {worst_h:.2e} (<= 1e-4)")


def test_c06_quadratic_contraction(criterion):
    rng = np.random.default_rng(106)
    n, d = 80, 10
    # known spectrum: X = Q diag(sqrt(n * s)) V^T gives X^T X / n = V diag(s) V^T
    s = np.logspace(0, -2, d)
    Qn, _ = np.linalg.qr(rng.standard_normal((n, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    X = Qn @ np.diag(np.sqrt(n * s)) @ V.T
    y = rng.standard_normal(n)
    data = Dataset(sp.csr_matrix(X), y)
    w_star = np.linalg.solve(X.T @ X / n, X.T @ y / n)
    mu = s.min()
    worst = -np.inf
    for rho in (1e-2, 1e-1, 1.0):
        cfg = OptimizerConfig(method="nys_sgd", eta=1.0, rho=rho, m=d, batch_size=n, sampling="without_replacement_per_epoch", epochs=20)
        ws = np.vstack([np.zeros(d), iterates(cfg, LossModel("quadratic"), data)])
        errs = np.linalg.norm(ws - w_star, axis=1)
        worst = max(worst, np.max(errs[1:] / errs[:-1] - rho / (rho + mu)))
    criterion(6, worst <= 1e-6, f"max excess contraction ratio over rho/(rho+mu): {worst:.2e} (<= 1e-6), 20 steps")


def test_c07_nystrom_svrg_linear_convergence(criterion, adult_grid):
    _, elapsed, errors = adult_grid
    cell, errs = errors("nys_svrg")
    epochs = np.arange(2, EPOCHS + 1)
    ly = np.mean(np.log(errs[:, 2 : EPOCHS + 1]), axis=0)
    slope, r2 = log_fit(epochs.astype(float), ly)
    ok = slope < 0 and r2 > 0.9 and elapsed <= 120
    criterion(7, ok, f"best cell {cell}: slope {slope:.3f} (< 0), R^2 {r2:.3f} (> 0.9), grid time {elapsed:.1f}s (<= 120s)")


def test_c08_curvature_benefit(criterion, adult_grid):
    _, _, errors = adult_grid

    def epochs_to(errs, target=1e-6):
        hits = [np.flatnonzero(row <= target) for row in errs]
        return [int(h[0]) if h.size else math.inf for h in hits]

    nys_cell, nys = errors("nys_svrg")
    svrg_cell, svrg = errors("svrg")
    e_nys, e_svrg = epochs_to(nys), epochs_to(svrg)
    wins = sum(a <= b for a, b in zip(e_nys, e_svrg))
    reached = sum(math.isfinite(a) for a in e_nys)
    ok = wins * 2 > SEEDS and reached * 2 > SEEDS
    criterion(8, ok, f"epochs to 1e-6 per seed: {nys_cell} {e_nys} vs {svrg_cell} {e_svrg}; {wins}/{SEEDS} seeds no worse")


def test_c09_closeness_bound(criterion):
    rng = np.random.default_rng(109)
    violations = 0
    for _ in range(100):
        d = int(rng.integers(1, 16))
        H = random_spsd(rng, d, int(rng.integers(1, d + 1)), scale=rng.uniform(0.1, 3.0))
        omega = sample_columns(d, int(rng.integers(1, d + 1)), rng)
        N = dense_reconstruct(build_factor(H[:, omega], omega, rho=1.0))
        lhs, rhs = newton_closeness(H, N, float(10 ** rng.uniform(-3, 1)))
        violations += lhs > rhs
    gap = 0.0
    for sigma, lam in ((2.0, 0.5), (1e-2, 1e-1), (10.0, 1.0)):
        lhs, rhs = newton_closeness(sigma * np.eye(5), np.zeros((5, 5)), lam)
        gap = max(gap, abs(lhs - rhs))
    ok = violations == 0 and gap <= 1e-10
    criterion(9, ok, f"{violations}/100 violations, scalar-case |lhs - rhs| {gap:.2e} (<= 1e-10)")


def test_c10_error_trend(criterion):
    data = subsample(synthetic_adult(5000, seed=0), 2000, seed=0)
    model = LossModel("logistic", LAM)
    w = newton_minimize(model, data).w
    grid = [5, 10, 25, 50, 123]
    reps = quality_sweep(model, data, w, grid, lam=LAM, seeds=30)
    means = [float(np.mean([r.rel_error_fro for r in reps if r.m == m])) for m in grid]
    full = max(r.rel_error_fro for r in reps if r.m == 123)
    ok = all(b <= a for a, b in zip(means, means[1:])) and full <= 1e-8
    criterion(10, ok, f"mean rel error over m={grid}: {[f'{x:.3g}' for x in means]}, m=123 max {full:.2e}")


def test_c11_unbiased_variance_reduction(criterion):
    rng = np.random.default_rng(111)
    data = random_dataset(rng, 100, 20, density=0.3)
    model = LossModel("logistic", 1e-2)
    worst = 0.0
    for _ in range(10):
        w, w_snap = rng.standard_normal((2, 20))
        g_snap = model.grad(data, w_snap)
        avg = np.mean([svrg_direction(model, data, w, w_snap, g_snap, [i]) for i in range(data.n)], axis=0)
        worst = max(worst, np.max(np.abs(avg - model.grad(data, w))))
    criterion(11, worst <= 1e-12, f"max deviation {worst:.2e} (<= 1e-12)")


def test_c12_rank0_reduction(criterion):
    data = synthetic_adult(500, seed=12)
    model = LossModel("logistic", LAM)
    same = []
    for nys, plain in (("nys_svrg", "svrg"), ("nys_sgd", "sgd")):
        cfg = OptimizerConfig(method=nys, eta=0.5, rho=1.0, lam=LAM, m=20, k_max=0, batch_size=32, epochs=5, seed=9)
        a = iterates(cfg, model, data)
        b = iterates(dataclasses.replace(cfg, method=plain), model, data)
        same.append(a.shape == b.shape and np.array_equal(a, b))
    criterion(12, all(same), f"bit-identical iterates: nys_svrg/svrg {same[0]}, nys_sgd/sgd {same[1]}")


def test_c13_determinism(criterion, tmp_path):
    base = dict(
        train="synthetic:adult", n_train=400, n_test=100, lambdas=[1e-3, 1e-2], etas=[0.5, 0.05], rhos=[0.1, 1.0],
        m=20, batch_size=32, epochs=3, seeds=2, hessian_sample=200,
    )
    for name in ("a", "b"):
        run_experiment(config_from_dict({**base, "out": str(tmp_path / name)}))
    paths = sorted((tmp_path / "a" / "traces").glob("*.csv"))
    mismatched = 0
    for path in paths:
        a, b = (
            [{k: v for k, v in row.items() if k not in TIMING_FIELDS} for row in read_trace_csv(p)]
            for p in (path, tmp_path / "b" / "traces" / path.name)
        )
        mismatched += a != b
    criterion(13, mismatched == 0 and len(paths) > 0, f"{mismatched} of {len(paths)} trace files differ outside timing columns")


def test_c14_build_time_scaling(criterion):
    rng = np.random.default_rng(114)
    n, d = 4000, 2000
    data = Dataset(sp.random(n, d, density=0.02, format="csr", random_state=rng), np.where(rng.random(n) < 0.5, -1.0, 1.0))
    model = LossModel("logistic", LAM)
    w = rng.standard_normal(d) * 0.01

    def build(m, seed):
        omega = sample_columns(d, m, np.random.default_rng(seed))
        build_factor(model.hessian_columns(data, w, omega), omega, rho=0.1)

    times = {}
    for m in (25, 50, 100):
        build(m, 0)
        samples = []
        for rep in range(15):
            start = time.perf_counter()
            build(m, rep)
            samples.append(time.perf_counter() - start)
        times[m] = min(samples)
    ratios = [times[50] / times[25], times[100] / times[50]]
    ok = all(r <= 2.6 for r in ratios)
    detail = ", ".join(f"m={m}: {t * 1e3:.2f}ms" for m, t in times.items())
    criterion(14, ok, f"{detail}; doubling ratios {ratios[0]:.2f}, {ratios[1]:.2f} (<= 2.6)")
