"""Nystrom-preconditioned SGD / SVRG and their plain first-order baselines.

Every run uses the same named random streams (columns, batches, init,
outer, hessian_sample) derived from ``config.seed``.  Plain SGD/SVRG
therefore see exactly the batch sequence of their Nystrom counterparts, and a
forced rank-0 factor with ``rho = 1`` reproduces them bit-for-bit.
"""

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import SAMPLING_MODES, WITH_REPLACEMENT, BatchSampler, make_streams
from .errors import ConfigError, DivergenceError
from .losses import LossModel
from .nystrom import apply_inverse, build_factor, sample_columns

log = logging.getLogger(__name__)

METHODS = ("nys_sgd", "nys_svrg", "sgd", "svrg")
INITS = ("zeros", "least_squares", "given")
OUTER_ITERATES = ("random", "last")


@dataclass
class OptimizerConfig:
    """Hyperparameters of a single run.

    ``ell`` is the factor refresh period in iterations (SGD-style methods) or
    the number of inner steps per outer epoch (SVRG-style); ``None`` means
    ``ceil(n / batch_size)``.  ``hessian_sample=None`` builds the sampled
    Hessian columns over the whole training set.  The next SVRG snapshot is a
    uniformly random inner iterate; ``outer_iterate="last"`` keeps the final
    one instead.
    """

    method: str
    eta: float
    rho: float = 1.0
    lam: float = 0.0
    m: int = 50
    k_max: Optional[int] = None
    ell: Optional[int] = None
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    hessian_sample: Optional[int] = None
    init: str = "zeros"
    w0: Optional[np.ndarray] = None
    sampling: str = WITH_REPLACEMENT
    outer_iterate: str = "random"
    clamp: Optional[float] = None
    divergence_factor: float = 1e3

    @property
    def uses_nystrom(self):
        return self.method.startswith("nys_")

    @property
    def svrg_style(self):
        return self.method.endswith("svrg")

    def iters_per_epoch(self, n):
        return math.ceil(n / self.batch_size)

    def resolved_ell(self, n):
        return self.ell if self.ell is not None else self.iters_per_epoch(n)

    def validate(self, n, d):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if not self.rho > 0:
            raise ConfigError("rho must be > 0")
        if not self.lam >= 0:
            raise ConfigError("lam must be >= 0")
        if self.ell is not None and self.ell < 1:
            raise ConfigError("ell must be >= 1")
        if not 1 <= self.batch_size <= n:
            raise ConfigError(f"batch_size must be in [1, n={n}]")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.uses_nystrom and not 1 <= self.m <= d:
            raise ConfigError(f"m must be in [1, d={d}]")
        if self.k_max is not None and self.k_max < 0:
            raise ConfigError("k_max must be >= 0")
        if self.hessian_sample is not None and not 1 <= self.hessian_sample <= n:
            raise ConfigError(f"hessian_sample must be in [1, n={n}]")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}")
        if self.init == "given" and (self.w0 is None or np.shape(self.w0) != (d,)):
            raise ConfigError("init='given' needs w0 of length d")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if self.outer_iterate not in OUTER_ITERATES:
            raise ConfigError(f"unknown outer_iterate {self.outer_iterate!r}")


@dataclass
class TraceRecord:
    epoch: int
    wall_time_s: float
    train_loss: float
    opt_error: float
    test_error_rate: float
    grad_norm: float
    factor_rank: int
    factor_build_time_s: float
    status: str = "ok"
    clock: str = "iteration"
    iterations: int = 0


TRACE_FIELDS = [f.name for f in dataclasses.fields(TraceRecord)]
TIMING_FIELDS = ("wall_time_s", "factor_build_time_s")


def error_rate(data, w):
    if data is None or data.n == 0:
        return math.nan
    pred = np.where(data.X @ w >= 0, 1.0, -1.0)
    return float(np.mean(pred != data.y))


def least_squares_init(train, lam, dense_cap=2000):
    """Ridge least-squares fit of the +-1 labels, a common warm start."""
    X, y, n = train.X, train.y, train.n
    rhs = X.T @ y / n
    if train.d <= dense_cap:
        A = (X.T @ X).toarray() / n + lam * np.eye(train.d)
        return np.linalg.lstsq(A, rhs, rcond=None)[0]
    from scipy.sparse.linalg import LinearOperator, cg

    op = LinearOperator((train.d, train.d), matvec=lambda v: X.T @ (X @ v) / n + lam * v, dtype=float)
    w, _ = cg(op, rhs, rtol=1e-10, maxiter=10 * train.d)
    return w


def initial_point(config, model, train):
    if config.init == "zeros":
        return np.zeros(train.d)
    if config.init == "given":
        return np.array(config.w0, dtype=float)
    return least_squares_init(train, model.lam, model.dense_cap)


def svrg_direction(model, data, w, w_snap, g_snap, batch):
    """Variance-reduced gradient ``grad_B(w) - grad_B(w_snap) + g_snap``."""
    return model.grad(data, w, batch) - model.grad(data, w_snap, batch) + g_snap


class _Run:
    """Shared bookkeeping: streams, timing, factor refresh and trace records."""

    def __init__(self, config, model, train, test, f_star, callback):
        if model.lam != config.lam:
            raise ConfigError(f"model.lam={model.lam} disagrees with config.lam={config.lam}")
        config.validate(train.n, train.d)
        self.config, self.model, self.train, self.test = config, model, train, test
        self.f_star = f_star
        self.callback = callback
        self.streams = make_streams(config.seed)
        self.sampler = BatchSampler(
            seed=config.seed, batch_size=config.batch_size, mode=config.sampling, rng=self.streams["batches"]
        )
        self.factor = None
        self.tau = 0
        self.elapsed = 0.0
        self.build_time = 0.0
        self.iterations = 0
        self.trace = []
        self.initial_loss = None

    def refresh_factor(self, w):
        cfg = self.config
        start = time.perf_counter()
        sample = None
        if cfg.hessian_sample is not None and cfg.hessian_sample < self.train.n:
            sample = np.sort(self.streams["hessian_sample"].choice(self.train.n, cfg.hessian_sample, replace=False))
        omega = sample_columns(self.train.d, cfg.m, self.streams["columns"])
        C = self.model.hessian_columns(self.train, w, omega, sample=sample)
        self.tau += 1
        self.factor = build_factor(C, omega, cfg.rho, k_max=cfg.k_max, clamp=cfg.clamp, epoch=self.tau)
        self.build_time += time.perf_counter() - start

    def precondition(self, v):
        if self.factor is None:
            return v
        return apply_inverse(self.factor, v)

    def check_iterate(self, w):
        if not np.all(np.isfinite(w)):
            self.diverge("non-finite iterate")

    def diverge(self, reason):
        nan = math.nan
        self.trace.append(
            TraceRecord(
                epoch=len(self.trace),
                wall_time_s=self.elapsed,
                train_loss=nan,
                opt_error=nan,
                test_error_rate=nan,
                grad_norm=nan,
                factor_rank=self.factor.k if self.factor is not None else 0,
                factor_build_time_s=self.build_time,
                status="diverged",
                clock=self.clock,
                iterations=self.iterations,
            )
        )
        log.warning("%s diverged: %s at iteration %d", self.config.method, reason, self.iterations)
        raise DivergenceError(reason, iteration=self.iterations, config=self.config, trace=self.trace)

    @property
    def clock(self):
        return "outer" if self.config.svrg_style else "iteration"

    def record(self, epoch, w):
        loss = self.model.loss(self.train, w)
        if not math.isfinite(loss):
            self.diverge("non-finite training loss")
        if self.initial_loss is None:
            self.initial_loss = loss
        elif self.initial_loss > 0 and loss > self.config.divergence_factor * self.initial_loss:
            self.diverge(f"training loss {loss:.3g} exceeds {self.config.divergence_factor:g}x initial")
        self.trace.append(
            TraceRecord(
                epoch=epoch,
                wall_time_s=self.elapsed,
                train_loss=loss,
                opt_error=loss - self.f_star if self.f_star is not None else math.nan,
                test_error_rate=error_rate(self.test, w),
                grad_norm=float(np.linalg.norm(self.model.grad(self.train, w))),
                factor_rank=self.factor.k if self.factor is not None else 0,
                factor_build_time_s=self.build_time,
                clock=self.clock,
                iterations=self.iterations,
            )
        )
        self.build_time = 0.0


def _run_sgd_style(run: _Run):
    cfg, model, train = run.config, run.model, run.train
    n = train.n
    ell = cfg.resolved_ell(n)
    w = initial_point(cfg, model, train)
    run.record(0, w)
    t = 0
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        for _ in range(cfg.iters_per_epoch(n)):
            t += 1
            batch = run.sampler.next_batch(n)
            v = model.grad(train, w, batch)
            if cfg.uses_nystrom and (t - 1) % ell == 0:
                run.refresh_factor(w)
            w = w - cfg.eta * run.precondition(v)
            run.iterations = t
            run.check_iterate(w)
            if run.callback is not None:
                run.callback(t, w)
        run.elapsed += time.perf_counter() - start
        run.record(epoch, w)
    return run.trace


def _run_svrg_style(run: _Run):
    cfg, model, train = run.config, run.model, run.train
    n = train.n
    ell = cfg.resolved_ell(n)
    w_snap = initial_point(cfg, model, train)
    run.record(0, w_snap)
    t_global = 0
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        g_snap = model.grad(train, w_snap)
        if cfg.uses_nystrom:
            run.refresh_factor(w_snap)
        # index of the inner iterate kept as the next snapshot, drawn up front
        if cfg.outer_iterate == "random":
            keep = int(run.streams["outer"].integers(1, ell + 1))
        else:
            keep = ell
        w = w_snap.copy()
        kept = None
        for t in range(1, ell + 1):
            batch = run.sampler.next_batch(n)
            v = svrg_direction(model, train, w, w_snap, g_snap, batch)
            w = w - cfg.eta * run.precondition(v)
            t_global += 1
            run.iterations = t_global
            run.check_iterate(w)
            if run.callback is not None:
                run.callback(t_global, w)
            if t == keep:
                kept = w
        w_snap = kept
        run.elapsed += time.perf_counter() - start
        run.record(epoch, w_snap)
    return run.trace


def _check_method(config, allowed):
    if config.method not in allowed:
        raise ConfigError(f"method {config.method!r} not handled here (expected one of {allowed})")


def run_nys_sgd(config, model, train, test=None, f_star=None, callback=None):
    """Nystrom-SGD: refresh the factor every ``ell`` iterations, precondition each step."""
    _check_method(config, ("nys_sgd",))
    return _run_sgd_style(_Run(config, model, train, test, f_star, callback))


def run_nys_svrg(config, model, train, test=None, f_star=None, callback=None):
    """Nystrom-SVRG: one factor per outer epoch, built at the snapshot."""
    _check_method(config, ("nys_svrg",))
    return _run_svrg_style(_Run(config, model, train, test, f_star, callback))


def run_baseline(config, model, train, test=None, f_star=None, callback=None):
    """Plain SGD or SVRG (the latter with the random-inner-iterate snapshot)."""
    _check_method(config, ("sgd", "svrg"))
    run = _Run(config, model, train, test, f_star, callback)
    return _run_svrg_style(run) if config.svrg_style else _run_sgd_style(run)


def run(config, model, train, test=None, f_star=None, callback: Optional[Callable] = None):
    """Dispatch on ``config.method``."""
    runner = {"nys_sgd": run_nys_sgd, "nys_svrg": run_nys_svrg, "sgd": run_baseline, "svrg": run_baseline}
    if config.method not in runner:
        raise ConfigError(f"unknown method {config.method!r}")
    return runner[config.method](config, model, train, test, f_star=f_star, callback=callback)


@dataclass
class NewtonResult:
    w: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    method: str = "damped Newton, full Hessian, Armijo backtracking"


def newton_minimize(model: LossModel, data, w0=None, tol=1e-12, max_iter=200):
    """High-accuracy reference minimizer used to measure optimization error.

    Stops at ``||grad|| <= tol`` or when a full backtracking search cannot
    decrease f any further (the floating-point floor).
    """
    w = np.zeros(data.d) if w0 is None else np.array(w0, dtype=float)
    f = model.loss(data, w)
    g = model.grad(data, w)
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            break
        H = model.full_hessian(data, w)
        H = 0.5 * (H + H.T)
        try:
            p = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            p = np.linalg.lstsq(H, -g, rcond=None)[0]
        slope = g @ p
        if slope >= 0:
            p, slope = -g, -(g @ g)
        step = 1.0
        while step > 1e-12:
            w_new = w + step * p
            f_new = model.loss(data, w_new)
            if f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        g_new = model.grad(data, w_new)
        if f_new == f and np.linalg.norm(g_new) >= gnorm:
            break
        w, f, g = w_new, f_new, g_new
    return NewtonResult(w=w, f=f, grad_norm=float(np.linalg.norm(g)), iterations=it)


@dataclass
class AdmissibilityReport:
    Delta: float
    delta: float
    eta_bound: float
    eta_ok: bool
    ell_lhs: float
    ell_ok: bool
    alpha: float
    zeta: float
    admissible: bool
    violations: list


def check_step_admissibility(config, mu_est, Lambda_est, gamma_est, ell=None):
    """Evaluate the step-size and inner-loop-length conditions of the SVRG rate.

    With ``Delta = 1/(gamma + rho)`` and ``delta = 1/rho`` the linear rate
    needs ``eta < mu Delta / (2 Lambda^2 delta^2)`` and
    ``1/(2 ell eta) + 2 eta Lambda^2 delta^2 < mu Delta``; the contraction
    factor is then
    ``alpha = (1 + 2 ell eta^2 Lambda^2 delta^2) / (2 ell eta (mu Delta - eta Lambda^2 delta^2))``.
    ``alpha`` is ``inf`` when its denominator is not positive.  ``zeta`` is
    the companion per-epoch factor on the squared distance to the optimum.
    """
    if mu_est <= 0 or Lambda_est <= 0 or gamma_est < 0:
        raise ConfigError("mu and Lambda must be > 0, gamma >= 0")
    ell = ell if ell is not None else config.ell
    if ell is None or ell < 1:
        raise ConfigError("ell must be a positive integer")
    eta, rho = config.eta, config.rho
    Delta = 1.0 / (gamma_est + rho)
    delta = 1.0 / rho
    L2d2 = Lambda_est**2 * delta**2
    mu_D = mu_est * Delta

    eta_bound = mu_D / (2.0 * L2d2)
    eta_ok = eta < eta_bound
    ell_lhs = 1.0 / (2.0 * ell * eta) + 2.0 * eta * L2d2
    ell_ok = ell_lhs < mu_D
    denom = 2.0 * ell * eta * (mu_D - eta * L2d2)
    alpha = (1.0 + 2.0 * ell * eta**2 * L2d2) / denom if denom > 0 else math.inf

    L2d = Lambda_est**2 * delta
    zden = mu_D - 2.0 * eta * L2d
    zeta = (1.0 - 2.0 * eta * (mu_D - eta * L2d)) ** ell + eta * L2d / zden if zden > 0 else math.inf

    violations = []
    if not eta_ok:
        violations.append("eta < mu*Delta/(2*Lambda^2*delta^2)")
    if not ell_ok:
        violations.append("1/(2*ell*eta) + 2*eta*Lambda^2*delta^2 < mu*Delta")
    if not alpha < 1:
        violations.append("alpha < 1")
    return AdmissibilityReport(
        Delta=Delta,
        delta=delta,
        eta_bound=eta_bound,
        eta_ok=eta_ok,
        ell_lhs=ell_lhs,
        ell_ok=ell_ok,
        alpha=alpha,
        zeta=zeta,
        admissible=not violations,
        violations=violations,
    )


def estimate_constants(model, data, w, factor=None):
    """Local estimates ``(mu, Lambda, gamma)`` for :func:`check_step_admissibility`.

    mu and Lambda are the extreme Hessian eigenvalues at ``w``; gamma is the
    top eigenvalue of the factor's ``Z Z^T`` (0 without a factor).
    """
    mu, Lam = model.extreme_eigenvalues(data, w)
    gamma = factor.gamma() if factor is not None else 0.0
    return mu, Lam, gamma
