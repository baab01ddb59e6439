"""Experiment driver: grids of runs, reference optimum, CSV/JSON outputs."""

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as data_mod
from .diagnostics import ApproxQualityReport, effective_dimension, quality_sweep
from .errors import ConfigError, DivergenceError
from .linalg import symmetrize
from .losses import DENSE_CAP, LossModel
from .optimizers import TRACE_FIELDS, OptimizerConfig, initial_point, newton_minimize, run

log = logging.getLogger(__name__)

CSV_FIELDS = TRACE_FIELDS + ["config_hash"]
# margin below the best observed loss when no exact reference is affordable
BEST_SEEN_MARGIN = 1e-10


def load_data(config):
    """Train/test split described by an experiment config."""
    if config.synthetic:
        kind = config.train.split(":", 1)[1]
        assert kind == "adult"
        if config.n_test:
            train, test = data_mod.synthetic_adult(config.n_train, seed=config.data_seed, n_test=config.n_test)
        else:
            train, test = data_mod.synthetic_adult(config.n_train, seed=config.data_seed), None
    else:
        try:
            train, test = data_mod.load_train_test(config.train, config.test, config.n_features)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset: {exc}") from exc
        if config.n_train:
            train = data_mod.subsample(train, config.n_train, config.data_seed)
        if test is not None and config.n_test:
            test = data_mod.subsample(test, config.n_test, config.data_seed)
    if config.scale:
        train, test = data_mod.max_abs_scale(train, test)
    return train, test


@dataclass
class Cell:
    index: int
    method: str
    lam: float
    eta: float
    rho: float

    @property
    def cell_id(self):
        return f"{self.method}__lam{self.lam:g}__eta{self.eta:g}__rho{self.rho:g}"


def enumerate_cells(config):
    cells = []
    for lam in config.lambdas:
        for method in config.methods:
            rhos = config.rhos if method.startswith("nys_") else [1.0]
            for eta in config.etas:
                for rho in rhos:
                    cells.append(Cell(len(cells), method, float(lam), float(eta), float(rho)))
    return cells


def run_seed(master_seed, cell_index, rep):
    """64-bit seed for one (cell, repetition), independent of worker scheduling."""
    state = np.random.SeedSequence([master_seed, cell_index, rep]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def optimizer_config(config, cell, rep):
    return OptimizerConfig(
        method=cell.method,
        eta=cell.eta,
        rho=cell.rho,
        lam=cell.lam,
        m=config.m,
        k_max=config.k_max,
        ell=config.ell,
        batch_size=config.batch_size,
        epochs=config.epochs,
        seed=run_seed(config.seed, cell.index, rep),
        hessian_sample=config.hessian_sample_size(),
        init=config.init,
        sampling=config.sampling,
        outer_iterate=config.outer_iterate,
    )


@dataclass
class Reference:
    lam: float
    f_star: float
    method: str
    grad_norm: float = math.nan
    iterations: int = 0


def reference_optimum(model, train):
    """Exact reference via Newton when the dense Hessian is affordable, else None."""
    if train.d > DENSE_CAP:
        return None
    res = newton_minimize(model, train)
    return Reference(model.lam, res.f, res.method, res.grad_norm, res.iterations)


def _fmt(value):
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ""
    return str(value)


def write_trace_csv(path, trace, config_hash):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for rec in trace:
            row = asdict(rec)
            writer.writerow([_fmt(row[name]) for name in TRACE_FIELDS] + [config_hash])


def read_trace_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _execute(args):
    """One run; top-level so it can cross a process boundary."""
    opt_cfg, kind, train, test, f_star = args
    model = LossModel(kind, opt_cfg.lam)
    start = time.perf_counter()
    try:
        trace = run(opt_cfg, model, train, test, f_star=f_star)
        status, error = "ok", None
    except DivergenceError as exc:
        trace, status, error = exc.trace, "diverged", str(exc)
    return trace, status, error, time.perf_counter() - start


@dataclass
class RunSummary:
    config_hash: str
    references: dict
    cells: list
    best: dict
    failures: list
    total_wall_time_s: float
    outputs: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures


def _final_opt_error(trace):
    last = trace[-1] if trace else None
    if last is None or last.status != "ok" or not math.isfinite(last.opt_error):
        return math.inf
    return last.opt_error


def run_experiment(config, workers=None):
    """Run the full grid of methods x hyperparameters x seeds.

    Writes ``traces/<cell>__rep<r>.csv`` for every run and ``summary.json``
    under ``config.out`` and returns the summary.  The best cell per
    (lambda, method) is the one with the smallest mean final optimization
    error over its seeds.
    """
    start = time.perf_counter()
    workers = workers or config.workers
    config_hash = config.hash()
    train, test = load_data(config)
    out_dir = config.out
    os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)

    references = {}
    for lam in config.lambdas:
        references[float(lam)] = reference_optimum(LossModel(config.loss, float(lam)), train)

    cells = enumerate_cells(config)
    jobs, keys = [], []
    for cell in cells:
        ref = references[cell.lam]
        for rep in range(config.seeds):
            opt_cfg = optimizer_config(config, cell, rep)
            opt_cfg.validate(train.n, train.d)
            jobs.append((opt_cfg, config.loss, train, test, ref.f_star if ref else None))
            keys.append((cell, rep))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute, jobs))
    else:
        results = [_execute(job) for job in jobs]

    # no affordable exact optimum: fall back to best observed loss minus a margin
    for lam, ref in references.items():
        if ref is not None:
            continue
        traces = [res[0] for (cell, _), res in zip(keys, results) if cell.lam == lam]
        losses = [r.train_loss for trace in traces for r in trace if math.isfinite(r.train_loss)]
        best = min(losses, default=math.nan)
        f_star = best - BEST_SEEN_MARGIN * max(1.0, abs(best))
        references[lam] = Reference(lam, f_star, f"best observed train loss minus {BEST_SEEN_MARGIN:g} (relative)")
        for trace in traces:
            for r in trace:
                r.opt_error = r.train_loss - f_star

    per_cell = {}
    failures, outputs = [], []
    for (cell, rep), (trace, status, error, wall) in zip(keys, results):
        name = f"{cell.cell_id}__rep{rep}.csv"
        path = os.path.join(out_dir, "traces", name)
        write_trace_csv(path, trace, config_hash)
        outputs.append(os.path.join("traces", name))
        entry = per_cell.setdefault(
            cell.index,
            {"cell_id": cell.cell_id, "method": cell.method, "lam": cell.lam, "eta": cell.eta, "rho": cell.rho, "runs": []},
        )
        last = trace[-1] if trace else None
        entry["runs"].append(
            {
                "rep": rep,
                "seed": run_seed(config.seed, cell.index, rep),
                "status": status,
                "csv": os.path.join("traces", name),
                "final_opt_error": _json_float(_final_opt_error(trace)),
                "final_train_loss": _json_float(last.train_loss if last else math.nan),
                "final_test_error_rate": _json_float(last.test_error_rate if last else math.nan),
                "wall_time_s": wall,
            }
        )
        if status != "ok":
            failures.append({"cell_id": cell.cell_id, "rep": rep, "status": status, "error": error})

    cell_list = []
    for idx in sorted(per_cell):
        entry = per_cell[idx]
        finals = [_final_opt_error_from_entry(r) for r in entry["runs"]]
        entry["mean_final_opt_error"] = _json_float(float(np.mean(finals)) if finals else math.inf)
        entry["completed"] = all(r["status"] == "ok" for r in entry["runs"])
        cell_list.append(entry)

    best = {}
    for lam in config.lambdas:
        lam = float(lam)
        per_method = {}
        for method in config.methods:
            candidates = [c for c in cell_list if c["lam"] == lam and c["method"] == method and c["completed"]]
            if candidates:
                winner = min(candidates, key=lambda c: _num(c["mean_final_opt_error"]))
                per_method[method] = winner["cell_id"]
        best[f"{lam:g}"] = per_method

    summary = RunSummary(
        config_hash=config_hash,
        references={f"{lam:g}": asdict(ref) for lam, ref in references.items()},
        cells=cell_list,
        best=best,
        failures=failures,
        total_wall_time_s=time.perf_counter() - start,
        outputs=outputs,
    )
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        payload = asdict(summary)
        payload["config"] = config.as_dict()
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _json_float(x):
    """JSON has no inf/nan; encode them as strings."""
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def _num(x):
    return float(x) if not isinstance(x, str) else float(x.replace("nan", "inf"))


def _final_opt_error_from_entry(run_entry):
    return _num(run_entry["final_opt_error"])


def diagnostic_point(config, model, train):
    if config.diag_point == "optimum":
        return newton_minimize(model, train).w
    opt = OptimizerConfig(method="sgd", eta=1.0, lam=model.lam, init=config.diag_point)
    return initial_point(opt, model, train)


QUALITY_FIELDS = [f for f in ApproxQualityReport.__dataclass_fields__]


def run_diagnostics(config):
    """Approximation-quality sweep, closeness table and effective dimensions.

    The Hessian is taken at ``config.diag_point`` for the first lambda of
    ``config.lambdas``.  Writes ``quality_sweep.csv``,
    ``newton_closeness.csv``, ``effective_dimension.csv`` and
    ``diagnostics.json`` under ``config.out``.
    """
    train, _ = load_data(config)
    if train.d > DENSE_CAP:
        raise ConfigError(f"diagnostics need d <= {DENSE_CAP}, got {train.d}")
    m_grid = config.resolved_m_grid(train.d)
    model = LossModel(config.loss, float(config.lambdas[0]))
    w = diagnostic_point(config, model, train)
    config_hash = config.hash()
    os.makedirs(config.out, exist_ok=True)

    reports = []
    for lam in config.diag_lambdas:
        reports.extend(quality_sweep(model, train, w, m_grid, float(lam), config.diag_seeds, base_seed=config.seed))

    with open(os.path.join(config.out, "quality_sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(QUALITY_FIELDS + ["config_hash"])
        for r in reports:
            row = asdict(r)
            writer.writerow([_fmt(row[name]) for name in QUALITY_FIELDS] + [config_hash])

    with open(os.path.join(config.out, "newton_closeness.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["m", "seed", "lam", "lhs", "rhs", "holds", "config_hash"])
        for r in reports:
            holds = r.newton_closeness_lhs <= r.newton_closeness_rhs + 1e-8
            writer.writerow(
                [r.m, r.seed, _fmt(r.lam), _fmt(r.newton_closeness_lhs), _fmt(r.newton_closeness_rhs), holds, config_hash]
            )

    H = symmetrize(model.with_lam(0.0).full_hessian(train, w))
    eff = {f"{lam:g}": effective_dimension(H, float(lam)) for lam in config.diag_lambdas}
    with open(os.path.join(config.out, "effective_dimension.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lam", "effective_dim", "config_hash"])
        for lam in config.diag_lambdas:
            writer.writerow([_fmt(float(lam)), _fmt(eff[f"{lam:g}"]), config_hash])

    first_lam = float(config.diag_lambdas[0])
    mean_err = {}
    for m in m_grid:
        errs = [r.rel_error_fro for r in reports if r.m == m and r.lam == first_lam]
        mean_err[str(m)] = float(np.mean(errs))
    summary = {
        "config_hash": config_hash,
        "d": train.d,
        "n": train.n,
        "diag_point": config.diag_point,
        "m_grid": m_grid,
        "mean_rel_error_fro": mean_err,
        "effective_dimension": eff,
        "closeness_bound_violations": sum(
            r.newton_closeness_lhs > r.newton_closeness_rhs + 1e-8 for r in reports
        ),
    }
    with open(os.path.join(config.out, "diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return reports, summary


def validate_experiment(config):
    """Load the data and check every run config against it."""
    train, test = load_data(config)
    if test is not None and test.d != train.d:
        raise ConfigError("train and test disagree on feature dimension")
    for cell in enumerate_cells(config):
        optimizer_config(config, cell, 0).validate(train.n, train.d)
    for m in config.resolved_m_grid(train.d):
        if m > train.d:
            raise ConfigError(f"m_grid entry {m} exceeds d={train.d}")
    return train, test
