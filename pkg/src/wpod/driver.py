"""Optimization with reduced models in the loop, and side-by-side comparisons.

Per query point the evaluator runs the full-order model during warm-up,
afterwards builds a basis for the configured method, solves the reduced
model, and falls back to the full-order model (storing its snapshot) when
the residual gate rejects the reduced solution.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import ReducedBasis, build_basis, build_enhanced_basis
from .bound import bound_surrogate
from .errors import InputError, RankError
from .hdm import (
    ChainProblem,
    adjoint_gradient,
    solve_hdm,
    state_sensitivities,
    volume_constraint,
)
from .optimizer import LinearConstraint, OptimizationReport, Oracle, Schedule, outer_loop
from .rom import relative_error, residual_acceptance, rom_adjoint_gradient, solve_rom
from .snapshots import POINT_TOL, SnapshotStore
from .weighting import cubic_weights, distance_profile, uniform_weights

log = logging.getLogger(__name__)

METHODS = ("hdm", "global", "weighted", "weighted-deriv")
ROM_METHODS = METHODS[1:]
WALL_TIME_COLUMNS = ("t_basis", "t_solve", "t_total")
PROBLEM_KEYS = tuple(f.name for f in dataclasses.fields(ChainProblem) if f.name != "E")


@dataclass
class RunConfig:
    """Run configuration; loaded from JSON with unknown keys rejected."""

    method: str = "weighted"
    n_r: int = 12
    c: float = 0.8
    eps_svd: float = 1e-8
    eps_orth: float = 1e-2
    eps_r0: float = 0.1
    reinit_period: int = 25
    min_halvings: int = 2
    warmup_hdm_evals: int = 10
    max_iters: int = 500
    kkt_tol: float = 1e-6
    max_stalls: int = 10
    reorthonormalize: bool = True
    reference_errors: bool = True
    save_store: bool = False
    shadow_methods: list = field(default_factory=lambda: list(ROM_METHODS))
    shadow_nr: list = field(default_factory=lambda: [8, 12, 16])
    max_queries: int = 60
    problem: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for m in self.shadow_methods:
            if m not in ROM_METHODS:
                raise InputError(f"unknown shadow method {m!r}")
        for name in ("c", "eps_svd", "eps_orth", "kkt_tol"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.eps_r0 < 0:
            raise InputError("eps_r0 must be non-negative")
        if not 0 < self.c <= 1:
            raise InputError("c must lie in (0, 1]")
        if self.n_r < 1 or any(int(n) < 1 for n in self.shadow_nr):
            raise InputError("basis sizes must be positive")
        if self.method == "weighted-deriv" and self.n_r < 2:
            raise InputError("weighted-deriv needs n_r >= 2")
        if (self.reinit_period < 1 or self.min_halvings < 0 or self.warmup_hdm_evals < 1
                or self.max_iters < 0 or self.max_stalls < 0):
            raise InputError("invalid schedule parameters")
        unknown = set(self.problem) - set(PROBLEM_KEYS)
        if unknown:
            raise InputError(f"unknown problem keys: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InputError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def build_problem(self) -> ChainProblem:
        return ChainProblem(**self.problem)

    def schedule(self) -> Schedule:
        return Schedule(self.reinit_period, self.min_halvings, self.eps_r0,
                        self.max_iters, self.kkt_tol, self.max_stalls)


@dataclass
class QueryRecord:
    query: int
    method: str
    n_r: int | str
    source: str
    accepted: bool | str
    eps_r: float
    residual_metric: float | str
    rel_error: float | str
    J: float
    n_w: int | str
    delta_min: float | str
    delta_hat: float | str
    bound_truncation: float | str
    bound_distance: float | str
    bound_total: float | str
    n_s: int
    n_sd: int
    n_a: int
    n_e: int
    store_hash: str
    mu: str
    t_basis: float
    t_solve: float
    t_total: float


RECORD_COLUMNS = tuple(f.name for f in dataclasses.fields(QueryRecord))


class QueryBudgetExhausted(Exception):
    """Raised by the evaluator once the configured number of queries is used."""


def _fmt_mu(mu) -> str:
    return " ".join(f"{x:.17g}" for x in mu)


@dataclass
class RomAttempt:
    basis: ReducedBasis
    rom: object
    residual_metric: float
    weights: object
    bound: object
    t_basis: float
    t_solve: float


def build_method_basis(store: SnapshotStore, method: str, mu_hat, n_r: int, c: float,
                       reorthonormalize: bool = True) -> ReducedBasis:
    """Basis for one method; `n_r` is reduced to the achievable rank if needed."""
    mu_hat = np.asarray(mu_hat, float)
    if method == "weighted-deriv":
        try:
            return build_enhanced_basis(store, mu_hat, c, n_r, reorthonormalize)
        except RankError as exc:
            n_r = max(2, min(n_r - 1, exc.available))
            return build_method_basis(store, method, mu_hat, n_r, c, reorthonormalize)
    if method == "global":
        weights = uniform_weights(store.n_s)
    elif method == "weighted":
        weights = cubic_weights(distance_profile(store.points, mu_hat, c))
    else:
        raise InputError(f"method {method!r} has no reduced basis")
    try:
        return build_basis(store, weights, n_r, mu_hat)
    except RankError as exc:
        return build_basis(store, weights, exc.available, mu_hat)


def attempt_rom(problem: ChainProblem, store: SnapshotStore, method, mu, n_r, c,
                reorthonormalize=True) -> RomAttempt:
    t0 = time.perf_counter()
    basis = build_method_basis(store, method, mu, n_r, c, reorthonormalize)
    t1 = time.perf_counter()
    rom = solve_rom(problem, mu, basis.phi)
    t2 = time.perf_counter()
    w = basis.weights_used
    bound = bound_surrogate(store, w, basis.n_primal, mu, basis.singular_values)
    return RomAttempt(basis, rom, rom.residual_metric(problem.n_x), w, bound, t1 - t0, t2 - t1)


@dataclass(eq=False)
class _Entry:
    mu: np.ndarray
    source: str
    J: float
    hdm: object = None
    rom: object = None
    phi: np.ndarray | None = None
    grad: np.ndarray | None = None
    residual: float = 0.0
    query: int = 0


class Evaluator(Oracle):
    """Evaluation oracle implementing the query flow for one method."""

    def __init__(self, config: RunConfig, problem: ChainProblem | None = None,
                 collect_sensitivities: bool | None = None, max_queries: int | None = None,
                 before_hdm=None):
        self.config = config
        self.problem = problem or config.build_problem()
        p = self.problem
        self.store = SnapshotStore(p.n_x, p.n_t, p.dt, p.E, config.eps_svd, config.eps_orth)
        self.method = config.method
        self.collect_sensitivities = (
            self.method == "weighted-deriv" if collect_sensitivities is None
            else collect_sensitivities
        )
        self.max_queries = max_queries
        self.before_hdm = before_hdm
        self.eps_r = config.eps_r0
        self.entries: list[_Entry] = []
        self.records: list[QueryRecord] = []
        self.n_e = 0
        self.n_a = 0
        self.n_restores = 0
        self.n_reevaluations = 0

    # -- bookkeeping -------------------------------------------------------
    def lookup(self, mu) -> _Entry | None:
        mu = np.asarray(mu, float)
        for e in self.entries:
            if np.linalg.norm(e.mu - mu) <= POINT_TOL:
                return e
        return None

    @property
    def n_s(self) -> int:
        return self.store.n_s

    @property
    def n_sd(self) -> int:
        return self.store.n_sd

    def counters(self) -> dict:
        return {"n_s": self.n_s, "n_sd": self.n_sd, "n_a": self.n_a, "n_e": self.n_e,
                "n_restores": self.n_restores, "n_reevaluations": self.n_reevaluations}

    # -- oracle interface -------------------------------------------------
    def set_eps_r(self, eps_r):
        self.eps_r = eps_r

    def value(self, mu) -> float:
        return self.run_query(mu).J

    def gradient(self, mu) -> np.ndarray:
        e = self.run_query(mu)
        if e.grad is None:
            if e.source == "rom":
                e.grad = rom_adjoint_gradient(self.problem, e.mu, e.phi, e.rom)
            else:
                self._collect_derivative(e)
                e.grad = adjoint_gradient(self.problem, e.mu, e.hdm)
        return e.grad

    def reinit(self, mu):
        e = self.run_query(mu)
        if self.store.find(e.mu) is None:
            sol = solve_hdm(self.problem, e.mu)
            self.store.append_snapshot(e.mu, sol.trajectory)
            self.n_restores += 1
            e.source, e.J, e.hdm, e.rom, e.phi, e.grad = "hdm", sol.J, sol, None, None, None
            self.records.append(self._record(e.query, e, None, False, "", sol.wall_time,
                                             source="restore"))

    # -- query flow ---------------------------------------------------------
    def _collect_derivative(self, e: _Entry):
        if not self.collect_sensitivities:
            return
        j = self.store.find(e.mu)
        if j is not None and j not in self.store.deriv_blocks:
            self.store.attach_derivative(j, state_sensitivities(self.problem, e.mu, e.hdm))

    def _store_hdm(self, mu, sol, warm):
        dA = None
        if self.collect_sensitivities and warm:
            dA = state_sensitivities(self.problem, mu, sol)
        self.store.append_snapshot(mu, sol.trajectory, dA)

    def run_query(self, mu) -> _Entry:
        mu = np.asarray(mu, float)
        e = self.lookup(mu)
        if e is not None:
            if e.source == "hdm" or residual_acceptance(e.rom, self.eps_r, self.problem.n_x):
                return e
            # accepted under a looser tolerance: evaluate again
            self.entries.remove(e)
            self.n_reevaluations += 1
            q = e.query
        else:
            if self.max_queries is not None and self.n_e >= self.max_queries:
                raise QueryBudgetExhausted(self.n_e)
            self.n_e += 1
            q = self.n_e
        t0 = time.perf_counter()
        warm = q <= self.config.warmup_hdm_evals or self.method == "hdm"
        attempt = None
        accepted = False
        if not warm:
            attempt = attempt_rom(self.problem, self.store, self.method, mu, self.config.n_r,
                                  self.config.c, self.config.reorthonormalize)
            accepted = residual_acceptance(attempt.rom, self.eps_r, self.problem.n_x)
            attempt.rom.accepted = accepted
        rel = ""
        if accepted:
            self.n_a += 1
            e = _Entry(mu.copy(), "rom", attempt.rom.J, rom=attempt.rom, phi=attempt.basis.phi,
                       residual=attempt.residual_metric)
            if self.config.reference_errors:
                ref = solve_hdm(self.problem, mu)
                rel = relative_error(ref, attempt.rom, self.store.time_weights, self.problem.E)
        else:
            if self.before_hdm is not None:
                self.before_hdm(self, mu, q)
            sol = solve_hdm(self.problem, mu)
            if attempt is not None:
                rel = relative_error(sol, attempt.rom, self.store.time_weights, self.problem.E)
            self._store_hdm(mu, sol, warm)
            e = _Entry(mu.copy(), "hdm", sol.J, hdm=sol)
        e.query = q
        self.entries.append(e)
        self.records.append(self._record(q, e, attempt, accepted, rel,
                                         time.perf_counter() - t0))
        return e

    def _record(self, q, e, attempt, accepted, rel, t_total, source=None) -> QueryRecord:
        if attempt is None:
            n_r = residual = nw = dmin = dhat = bt = bd = btot = ""
            acc = ""
            t_basis = 0.0
            t_solve = e.hdm.wall_time
        else:
            n_r = attempt.basis.n_r
            residual = attempt.residual_metric
            w = attempt.weights
            nw = w.n_w
            prof = w.profile or distance_profile(self.store.points, e.mu, self.config.c)
            dmin, dhat = prof.delta_min, prof.delta_hat
            bt, bd, btot = attempt.bound.truncation_term, attempt.bound.distance_term, attempt.bound.total
            acc = accepted
            t_basis = attempt.t_basis
            t_solve = attempt.t_solve + (0.0 if accepted else e.hdm.wall_time)
        return QueryRecord(
            q, self.method, n_r, source or e.source, acc, self.eps_r, residual, rel, e.J,
            nw, dmin, dhat, bt, bd, btot, self.n_s, self.n_sd, self.n_a, self.n_e,
            self.store.state_hash(), _fmt_mu(e.mu), t_basis, t_solve, t_total,
        )


# -- experiment entry points ----------------------------------------------------


def volume_constraint_for(problem: ChainProblem) -> LinearConstraint:
    _, grad = volume_constraint(problem.mu_init, problem.length, problem.mu_init)
    return LinearConstraint(grad, float(grad @ problem.mu_init))


def optimize(config: RunConfig, out_dir=None):
    """Run the optimization with the configured method.

    Returns ``(report, records)`` and writes ``queries.csv`` and
    ``report.json`` when `out_dir` is given; with ``save_store`` the final
    snapshot store also goes to ``store/``.
    """
    problem = config.build_problem()
    ev = Evaluator(config, problem)
    report = outer_loop(ev, problem.mu_init, volume_constraint_for(problem), problem.bounds,
                        config.schedule())
    report.counters = ev.counters()
    # independent check of the returned design; not counted as a query
    report.J_opt_verified = solve_hdm(problem, report.mu_opt).J
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(out / "queries.csv", ev.records)
        (out / "report.json").write_text(json.dumps(report_dict(config, report), indent=2))
        if config.save_store:
            ev.store.save(out / "store")
    return report, ev.records


def report_dict(config: RunConfig, report: OptimizationReport) -> dict:
    return {
        "method": config.method,
        "n_r": config.n_r,
        "seed": config.seed,
        **report.counters,
        "J_init": report.J_init,
        "J_opt": report.J_opt,
        "C_rel": report.C_rel,
        "J_opt_hdm": report.J_opt_verified,
        "C_rel_hdm": report.C_rel_verified,
        "iterations": report.iterations,
        "halvings": report.halvings,
        "eps_r_final": report.eps_r,
        "eps_trace": [[int(i), float(e), c] for i, e, c in report.eps_trace],
        "kkt_residual": report.kkt,
        "termination": report.reason,
        "mu_opt": [float(x) for x in report.mu_opt],
    }


def write_records(path, records, columns=RECORD_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(columns)
        for r in records:
            row = dataclasses.asdict(r) if dataclasses.is_dataclass(r) else r
            w.writerow([_cell(row[c]) for c in columns])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


SHADOW_COLUMNS = ("query", "method", "n_r", "n_r_used", "rel_error", "residual_metric",
                  "accepted_at_eps_r0", "n_s", "n_sd", "n_w", "store_hash",
                  "t_basis", "t_solve", "t_total")
SUMMARY_COLUMNS = ("method", "n_r", "count", "median_rel_error", "p10_rel_error",
                   "p90_rel_error", "median_t_total")


def shadow_compare(config: RunConfig, out_dir=None):
    """Evaluate every configured (method, n_r) pair before each full-order solve.

    The optimization itself is driven by the full-order model only, so all
    reduced variants see identical snapshot data at every query.

    Returns ``(rows, summary)``.
    """
    problem = config.build_problem()
    cfg = dataclasses.replace(config, method="hdm")
    rows = []
    pending = []

    def before_hdm(ev: Evaluator, mu, q):
        pending.clear()
        if q <= config.warmup_hdm_evals:
            return
        h = ev.store.state_hash()
        for method in config.shadow_methods:
            for n_r in config.shadow_nr:
                t0 = time.perf_counter()
                att = attempt_rom(problem, ev.store, method, mu, int(n_r), config.c,
                                  config.reorthonormalize)
                pending.append({
                    "query": q, "method": method, "n_r": int(n_r), "n_r_used": att.basis.n_r,
                    "rom": att.rom, "residual_metric": att.residual_metric,
                    "accepted_at_eps_r0": att.residual_metric <= config.eps_r0,
                    "n_s": ev.store.n_s, "n_sd": ev.store.n_sd, "n_w": att.weights.n_w,
                    "store_hash": h, "t_basis": att.t_basis, "t_solve": att.t_solve,
                    "t_total": time.perf_counter() - t0,
                })

    class ShadowEvaluator(Evaluator):
        def run_query(self, mu):
            n_before = self.n_e
            e = super().run_query(mu)
            if self.n_e > n_before:
                for row in pending:
                    row["rel_error"] = relative_error(e.hdm, row.pop("rom"),
                                                      self.store.time_weights, problem.E)
                    rows.append(row)
                pending.clear()
            return e

    ev = ShadowEvaluator(cfg, problem, collect_sensitivities="weighted-deriv" in config.shadow_methods,
                         max_queries=config.max_queries, before_hdm=before_hdm)
    try:
        outer_loop(ev, problem.mu_init, volume_constraint_for(problem), problem.bounds,
                   cfg.schedule())
    except QueryBudgetExhausted:
        pass
    summary = summarize(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(out / "shadow.csv", rows, SHADOW_COLUMNS)
        write_records(out / "summary.csv", summary, SUMMARY_COLUMNS)
        write_records(out / "queries.csv", ev.records)
    return rows, summary


def summarize(rows) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["method"], r["n_r"]), []).append(r)
    out = []
    for (method, n_r), rs in sorted(groups.items()):
        err = np.array([r["rel_error"] for r in rs], float)
        t = np.array([r["t_total"] for r in rs], float)
        out.append({
            "method": method, "n_r": n_r, "count": len(rs),
            "median_rel_error": float(np.median(err)),
            "p10_rel_error": float(np.percentile(err, 10)),
            "p90_rel_error": float(np.percentile(err, 90)),
            "median_t_total": float(np.median(t)),
        })
    return out
