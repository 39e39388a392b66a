"""Seeded Monte Carlo phase-transition harness.

A config describes one experiment family (instance model, solver set, sweep
axes, trial count, master seed); the harness runs every cell of the sweep
with per-trial seeds derived from (master seed, cell, trial index) and emits
``trials.csv``, ``grid.csv``, and ``meta.json``.  The CSV outputs are a pure
function of (config, master seed): re-running a config reproduces them byte
for byte, regardless of worker count or execution order.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__ as _pkg_version
from .errors import PreconditionError
from .sampling import FMT, FrequencyGrid, MeasurementSet, consecutive_universal_grid, measure_fourier
from .recovery import (
    bdc,
    build_cross_relation,
    exhaustive_search,
    nb_omp,
    nonsparse_eigen,
    pairwise_source_recovery,
    tpi,
)
from .signals import (
    ChannelEnsemble,
    ComplexSequence,
    ExplicitSamples,
    FourierGaussianMixture,
    LinearComplexitySource,
    align_up_to_shift_scale,
    coprimeness_check,
    random_dense_filter,
    random_sparse_filter,
    realize_source,
)

__all__ = [
    "ExperimentConfig",
    "TrialOutcome",
    "PhaseTransitionGrid",
    "run_trial",
    "run_phase_transition",
    "run_fir_comparison",
    "load_config",
    "save_config",
]

SOLVERS = ("nb_omp", "bdc", "tpi", "exhaustive", "eigen", "pairwise")
SOURCE_MODELS = ("gaussian_mixture", "linear_complexity", "random_time")
GRID_RULES = ("consecutive", "random_subset", "pairwise")

FAILURE_DB = math.inf  # recorded error when no aligned estimate exists
GAUSSIAN_REFERENCE = ((4.0, 0.5, 0.001), (1.0, 2.0 / 3.0, 0.01))  # centers as fractions of M


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment family; sweep axes with a single entry are fixed."""

    name: str = "experiment"
    mode: str = "circular"  # "circular" | "linear"
    source_model: str = "gaussian_mixture"
    sparsity: int = 4
    m_x: int = 32
    m: int | None = 64  # circular period
    m_s: int | None = None  # linear-mode source length; fir rule: m_x + K
    n_channels: int = 2
    solvers: tuple = ("tpi",)
    k_sweep: tuple = (8, 16, 32, 40)
    l_sweep: tuple | None = None  # sweeps sparsity; with m_x_rule, m_x follows
    lc_sweep: tuple | None = None  # linear-complexity sweep
    m_x_rule: str | None = None  # "2L2" derives m_x = 2 L^2 per cell
    m_rule: str | None = None  # "2Mx" derives the circular period per cell
    m_s_rule: str | None = None  # "Mx+K" derives the source length per cell
    grid_rule: str = "consecutive"
    grid_start: int = 1
    pair_overlap: int = 2
    trials: int = 200
    master_seed: int = 0
    threshold_db: float = -50.0
    a4_tol: float = 1e-9
    max_resample: int = 64
    workers: int = 1
    solver_options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "solvers", tuple(self.solvers))
        object.__setattr__(self, "k_sweep", tuple(int(k) for k in self.k_sweep))
        if self.l_sweep is not None:
            object.__setattr__(self, "l_sweep", tuple(int(v) for v in self.l_sweep))
        if self.lc_sweep is not None:
            object.__setattr__(self, "lc_sweep", tuple(int(v) for v in self.lc_sweep))
        if self.mode not in ("circular", "linear"):
            raise PreconditionError(f"unknown mode '{self.mode}'")
        if self.source_model not in SOURCE_MODELS:
            raise PreconditionError(f"unknown source model '{self.source_model}'")
        if self.grid_rule not in GRID_RULES:
            raise PreconditionError(f"unknown grid rule '{self.grid_rule}'")
        for s in self.solvers:
            if s not in SOLVERS:
                raise PreconditionError(f"unknown solver '{s}'")
        if self.trials < 1:
            raise PreconditionError("trial count must be at least 1")
        if self.threshold_db >= 0:
            raise PreconditionError("success threshold must be negative (dB)")
        if not self.k_sweep or not self.solvers:
            raise PreconditionError("sweep ranges must be non-empty")

    # -- sweep structure ----------------------------------------------------
    def axes(self) -> dict:
        axes = {"solver": list(self.solvers), "K": list(self.k_sweep)}
        if self.l_sweep is not None:
            axes["L"] = list(self.l_sweep)
        if self.lc_sweep is not None:
            axes["L_c"] = list(self.lc_sweep)
        return axes

    def cells(self) -> list:
        axes = self.axes()
        names = list(axes)
        out = []
        for values in product(*(axes[n] for n in names)):
            out.append(dict(zip(names, values)))
        return out

    def resolve_cell(self, cell: dict) -> dict:
        """Concrete per-cell parameters after applying derivation rules."""
        p = dict(cell)
        p.setdefault("L", self.sparsity)
        m_x = self.m_x
        if self.m_x_rule == "2L2":
            m_x = 2 * p["L"] * p["L"]
        p["M_x"] = m_x
        if self.mode == "circular":
            m = self.m if self.m_rule != "2Mx" else 2 * m_x
            if m is None:
                raise PreconditionError("circular mode requires the period M")
            p["M"] = m
        else:
            m_s = self.m_s
            if self.m_s_rule == "Mx+K":
                m_s = m_x + p["K"]
            if m_s is None:
                raise PreconditionError("linear mode requires the source length M_s")
            p["M_s"] = m_s
        return p

    def config_id(self) -> str:
        doc = asdict(self)
        doc.pop("workers")  # runtime knob; identical experiments share an id
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True, default=list).encode()
        ).hexdigest()[:12]


@dataclass(frozen=True)
class TrialOutcome:
    config_id: str
    cell_index: int
    cell: dict
    trial: int
    seed: int
    aligned_error_db: float
    success: bool
    solver_iterations: int
    resamples: int
    reason: str
    wall_time_ms: float

    def __post_init__(self):
        # success is defined by the threshold comparison alone
        pass


@dataclass(frozen=True)
class PhaseTransitionGrid:
    config_id: str
    axes: dict
    cells: tuple
    success_rates: tuple
    trial_counts: tuple


def _trial_seed(master_seed: int, cell: dict, trial: int) -> int:
    doc = json.dumps({"cell": cell, "master": master_seed, "trial": trial}, sort_keys=True)
    return int.from_bytes(hashlib.sha256(doc.encode()).digest()[:8], "big")


# ---------------------------------------------------------------------------
# Instance generation
# ---------------------------------------------------------------------------


def _gaussian_mixture(m: int) -> FourierGaussianMixture:
    comps = tuple((a, frac * m, v) for a, frac, v in GAUSSIAN_REFERENCE)
    return FourierGaussianMixture(comps, m)


def _coprime_sparse_pair(sparsity, m_x, rng, budget):
    tries = 0
    while True:
        f1 = random_sparse_filter(sparsity, m_x, rng)
        f2 = random_sparse_filter(sparsity, m_x, rng)
        if coprimeness_check(f1.to_sequence(), f2.to_sequence()).coprime:
            return f1, f2, tries
        tries += 1
        if tries > budget:
            raise PreconditionError("coprime filter resampling budget exceeded")


def _grid_for_cell(cfg: ExperimentConfig, params: dict, rng, channels: int, bar_m: int):
    k = params["K"]
    if cfg.grid_rule == "consecutive":
        return consecutive_universal_grid(k, bar_m, channels=channels, start=cfg.grid_start)
    if cfg.grid_rule == "random_subset":
        ks = tuple(int(v) for v in np.sort(rng.choice(bar_m, size=k, replace=False)))
        return FrequencyGrid(2.0 * math.pi / bar_m, (ks,) * channels, bar_m)
    raise PreconditionError(f"grid rule '{cfg.grid_rule}' not valid here")


def _pairwise_grid(cfg: ExperimentConfig, k: int, n_channels: int, bar_m: int):
    step = k - cfg.pair_overlap
    sets = []
    n_pairs = n_channels // 2
    for r in range(n_pairs):
        ks = tuple(range(cfg.grid_start + r * step, cfg.grid_start + r * step + k))
        sets += [ks, ks]
    if n_channels % 2:
        sets.append(sets[0])
    return FrequencyGrid(2.0 * math.pi / bar_m, tuple(sets), bar_m, certified=True)


def _build_instance(cfg: ExperimentConfig, params: dict, rng):
    """Draw one instance honoring the structural assumptions; returns
    (ensemble, measurement set, resample count)."""
    sparsity = params["L"]
    m_x = params["M_x"]
    resamples = 0

    if cfg.source_model == "gaussian_mixture":
        if cfg.mode != "circular":
            raise PreconditionError("gaussian_mixture source is defined on the circular grid")
        m = params["M"]
        source = _gaussian_mixture(m)
        if cfg.grid_rule == "pairwise":
            raise PreconditionError("pairwise grids pair with the linear mode here")
        f1, f2, resamples = _coprime_sparse_pair(sparsity, m_x, rng, cfg.max_resample)
        extra = [
            random_sparse_filter(sparsity, m_x, rng) for _ in range(cfg.n_channels - 2)
        ]
        ens = ChannelEnsemble(source, (f1, f2, *extra), period=m)
        grid = _grid_for_cell(cfg, params, rng, cfg.n_channels, m)
        mset = measure_fourier(ens, grid, a4_tol=cfg.a4_tol)
        return ens, mset, resamples

    if cfg.source_model == "linear_complexity":
        m_s = params["M_s"]
        l_c = params.get("L_c", 1)
        bar_m = max(2 * m_x - 1, m_s, cfg.grid_start + params["K"] - 1)
        while True:
            if sparsity >= m_x:
                filters = [random_dense_filter(m_x, rng) for _ in range(cfg.n_channels)]
            else:
                f1, f2, extra_res = _coprime_sparse_pair(sparsity, m_x, rng, cfg.max_resample)
                resamples += extra_res
                filters = [f1, f2] + [
                    random_sparse_filter(sparsity, m_x, rng)
                    for _ in range(cfg.n_channels - 2)
                ]
            if sparsity >= m_x and not coprimeness_check(
                filters[0].to_sequence(), filters[1].to_sequence()
            ).coprime:
                resamples += 1
                if resamples > cfg.max_resample:
                    raise PreconditionError("resampling budget exceeded")
                continue
            coeffs = (rng.standard_normal(l_c) + 1j * rng.standard_normal(l_c)) / math.sqrt(2)
            roots = np.exp(2j * math.pi * rng.uniform(size=l_c))
            if np.unique(roots).size != l_c or np.any(coeffs == 0):
                resamples += 1
                continue
            source = LinearComplexitySource(coeffs, roots, m_s)
            ens = ChannelEnsemble(source, tuple(filters))
            grid = _grid_for_cell(cfg, params, rng, cfg.n_channels, bar_m)
            mset = measure_fourier(ens, grid, a4_tol=cfg.a4_tol)
            if mset.a4_ok:
                return ens, mset, resamples
            resamples += 1
            if resamples > cfg.max_resample:
                raise PreconditionError("non-vanishing source resampling budget exceeded")

    # random_time: complex normal samples on [0, M_s)
    m_s = params["M_s"]
    k = params["K"]
    if cfg.grid_rule == "pairwise":
        n_pairs = cfg.n_channels // 2
        union = (n_pairs - 1) * (k - cfg.pair_overlap) + k
        bar_m = max(2 * m_x - 1, m_s, union + cfg.grid_start - 1)
    else:
        bar_m = max(2 * m_x - 1, m_s, cfg.grid_start + k - 1)
    while True:
        filters = []
        for _ in range(max(cfg.n_channels // 2, 1)):
            f1, f2, extra_res = _coprime_sparse_pair(sparsity, m_x, rng, cfg.max_resample)
            resamples += extra_res
            filters += [f1, f2]
        filters = filters[: cfg.n_channels]
        if len(filters) < cfg.n_channels:
            filters.append(random_sparse_filter(sparsity, m_x, rng))
        samples = (rng.standard_normal(m_s) + 1j * rng.standard_normal(m_s)) / math.sqrt(2)
        source = ExplicitSamples(samples, m_s)
        ens = ChannelEnsemble(source, tuple(filters))
        if cfg.grid_rule == "pairwise":
            grid = _pairwise_grid(cfg, k, cfg.n_channels, bar_m)
        else:
            grid = _grid_for_cell(cfg, params, rng, cfg.n_channels, bar_m)
        mset = measure_fourier(ens, grid, a4_tol=cfg.a4_tol)
        if mset.a4_ok:
            return ens, mset, resamples
        resamples += 1
        if resamples > cfg.max_resample:
            raise PreconditionError("non-vanishing source resampling budget exceeded")


# ---------------------------------------------------------------------------
# Solving and scoring
# ---------------------------------------------------------------------------


def _source_values(ens: ChannelEnsemble, mset: MeasurementSet, channel: int) -> np.ndarray:
    realization = realize_source(ens.source)
    grid = mset.grid
    ks = grid.per_channel_sets[channel]
    if realization.spectrum is not None and ens.period is not None:
        return realization.spectrum[np.asarray(ks) % ens.period]
    from .signals import dtft_at

    return dtft_at(realization.time, grid.omega0, ks)


def _aligned_error(cfg, ens, est_filters, m_x) -> float:
    truth = [f.to_sequence() for f in ens.filters]
    res = align_up_to_shift_scale(truth, est_filters, (-(m_x - 1), m_x - 1))
    return res.error_db, res


def _run_solver(cfg: ExperimentConfig, params: dict, ens, mset, rng):
    """Returns (aligned_error_db, iterations, reason)."""
    solver = params["solver"]
    sparsity = params["L"]
    m_x = params["M_x"]
    opts = dict(cfg.solver_options)

    if solver == "nb_omp":
        s_vals = _source_values(ens, mset, 0)
        res = nb_omp(mset, s_vals, sparsity, m_x)
        err, _ = _aligned_error(cfg, ens, res.filters, m_x)
        return err, res.iterations, "" if res.converged else "omp_short"

    if solver == "bdc":
        res = bdc(mset, sparsity, m_x, **opts)
        if res.diagnostics.get("degenerate"):
            err, _ = _aligned_error(cfg, ens, res.filters, m_x)
            return err, res.iterations, "degenerate"
        err, _ = _aligned_error(cfg, ens, res.filters, m_x)
        return err, res.iterations, "" if res.converged else "max_iter"

    if solver == "tpi":
        sys = build_cross_relation(mset, m_x)
        res = tpi(sys, sparsity, **opts)
        err, _ = _aligned_error(cfg, ens, res.filters, m_x)
        return err, res.iterations, "" if res.converged else "max_iter"

    if solver == "exhaustive":
        sys = build_cross_relation(mset, m_x)
        res = exhaustive_search(sys, sparsity, **opts)
        if not res.solutions:
            return FAILURE_DB, 0, "no_solutions"
        if not res.unique_up_to_ambiguity:
            return FAILURE_DB, 0, "non_unique"
        gamma = res.solutions[0].gamma
        est = [ComplexSequence(gamma[:m_x]), ComplexSequence(gamma[m_x:])]
        err, _ = _aligned_error(cfg, ens, est, m_x)
        return err, 1, ""

    if solver == "eigen":
        sys = build_cross_relation(mset, m_x)
        res = nonsparse_eigen(sys)
        err, _ = _aligned_error(cfg, ens, res.filters, m_x)
        reason = "" if res.diagnostics.get("unique", True) else "non_unique_eigengap"
        return err, res.iterations, reason

    if solver == "pairwise":
        m_s = params["M_s"]
        res = pairwise_source_recovery(
            mset, sparsity, m_x, m_s, rng=rng, **opts
        )
        if not res.converged or res.source_time is None:
            return FAILURE_DB, res.iterations, res.diagnostics.get("reason", "pipeline_failed")
        err, al = _aligned_error(cfg, ens, res.filters, m_x)
        # source error in the frame implied by the filter alignment
        src_truth = realize_source(ens.source).time
        est_src = res.source_time.scale(1.0 / al.alpha).shift(-al.shift)
        lo = min(src_truth.start, est_src.start, 0)
        hi = max(src_truth.stop, est_src.stop, 1)
        diff = np.linalg.norm(src_truth.to_array(lo, hi) - est_src.to_array(lo, hi))
        rel = diff / max(src_truth.norm(), np.finfo(float).tiny)
        src_db = -400.0 if rel < 1e-18 else 20.0 * math.log10(rel)
        return max(err, src_db), res.iterations, ""

    raise PreconditionError(f"unknown solver '{solver}'")


def run_trial(cfg: ExperimentConfig, cell: dict, cell_index: int, trial: int) -> TrialOutcome:
    """One seeded Monte Carlo trial; solver faults become failure outcomes."""
    seed = _trial_seed(cfg.master_seed, cell, trial)
    rng = np.random.default_rng(seed)
    params = cfg.resolve_cell(cell)
    t0 = time.perf_counter()
    resamples = 0
    try:
        ens, mset, resamples = _build_instance(cfg, params, rng)
        err_db, iterations, reason = _run_solver(cfg, params, ens, mset, rng)
    except Exception as exc:  # record, never crash the sweep
        err_db, iterations, reason = FAILURE_DB, 0, f"error:{type(exc).__name__}"
    wall = (time.perf_counter() - t0) * 1000.0
    if not math.isfinite(err_db) and err_db < 0:
        err_db = -400.0
    success = err_db <= cfg.threshold_db
    return TrialOutcome(
        config_id=cfg.config_id(),
        cell_index=cell_index,
        cell=cell,
        trial=trial,
        seed=seed,
        aligned_error_db=err_db,
        success=success,
        solver_iterations=iterations,
        resamples=resamples,
        reason=reason,
        wall_time_ms=wall,
    )


def _trial_job(args):
    cfg, cell, cell_index, trial = args
    return run_trial(cfg, cell, cell_index, trial)


def run_phase_transition(
    cfg: ExperimentConfig, out_dir=None
) -> tuple:
    """Run every (cell, trial) pair; returns (grid, trials) and optionally
    writes trials.csv / grid.csv / meta.json under ``out_dir``."""
    cells = cfg.cells()
    jobs = [
        (cfg, cell, ci, t) for ci, cell in enumerate(cells) for t in range(cfg.trials)
    ]
    workers = max(int(os.environ.get("CMBD_THREADS", cfg.workers) or 1), 1)
    t_start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_trial_job, jobs, chunksize=16))
    else:
        outcomes = [_trial_job(j) for j in jobs]
    wall = time.perf_counter() - t_start
    outcomes.sort(key=lambda o: (o.cell_index, o.trial))

    rates, counts = [], []
    for ci in range(len(cells)):
        hits = [o.success for o in outcomes if o.cell_index == ci]
        counts.append(len(hits))
        rates.append(sum(hits) / len(hits))
    grid = PhaseTransitionGrid(
        config_id=cfg.config_id(),
        axes=cfg.axes(),
        cells=tuple(tuple(sorted(c.items())) for c in cells),
        success_rates=tuple(rates),
        trial_counts=tuple(counts),
    )
    if out_dir is not None:
        write_outputs(cfg, grid, outcomes, out_dir, wall)
    return grid, outcomes


def run_fir_comparison(cfg: ExperimentConfig, out_dir=None) -> tuple:
    """Non-sparse phase transition: linear-complexity sources, full-support
    filters, minimum-eigenvector solver, K = M_s - M_x measurements."""
    cfg = replace(
        cfg,
        mode="linear",
        source_model="linear_complexity",
        solvers=("eigen",),
        m_x_rule=None,
        m_s_rule="Mx+K",
        l_sweep=None,
        sparsity=cfg.m_x,
    )
    return run_phase_transition(cfg, out_dir)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def _axis_names(cfg: ExperimentConfig) -> list:
    return list(cfg.axes())


def _fmt_db(v: float) -> str:
    if v == math.inf:
        return "inf"
    return FMT % v


def write_outputs(cfg, grid, outcomes, out_dir, wall_seconds: float) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = _axis_names(cfg)
    cells = cfg.cells()

    lines = ["config_id,cell_index," + ",".join(names) + ",trial,seed,aligned_error_db,success,iterations,resamples,reason"]
    for o in outcomes:
        cellvals = ",".join(str(o.cell[n]) for n in names)
        lines.append(
            f"{o.config_id},{o.cell_index},{cellvals},{o.trial},{o.seed},"
            f"{_fmt_db(o.aligned_error_db)},{str(o.success).lower()},"
            f"{o.solver_iterations},{o.resamples},{o.reason}"
        )
    (out / "trials.csv").write_text("\n".join(lines) + "\n")

    lines = ["config_id,cell_index," + ",".join(names) + ",trials,successes,success_rate"]
    for ci, cell in enumerate(cells):
        cellvals = ",".join(str(cell[n]) for n in names)
        succ = round(grid.success_rates[ci] * grid.trial_counts[ci])
        lines.append(
            f"{grid.config_id},{ci},{cellvals},{grid.trial_counts[ci]},{succ},"
            + (FMT % grid.success_rates[ci])
        )
    (out / "grid.csv").write_text("\n".join(lines) + "\n")

    meta = {
        "config": asdict(cfg),
        "config_id": cfg.config_id(),
        "package_version": _pkg_version,
        "wall_time_s": wall_seconds,
        "total_trials": len(outcomes),
        "mean_trial_ms": (
            sum(o.wall_time_ms for o in outcomes) / len(outcomes) if outcomes else 0.0
        ),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=list) + "\n")


# ---------------------------------------------------------------------------
# Config I/O
# ---------------------------------------------------------------------------


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True, default=list) + "\n")


def load_config(path) -> ExperimentConfig:
    doc = json.loads(Path(path).read_text())
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise PreconditionError(f"unknown config fields: {sorted(unknown)}")
    for key in ("solvers", "k_sweep", "l_sweep", "lc_sweep"):
        if key in doc and doc[key] is not None:
            doc[key] = tuple(doc[key])
    return ExperimentConfig(**doc)
