"""Reconstruction algorithms: cross-relation systems, OMP, alternating
dictionary calibration, truncated power iteration, exhaustive support
search, the minimum-eigenvector solver, and pairwise source stitching."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .errors import AmbiguityError, BudgetExceededError, PreconditionError
from .sampling import FrequencyGrid, MeasurementSet, ZGrid
from .signals import ComplexSequence, align_up_to_shift_scale

__all__ = [
    "CrossRelationSystem",
    "RecoveryResult",
    "OmpResult",
    "ExhaustiveSearchResult",
    "SupportSolution",
    "RelativeAmbiguity",
    "build_cross_relation",
    "omp",
    "nb_omp",
    "bdc",
    "tpi",
    "exhaustive_search",
    "nonsparse_eigen",
    "relative_ambiguity_from_overlap",
    "pairwise_source_recovery",
    "refine_on_support",
    "result_to_json",
    "result_from_json",
]


@dataclass(frozen=True)
class CrossRelationSystem:
    """The homogeneous system eliminating the source from a channel pair.

    ``B = [diag(y2) @ Abar, -diag(y1) @ Abar]`` annihilates the stacked true
    filter vector for noiseless consistent measurements; ``Abar`` is the
    evaluation matrix restricted to the first m_x columns.
    """

    B: np.ndarray
    a_bar: np.ndarray
    a_full: np.ndarray
    ks: tuple
    m_x: int
    y1: np.ndarray
    y2: np.ndarray
    grid: object = None

    @property
    def n_measurements(self) -> int:
        return self.B.shape[0]

    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.B, 2))


def build_cross_relation(
    mset: MeasurementSet, m_x: int, channels: tuple = (0, 1)
) -> CrossRelationSystem:
    """Assemble the cross-relation system from two channels sharing one grid set."""
    n1, n2 = channels
    grid = mset.grid
    ks1 = grid.per_channel_sets[n1]
    ks2 = grid.per_channel_sets[n2]
    if ks1 != ks2:
        raise PreconditionError("cross relation requires identical index sets on both channels")
    a_full = grid.eval_matrix(n1, 2 * m_x - 1)
    a_bar = a_full[:, :m_x]
    y1 = mset.per_channel[n1]
    y2 = mset.per_channel[n2]
    b = np.hstack([y2[:, None] * a_bar, -(y1[:, None] * a_bar)])
    return CrossRelationSystem(
        B=b, a_bar=a_bar, a_full=a_full, ks=ks1, m_x=m_x, y1=y1, y2=y2, grid=grid
    )


# ---------------------------------------------------------------------------
# Orthogonal matching pursuit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OmpResult:
    coefficients: np.ndarray
    support: tuple
    converged: bool


def omp(a: np.ndarray, y: np.ndarray, sparsity: int) -> OmpResult:
    """Greedy sparse solve: ``sparsity`` correlation-maximizing column picks,
    each followed by a least-squares refit on the accumulated support."""
    a = np.asarray(a)
    y = np.asarray(y, dtype=complex).ravel()
    col_norms = np.linalg.norm(a, axis=0)
    if np.any(col_norms == 0):
        raise PreconditionError("all dictionary columns must be non-zero")
    x = np.zeros(a.shape[1], dtype=complex)
    ynorm = np.linalg.norm(y)
    if ynorm == 0:
        return OmpResult(x, (), True)
    selected: list[int] = []
    residual = y
    coef = np.zeros(0, dtype=complex)
    for _ in range(sparsity):
        corr = np.abs(a.conj().T @ residual) / col_norms
        if selected:
            corr[selected] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= 1e-14 * ynorm:
            break  # residual already in the span; no informative column left
        selected.append(j)
        coef, *_ = np.linalg.lstsq(a[:, selected], y, rcond=None)
        residual = y - a[:, selected] @ coef
    x[selected] = coef
    converged = len(selected) == sparsity or np.linalg.norm(residual) <= 1e-12 * ynorm
    return OmpResult(x, tuple(sorted(selected)), converged)


# ---------------------------------------------------------------------------
# Recovery results
# ---------------------------------------------------------------------------


@dataclass
class RecoveryResult:
    """Filter estimates plus optional source estimates and solver metadata."""

    filters: list
    source_spectrum: np.ndarray | None = None
    source_ks: tuple | None = None
    source_time: ComplexSequence | None = None
    iterations: int = 0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)


def _filters_from_stack(gamma: np.ndarray, m_x: int) -> list:
    return [ComplexSequence(gamma[:m_x]), ComplexSequence(gamma[m_x:])]


def _block_supports(gamma: np.ndarray, m_x: int, sparsity: int) -> tuple:
    t1 = np.sort(np.argsort(np.abs(gamma[:m_x]))[-sparsity:])
    t2 = np.sort(np.argsort(np.abs(gamma[m_x:]))[-sparsity:])
    return tuple(int(i) for i in t1), tuple(int(i) for i in t2)


def refine_on_support(sys: CrossRelationSystem, supports: tuple) -> np.ndarray:
    """Exact null direction of B restricted to a fixed support pair.

    Given the support sets a solver identified, the smallest right singular
    vector of the restricted columns is the best filter pair on that support;
    it removes the iteration-tolerance residue from the estimate.
    """
    t1, t2 = supports
    cols = list(t1) + [sys.m_x + i for i in t2]
    _, _, vh = np.linalg.svd(sys.B[:, cols])
    gamma = np.zeros(2 * sys.m_x, dtype=complex)
    gamma[cols] = vh[-1].conj()
    return gamma


# ---------------------------------------------------------------------------
# Non-blind OMP
# ---------------------------------------------------------------------------


def nb_omp(
    mset: MeasurementSet, source_spectrum: np.ndarray, sparsity: int, m_x: int
) -> RecoveryResult:
    """Per-channel OMP after dividing out a known source spectrum."""
    grid = mset.grid
    base = grid.per_channel_sets[0]
    for ks in grid.per_channel_sets[1:]:
        if ks != base:
            raise PreconditionError("nb_omp requires one shared index set across channels")
    s_vals = np.asarray(source_spectrum, dtype=complex).ravel()
    if s_vals.size != len(base):
        raise PreconditionError("source spectrum length must match |K|")
    for i, v in enumerate(s_vals):
        if v == 0:
            raise PreconditionError(f"source spectrum vanishes at k={base[i]}")
    a_bar = grid.eval_matrix(0, m_x)
    filters = []
    converged = True
    for y in mset.per_channel:
        res = omp(a_bar, y / s_vals, sparsity)
        filters.append(ComplexSequence(res.coefficients))
        converged &= res.converged
    return RecoveryResult(
        filters=filters,
        source_spectrum=s_vals,
        source_ks=base,
        iterations=1,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Alternating minimization (dictionary calibration)
# ---------------------------------------------------------------------------


def bdc(
    mset: MeasurementSet,
    sparsity: int,
    m_x: int,
    s0: np.ndarray | None = None,
    max_iter: int = 100,
    tol: float = 1e-3,
    polish: bool = True,
) -> RecoveryResult:
    """Alternate sparse coding and source recalibration on Y = diag(s) Abar X.

    Each pass runs OMP on the source-corrected measurements columnwise, then
    updates the source as the row-wise least-squares minimizer of
    ``||Y - diag(s) Abar X||``.  Stops when the sparse iterates move by at
    most ``tol`` in Frobenius norm; a vanishing denominator in the source
    update flags the iterate degenerate and aborts.

    ``polish`` replaces the final two-channel iterate by the exact null
    direction on its support (see ``refine_on_support``); the stopping rule
    alone leaves a residue well above exact-recovery accuracy."""
    grid = mset.grid
    base = grid.per_channel_sets[0]
    for ks in grid.per_channel_sets[1:]:
        if ks != base:
            raise PreconditionError("bdc requires one shared index set across channels")
    y = np.column_stack(mset.per_channel)
    k = y.shape[0]
    s = np.ones(k, dtype=complex) if s0 is None else np.asarray(s0, dtype=complex).copy()
    if s.size != k:
        raise PreconditionError("s0 length must match |K|")
    if np.any(s == 0):
        raise PreconditionError("s0 must be non-vanishing")
    a_bar = grid.eval_matrix(0, m_x)
    x_prev = np.zeros((m_x, y.shape[1]), dtype=complex)
    x = x_prev
    converged = False
    degenerate = False
    it = 0
    for it in range(1, max_iter + 1):
        cols = []
        for j in range(y.shape[1]):
            cols.append(omp(a_bar, y[:, j] / s, sparsity).coefficients)
        x = np.column_stack(cols)
        ax = a_bar @ x
        den = np.sum(np.abs(ax) ** 2, axis=1)
        if np.any(den == 0):
            degenerate = True
            break
        s = np.sum(y * ax.conj(), axis=1) / den
        if np.any(s == 0) or not np.all(np.isfinite(s)):
            degenerate = True
            break
        if np.linalg.norm(x - x_prev) <= tol:
            converged = True
            break
        x_prev = x
    if polish and not degenerate and y.shape[1] == 2 and np.all(np.any(x != 0, axis=0)):
        sys = build_cross_relation(mset, m_x)
        supports = tuple(
            tuple(int(i) for i in np.flatnonzero(x[:, j])) for j in range(2)
        )
        if all(len(t) == sparsity for t in supports):
            gamma = refine_on_support(sys, supports)
            x = np.column_stack([gamma[:m_x], gamma[m_x:]])
            ax = a_bar @ x
            den = np.sum(np.abs(ax) ** 2, axis=1)
            if np.all(den > 0):
                s = np.sum(y * ax.conj(), axis=1) / den
    filters = [ComplexSequence(x[:, j]) for j in range(x.shape[1])]
    return RecoveryResult(
        filters=filters,
        source_spectrum=s,
        source_ks=base,
        iterations=it,
        converged=converged and not degenerate,
        diagnostics={"degenerate": degenerate},
    )


# ---------------------------------------------------------------------------
# Truncated power iteration
# ---------------------------------------------------------------------------


def _project_blockwise(gamma: np.ndarray, m_x: int, sparsity: int) -> np.ndarray:
    out = np.zeros_like(gamma)
    for lo in (0, m_x):
        block = gamma[lo : lo + m_x]
        keep = np.argsort(np.abs(block))[-sparsity:]
        out[lo + keep] = block[keep]
    return out


def tpi(
    sys: CrossRelationSystem,
    sparsity: int,
    gamma0: np.ndarray | None = None,
    beta: float | None = None,
    max_iter: int = 1000,
    tol: float = 1e-3,
    polish: bool = True,
) -> RecoveryResult:
    """Power iteration on ``beta*I - B^H B`` interleaved with blockwise
    hard thresholding, seeking a stacked 2L-sparse near-null vector.

    ``beta`` defaults to the squared spectral norm of B: the shift must
    dominate the spectrum of B^H B or the iteration locks onto the dominant
    singular direction instead of the null space.  The iterate starts from
    per-channel OMP outputs unless given.  ``polish`` replaces the converged
    iterate by the exact null direction on its support, removing the
    stopping-tolerance residue without touching the support decision."""
    b = sys.B
    m_x = sys.m_x
    if beta is None:
        beta = sys.spectral_norm() ** 2
    g = beta * np.eye(2 * m_x, dtype=complex) - b.conj().T @ b
    if gamma0 is None:
        init1 = omp(sys.a_bar, sys.y1, sparsity).coefficients
        init2 = omp(sys.a_bar, sys.y2, sparsity).coefficients
        gamma = np.concatenate([init1, init2])
    else:
        gamma = np.asarray(gamma0, dtype=complex).ravel().copy()
        if gamma.size != 2 * m_x:
            raise PreconditionError("gamma0 must have length 2*m_x")
    nrm = np.linalg.norm(gamma)
    if nrm == 0:
        raise PreconditionError("initial iterate must be non-zero")
    gamma = gamma / nrm
    objective0 = float(np.real(np.vdot(b @ gamma, b @ gamma)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        prev = gamma
        step = g @ gamma
        nrm = np.linalg.norm(step)
        if nrm == 0:
            break
        gamma = step / nrm
        proj = _project_blockwise(gamma, m_x, sparsity)
        nrm = np.linalg.norm(proj)
        if nrm == 0:
            break
        gamma = proj / nrm
        if np.linalg.norm(gamma - prev) <= tol:
            converged = True
            break
    if polish and np.any(gamma[:m_x]) and np.any(gamma[m_x:]):
        gamma = refine_on_support(sys, _block_supports(gamma, m_x, sparsity))
    objective = float(np.real(np.vdot(b @ gamma, b @ gamma)))
    return RecoveryResult(
        filters=_filters_from_stack(gamma, m_x),
        iterations=it,
        converged=converged,
        diagnostics={
            "beta": float(beta),
            "objective_initial": objective0,
            "objective_final": objective,
            "gamma": gamma,
        },
    )


# ---------------------------------------------------------------------------
# Exhaustive support search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupportSolution:
    support1: tuple
    support2: tuple
    gamma: np.ndarray
    sigma_min: float


@dataclass(frozen=True)
class ExhaustiveSearchResult:
    solutions: tuple
    unique_up_to_ambiguity: bool
    b_norm: float
    pairs_tested: int


def exhaustive_search(
    sys: CrossRelationSystem,
    sparsity: int,
    tol: float = 1e-8,
    budget: int = 2_000_000,
    orbit_db: float = -200.0,
    batch: int = 2048,
) -> ExhaustiveSearchResult:
    """Test every L-support pair for a null direction of the restricted B.

    A pair is a solution when the smallest singular value of the restricted
    columns is at most ``tol * ||B||``.  The instance is unique up to the
    shift/scale ambiguity iff all solutions lie in one orbit (checked by
    aligning each candidate against the first one)."""
    m_x = sys.m_x
    n_supports = comb(m_x, sparsity)
    if n_supports * n_supports > budget:
        raise BudgetExceededError(
            f"{n_supports}^2 support pairs exceed budget {budget}; reduce the instance"
        )
    b = sys.B
    b_norm = sys.spectral_norm()
    thresh = tol * b_norm
    supports = list(itertools.combinations(range(m_x), sparsity))
    sup_arr = np.asarray(supports)
    width = 2 * sparsity

    solutions: list[SupportSolution] = []
    pairs_tested = 0
    pair_iter = itertools.product(range(len(supports)), range(len(supports)))
    while True:
        chunk = list(itertools.islice(pair_iter, batch))
        if not chunk:
            break
        i_idx = np.asarray([c[0] for c in chunk])
        j_idx = np.asarray([c[1] for c in chunk])
        cols = np.concatenate([sup_arr[i_idx], sup_arr[j_idx] + m_x], axis=1)  # (b, 2L)
        sub = np.moveaxis(b[:, cols], 1, 0)  # (b, K, 2L)
        if sub.shape[1] < width:
            # fewer rows than columns: every restriction has an exact null
            # direction, so each support pair is a solution
            cand = np.arange(len(chunk))
        else:
            # Cheap exact-superset prefilter: the Gram determinant of the
            # column-normalized submatrix bounds sigma_min^2 from above, so
            # only determinants below the bound-derived threshold need an SVD.
            cn = np.linalg.norm(sub, axis=1, keepdims=True)
            min_cn = float(cn.min())
            if min_cn == 0.0:
                cand = np.arange(len(chunk))
            else:
                gram = np.einsum("bki,bkj->bij", sub.conj() / cn, sub / cn)
                det = np.abs(np.linalg.det(gram))
                det_bound = (width / max(width - 1, 1)) ** (width - 1) * (
                    thresh / min_cn
                ) ** 2
                cand = np.flatnonzero(det <= max(det_bound, 1e-30))
        if cand.size:
            hit = cand
            if sub.shape[1] >= width:
                svals = np.linalg.svd(sub[cand], compute_uv=False)
                hit = cand[np.flatnonzero(svals[:, -1] <= thresh)]
            for h in hit:
                _, s, vh = np.linalg.svd(sub[h])
                gamma = np.zeros(2 * m_x, dtype=complex)
                gamma[cols[h]] = vh[-1].conj()
                sigma = float(s[-1]) if sub.shape[1] >= width else 0.0
                solutions.append(
                    SupportSolution(
                        supports[i_idx[h]], supports[j_idx[h]], gamma, sigma
                    )
                )
        pairs_tested += len(chunk)

    unique = True
    if solutions:
        rep = _filters_from_stack(solutions[0].gamma, m_x)
        rng_shift = (-(m_x - 1), m_x - 1)
        for sol in solutions[1:]:
            cand = _filters_from_stack(sol.gamma, m_x)
            res = align_up_to_shift_scale(rep, cand, rng_shift)
            if res.error_db > orbit_db:
                unique = False
                break
    return ExhaustiveSearchResult(tuple(solutions), unique, b_norm, pairs_tested)


# ---------------------------------------------------------------------------
# Minimum-eigenvector solver (non-sparse filters)
# ---------------------------------------------------------------------------


def nonsparse_eigen(sys: CrossRelationSystem, degenerate_tol: float = 1e-14) -> RecoveryResult:
    """Minimum eigenvector of B^H B, split into the two filter estimates.

    Uniqueness requires ``|K| >= 2*m_x - 1``; a second eigenvalue within
    ``degenerate_tol`` of zero (relative to the largest) marks the null space
    multi-dimensional and the result non-unique.  A genuine second null
    eigenvalue sits at rounding level (~1e-15 relative) while the smallest
    structural eigenvalue stays orders of magnitude above, so the default
    threshold separates the two regimes."""
    bhb = sys.B.conj().T @ sys.B
    w, v = np.linalg.eigh(bhb)
    top = max(float(w[-1]), np.finfo(float).tiny)
    unique = bool(w[1] > degenerate_tol * top) if w.size > 1 else True
    gamma = v[:, 0]
    return RecoveryResult(
        filters=_filters_from_stack(gamma, sys.m_x),
        iterations=1,
        converged=True,
        diagnostics={
            "unique": unique,
            "eigengap_ratio": float(w[1] / top) if w.size > 1 else math.inf,
            "min_eigenvalue": float(w[0]),
            "gamma": gamma,
        },
    )


# ---------------------------------------------------------------------------
# Pairwise source stitching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelativeAmbiguity:
    scale_ratio: complex
    shift_delta: int


def relative_ambiguity_from_overlap(
    pair_a: Sequence[complex],
    pair_b: Sequence[complex],
    k_pair: tuple,
    omega0: float,
    shift_range: tuple,
    phase_tol: float = 1e-6,
) -> RelativeAmbiguity:
    """Resolve the relative scale and integer shift between two source-spectrum
    estimates that overlap at two frequencies.

    With values a_k = rho * e^{j k omega0 dp} * b_k, the ratio across the two
    overlap frequencies isolates e^{j (k2-k1) omega0 dp}; dp is snapped to the
    unique admissible integer and rho read off either frequency.  Multiple
    admissible integers (alias spacing inside the range) raise an ambiguity
    error — the grid designer must prevent that."""
    a1, a2 = complex(pair_a[0]), complex(pair_a[1])
    b1, b2 = complex(pair_b[0]), complex(pair_b[1])
    k1, k2 = int(k_pair[0]), int(k_pair[1])
    if k1 == k2:
        raise PreconditionError("overlap frequencies must be distinct")
    if 0 in (a1, a2, b1, b2):
        raise PreconditionError("overlap values must be non-zero")
    ratio = (a2 / b2) * (b1 / a1)
    ratio_phase = ratio / abs(ratio)
    dk = k2 - k1
    lo, hi = int(shift_range[0]), int(shift_range[1])
    candidates = []
    for p in range(lo, hi + 1):
        residual = abs(np.exp(1j * dk * omega0 * p) - ratio_phase)
        if residual <= phase_tol:
            candidates.append((p, residual))
    if not candidates:
        raise AmbiguityError("no integer shift matches the overlap ratio within tolerance")
    if len(candidates) > 1:
        raise AmbiguityError(
            f"phase ambiguity: shifts {[c[0] for c in candidates]} all match the overlap ratio"
        )
    dp = candidates[0][0]
    scale = a1 / (b1 * np.exp(1j * k1 * omega0 * dp))
    return RelativeAmbiguity(scale_ratio=complex(scale), shift_delta=dp)


def _pair_source_estimate(
    sys: CrossRelationSystem, gamma: np.ndarray
) -> np.ndarray | None:
    """Joint least-squares source values from a solved filter pair."""
    x1 = sys.a_bar @ gamma[: sys.m_x]
    x2 = sys.a_bar @ gamma[sys.m_x :]
    den = np.abs(x1) ** 2 + np.abs(x2) ** 2
    if np.any(den == 0):
        return None
    return (sys.y1 * x1.conj() + sys.y2 * x2.conj()) / den


def _null_certificate(sys: CrossRelationSystem, gamma: np.ndarray, tol: float) -> bool:
    """Whether gamma (unit scale) is a genuine null direction of B."""
    nrm = np.linalg.norm(gamma)
    if nrm == 0 or not np.all(np.isfinite(gamma)):
        return False
    return float(np.linalg.norm(sys.B @ (gamma / nrm))) <= tol * sys.spectral_norm()


def _solve_pair(
    mset: MeasurementSet,
    channels: tuple,
    sparsity: int,
    m_x: int,
    solver: str,
    refine: bool,
    solver_options: dict,
    attempts: int,
    rng: np.random.Generator,
    cert_tol: float = 1e-8,
) -> tuple:
    """Solve one channel pair, retrying with random inits until the estimate
    certifies as a null direction of B (valid whenever |K| meets the
    uniqueness bound, where only orbit members annihilate B)."""
    sys = build_cross_relation(mset, m_x, channels)
    best_gamma = None
    iterations = 0
    for attempt in range(max(attempts, 1)):
        if solver == "tpi":
            opts = dict(solver_options)
            if attempt > 0 and "gamma0" not in opts:
                opts["gamma0"] = rng.standard_normal(2 * m_x) + 1j * rng.standard_normal(
                    2 * m_x
                )
            res = tpi(sys, sparsity, **opts)
            gamma = res.diagnostics["gamma"]
            iterations += res.iterations
        elif solver == "bdc":
            sub = MeasurementSet(
                _restrict_grid(mset.grid, channels),
                (mset.per_channel[channels[0]], mset.per_channel[channels[1]]),
                circular=mset.circular,
            )
            opts = dict(solver_options)
            if attempt > 0 and "s0" not in opts:
                opts["s0"] = np.exp(2j * math.pi * rng.uniform(size=sys.n_measurements))
            res = bdc(sub, sparsity, m_x, **opts)
            gamma = np.concatenate([f.to_array(0, m_x) for f in res.filters])
            iterations += res.iterations
        elif solver == "exhaustive":
            res = exhaustive_search(sys, sparsity, **solver_options)
            if not res.solutions:
                return sys, None, iterations, False
            gamma = res.solutions[0].gamma
            iterations += 1
            if not res.unique_up_to_ambiguity:
                return sys, gamma, iterations, False
        else:
            raise PreconditionError(f"unknown pair solver '{solver}'")
        if gamma is None or not np.all(np.isfinite(gamma)) or np.linalg.norm(gamma) == 0:
            continue
        if refine:
            gamma = refine_on_support(sys, _block_supports(gamma, m_x, sparsity))
        if best_gamma is None:
            best_gamma = gamma
        if _null_certificate(sys, gamma, cert_tol):
            return sys, gamma, iterations, True
        if solver == "exhaustive":
            break
    return sys, best_gamma, iterations, best_gamma is not None and _null_certificate(
        sys, best_gamma, cert_tol
    )


def _restrict_grid(grid, channels: tuple):
    sets = tuple(grid.per_channel_sets[n] for n in channels)
    if isinstance(grid, ZGrid):
        return ZGrid(grid.z0, sets, grid.bar_m, grid.certified)
    return FrequencyGrid(grid.omega0, sets, grid.bar_m, grid.certified)


def pairwise_source_recovery(
    mset: MeasurementSet,
    sparsity: int,
    m_x: int,
    m_s: int,
    solver: str = "tpi",
    refine: bool = True,
    solver_options: dict | None = None,
    residual_tol: float = 1e-8,
    attempts: int = 25,
    rng: np.random.Generator | None = None,
) -> RecoveryResult:
    """Recover source and all filters from pairwise-overlapping grids.

    Channels (0,1), (2,3), ... form pairs sharing an index set; consecutive
    pairs overlap at two frequencies.  Each pair is solved blindly on its own,
    the two overlap samples fix each pair's relative scale and shift, and the
    stitched source spectrum is inverted through the M_s-column Vandermonde
    system.  If the stitched frame carries a residual global shift the
    inversion would be inconsistent, so admissible integer shifts are searched
    and the solution re-anchored before inversion.  Channels left over after
    pairing are solved non-blindly from the stitched spectrum.

    Iterative pair solvers restart from random initializations (up to
    ``attempts``) until the estimate certifies as a null direction of the
    pair's cross-relation matrix; at the uniqueness bound only orbit members
    annihilate it, so the certificate is sound.
    """
    if not isinstance(mset.grid, FrequencyGrid):
        raise PreconditionError("pairwise recovery requires a Fourier grid")
    grid = mset.grid
    omega0 = grid.omega0
    n = mset.n_channels
    n_pairs = n // 2
    if n_pairs < 1:
        raise PreconditionError("pairwise recovery needs at least two channels")
    solver_options = dict(solver_options or {})
    if rng is None:
        rng = np.random.default_rng(0)
    k_needed = min(2 * sparsity * sparsity, 2 * m_x - 1)

    pair_sets = []
    for r in range(n_pairs):
        ks_a = grid.per_channel_sets[2 * r]
        ks_b = grid.per_channel_sets[2 * r + 1]
        if ks_a != ks_b:
            raise PreconditionError(f"pair {r}: channels must share one index set")
        if len(ks_a) < k_needed:
            raise PreconditionError(
                f"pair {r}: needs at least min(2L^2, 2M_x-1) = {k_needed} measurements"
            )
        pair_sets.append(ks_a)
    for r in range(n_pairs - 1):
        if len(set(pair_sets[r]) & set(pair_sets[r + 1])) < 2:
            raise PreconditionError(
                f"pairs {r} and {r + 1} must overlap in at least two frequencies"
            )

    filters: list[ComplexSequence | None] = [None] * n
    stitched: dict[int, complex] = {}
    total_iters = 0
    diagnostics: dict = {"pair_shifts": [], "pair_scales": []}

    prev_values: dict[int, complex] = {}
    for r in range(n_pairs):
        chans = (2 * r, 2 * r + 1)
        sys, gamma, iters, ok = _solve_pair(
            mset, chans, sparsity, m_x, solver, refine, solver_options, attempts, rng
        )
        total_iters += iters
        if not ok:
            return RecoveryResult(
                filters=[f for f in filters if f is not None],
                converged=False,
                iterations=total_iters,
                diagnostics={"reason": f"pair {r} solver failed", **diagnostics},
            )
        s_est = _pair_source_estimate(sys, gamma)
        if s_est is None:
            return RecoveryResult(
                filters=[f for f in filters if f is not None],
                converged=False,
                iterations=total_iters,
                diagnostics={"reason": f"pair {r} degenerate source estimate", **diagnostics},
            )
        pair_filters = _filters_from_stack(gamma, m_x)
        pair_values = dict(zip(pair_sets[r], s_est))
        if r == 0:
            scale, dp = 1.0 + 0j, 0
        else:
            overlap = sorted(set(pair_sets[r - 1]) & set(pair_sets[r]))[:2]
            try:
                rel = relative_ambiguity_from_overlap(
                    [prev_values[k] for k in overlap],
                    [pair_values[k] for k in overlap],
                    (overlap[0], overlap[1]),
                    omega0,
                    shift_range=(-(m_x - 1), m_x - 1),
                )
            except (AmbiguityError, PreconditionError) as exc:
                return RecoveryResult(
                    filters=[f for f in filters if f is not None],
                    converged=False,
                    iterations=total_iters,
                    diagnostics={"reason": f"pair {r} alignment failed: {exc}", **diagnostics},
                )
            scale, dp = rel.scale_ratio, rel.shift_delta
        diagnostics["pair_scales"].append(scale)
        diagnostics["pair_shifts"].append(dp)
        corrected = {
            k: scale * np.exp(1j * k * omega0 * dp) * v for k, v in pair_values.items()
        }
        filters[2 * r] = pair_filters[0].scale(1.0 / scale).shift(dp)
        filters[2 * r + 1] = pair_filters[1].scale(1.0 / scale).shift(dp)
        mism = [
            abs(corrected[k] - stitched[k])
            for k in corrected
            if k in stitched
        ]
        diagnostics.setdefault("overlap_mismatch", []).extend(mism)
        for k, v in corrected.items():
            stitched.setdefault(k, v)
        prev_values = corrected

    ks_sorted = sorted(stitched)
    if len(ks_sorted) < m_s:
        raise PreconditionError(
            f"stitched coverage {len(ks_sorted)} is below the source length {m_s}"
        )
    vals = np.asarray([stitched[k] for k in ks_sorted])
    k_arr = np.asarray(ks_sorted, dtype=float)
    a_src = np.exp(-1j * omega0 * np.outer(k_arr, np.arange(m_s)))

    def residual_for(shift: int) -> tuple:
        v = vals * np.exp(-1j * omega0 * k_arr * shift)
        c, *_ = np.linalg.lstsq(a_src, v, rcond=None)
        return float(np.linalg.norm(a_src @ c - v) / np.linalg.norm(v)), c

    best_shift = 0
    best_res, best_c = residual_for(0)
    if best_res > residual_tol:
        for p in range(1, m_x):
            for cand in (p, -p):
                res, c = residual_for(cand)
                if res < best_res:
                    best_res, best_c, best_shift = res, c, cand
                if best_res <= residual_tol:
                    break
            if best_res <= residual_tol:
                break
    diagnostics["source_shift"] = best_shift
    diagnostics["source_residual"] = best_res
    aligned = best_res <= residual_tol
    if best_shift != 0:
        vals = vals * np.exp(-1j * omega0 * k_arr * best_shift)
        stitched = dict(zip(ks_sorted, vals))
        filters = [f.shift(-best_shift) if f is not None else None for f in filters]

    # leftover channels: non-blind on the stitched spectrum
    for ch in range(2 * n_pairs, n):
        ks = grid.per_channel_sets[ch]
        if len(ks) < 2 * sparsity or any(k not in stitched for k in ks):
            raise PreconditionError(
                f"channel {ch} needs >= 2L measurements inside the stitched coverage"
            )
        s_here = np.asarray([stitched[k] for k in ks])
        if np.any(s_here == 0):
            return RecoveryResult(
                filters=[f for f in filters if f is not None],
                converged=False,
                iterations=total_iters,
                diagnostics={"reason": f"channel {ch} stitched spectrum vanishes", **diagnostics},
            )
        res = omp(grid.eval_matrix(ch, m_x), mset.per_channel[ch] / s_here, sparsity)
        filters[ch] = ComplexSequence(res.coefficients)

    return RecoveryResult(
        filters=filters,
        source_spectrum=vals,
        source_ks=tuple(ks_sorted),
        source_time=ComplexSequence(best_c) if best_c is not None else None,
        iterations=total_iters,
        converged=aligned,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_F = "%.17g"


def _triples(seq: ComplexSequence) -> list:
    return [
        [int(m), float(v.real), float(v.imag)]
        for m, v in zip(range(seq.start, seq.stop), seq.values)
    ]


def result_to_json(result: RecoveryResult) -> str:
    doc = {
        "filters": [_triples(f) for f in result.filters],
        "iterations": result.iterations,
        "converged": result.converged,
    }
    if result.source_spectrum is not None:
        ks = result.source_ks or tuple(range(len(result.source_spectrum)))
        doc["source_spectrum"] = [
            [int(k), float(v.real), float(v.imag)]
            for k, v in zip(ks, result.source_spectrum)
        ]
    if result.source_time is not None:
        doc["source_time"] = _triples(result.source_time)
    diag = {
        k: v
        for k, v in result.diagnostics.items()
        if isinstance(v, (int, float, str, bool))
    }
    if diag:
        doc["diagnostics"] = diag
    return json.dumps(doc, indent=2, sort_keys=True)


def _seq_from_triples(triples: list) -> ComplexSequence:
    if not triples:
        return ComplexSequence(np.zeros(0))
    start = min(int(t[0]) for t in triples)
    stop = max(int(t[0]) for t in triples) + 1
    vals = np.zeros(stop - start, dtype=complex)
    for m, re, im in triples:
        vals[int(m) - start] = complex(re, im)
    return ComplexSequence(vals, start)


def result_from_json(text: str) -> RecoveryResult:
    doc = json.loads(text)
    result = RecoveryResult(
        filters=[_seq_from_triples(t) for t in doc["filters"]],
        iterations=doc.get("iterations", 0),
        converged=doc.get("converged", True),
        diagnostics=doc.get("diagnostics", {}),
    )
    if "source_spectrum" in doc:
        rows = doc["source_spectrum"]
        result.source_ks = tuple(int(r[0]) for r in rows)
        result.source_spectrum = np.asarray([complex(r[1], r[2]) for r in rows])
    if "source_time" in doc:
        result.source_time = _seq_from_triples(doc["source_time"])
    return result
