"""Frequency grids, full-spark certification, Fourier/z-domain measurement,
and the sum-of-sincs time-domain acquisition chain."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace
from math import comb
from typing import Iterable, Union

import numpy as np

from .errors import BudgetExceededError, ConditioningError, PreconditionError
from .signals import (
    ChannelEnsemble,
    ComplexSequence,
    SourceRealization,
    dtft_at,
    linear_convolve,
    realize_source,
    z_eval,
)

__all__ = [
    "FrequencyGrid",
    "ZGrid",
    "VandermondeOperator",
    "SosKernel",
    "MeasurementSet",
    "SparkCertificate",
    "consecutive_universal_grid",
    "certify_full_spark",
    "measure_fourier",
    "sos_impulse",
    "acquire_via_kernel",
    "z_grid",
    "write_measurements",
    "read_measurements",
]

FMT = "%.17g"  # decimal round-trip format for all numeric I/O


@dataclass(frozen=True)
class FrequencyGrid:
    """Sampling interval omega0 with per-channel integer index sets.

    ``bar_m`` is the alias bound: the nodes ``e^{j m omega0}`` for
    m in [0, bar_m) must be pairwise distinct.  ``certified`` records whether
    the per-channel sets are known universal (full-spark partial Vandermonde),
    either analytically (consecutive construction) or by enumeration.
    """

    omega0: float
    per_channel_sets: tuple
    bar_m: int
    certified: bool = False

    def __post_init__(self):
        sets = tuple(tuple(int(k) for k in ks) for ks in self.per_channel_sets)
        object.__setattr__(self, "per_channel_sets", sets)
        if not 0.0 < self.omega0 < 2.0 * math.pi:
            raise PreconditionError("omega0 must lie in (0, 2*pi)")
        if self.bar_m < 1:
            raise PreconditionError("bar_m must be positive")
        if not sets:
            raise PreconditionError("at least one channel index set required")
        # alias-free nodes over [0, bar_m)
        steps = np.arange(1, self.bar_m)
        if steps.size and np.min(np.abs(np.exp(1j * self.omega0 * steps) - 1.0)) < 1e-12:
            raise PreconditionError("omega0 aliases within [0, bar_m)")
        for ks in sets:
            if len(ks) > self.bar_m:
                raise PreconditionError("|K_n| must not exceed bar_m")
            if len(set(ks)) != len(ks):
                raise PreconditionError("index sets must have distinct entries")
            nodes = np.exp(-1j * self.omega0 * np.asarray(ks))
            if len(ks) > 1:
                d = np.abs(nodes[:, None] - nodes[None, :])
                if np.min(d[~np.eye(len(ks), dtype=bool)]) < 1e-12:
                    raise PreconditionError("index set aliases: repeated node e^{-j k omega0}")

    @property
    def n_channels(self) -> int:
        return len(self.per_channel_sets)

    def eval_generators(self, channel: int) -> np.ndarray:
        """Row seeds g_k such that sum_m x[m] g_k^m evaluates the DTFT at k*omega0."""
        ks = np.asarray(self.per_channel_sets[channel])
        return np.exp(-1j * self.omega0 * ks)

    def eval_matrix(self, channel: int, columns: int) -> np.ndarray:
        return VandermondeOperator(self.eval_generators(channel), columns).matrix


@dataclass(frozen=True)
class ZGrid:
    """z-domain sampling grid: points ``z0**p`` for per-channel exponent sets."""

    z0: complex
    per_channel_sets: tuple
    bar_m: int
    certified: bool = False

    def __post_init__(self):
        sets = tuple(tuple(int(k) for k in ks) for ks in self.per_channel_sets)
        object.__setattr__(self, "per_channel_sets", sets)
        object.__setattr__(self, "z0", complex(self.z0))
        if self.z0 == 1:
            raise PreconditionError("z0 must differ from 1")
        if self.z0 == 0:
            raise PreconditionError("z0 must be non-zero")
        if not sets:
            raise PreconditionError("at least one channel exponent set required")
        for ks in sets:
            if len(set(ks)) != len(ks):
                raise PreconditionError("exponent sets must have distinct entries")

    @property
    def n_channels(self) -> int:
        return len(self.per_channel_sets)

    def points(self, channel: int) -> np.ndarray:
        return np.power(self.z0, np.asarray(self.per_channel_sets[channel]))

    def eval_generators(self, channel: int) -> np.ndarray:
        return np.power(self.z0, -np.asarray(self.per_channel_sets[channel]))

    def eval_matrix(self, channel: int, columns: int) -> np.ndarray:
        return VandermondeOperator(self.eval_generators(channel), columns).matrix


Grid = Union[FrequencyGrid, ZGrid]


@dataclass(frozen=True)
class VandermondeOperator:
    """Row-seeded Vandermonde operator: entry (r, c) is generators[r]**c."""

    generators: np.ndarray
    columns: int

    def __post_init__(self):
        g = np.asarray(self.generators, dtype=complex).ravel()
        g.setflags(write=False)
        object.__setattr__(self, "generators", g)
        if self.columns < 1:
            raise PreconditionError("columns must be positive")
        if g.size < 1:
            raise PreconditionError("at least one generator required")

    @property
    def rows(self) -> int:
        return self.generators.size

    @property
    def matrix(self) -> np.ndarray:
        return self.generators[:, None] ** np.arange(self.columns)[None, :]


def consecutive_universal_grid(
    count: int, bar_m: int, channels: int = 2, start: int = 1
) -> FrequencyGrid:
    """The standard universal construction: omega0 = 2*pi/bar_m with a run of
    ``count`` consecutive indices per channel.

    Any run of consecutive integers is universal on an alias-free grid: each
    square submatrix is a column-rescaled Vandermonde matrix in the distinct
    nodes, hence invertible.  The grid is therefore certified analytically.
    """
    if count > bar_m:
        raise PreconditionError(f"count {count} exceeds bar_m {bar_m}")
    if count < 1:
        raise PreconditionError("count must be positive")
    ks = tuple(range(start, start + count))
    return FrequencyGrid(2.0 * math.pi / bar_m, (ks,) * channels, bar_m, certified=True)


# ---------------------------------------------------------------------------
# Full-spark certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparkCertificate:
    """Outcome of exhaustive submatrix certification.

    ``full_spark`` is None when the combinatorial budget was exceeded and no
    verdict was reached (never a silent pass).
    """

    full_spark: bool | None
    witness: tuple | None
    submatrices_checked: int
    budget_exceeded: bool = False

    @property
    def status(self) -> str:
        if self.budget_exceeded:
            return "uncertified"
        return "full_spark" if self.full_spark else "not_full_spark"


def certify_full_spark(
    op: VandermondeOperator,
    tol: float = 1e-10,
    budget: int = 2_000_000,
    batch: int = 4096,
) -> SparkCertificate:
    """Certify full spark by enumerating every rows-by-rows column submatrix.

    A submatrix passes when its smallest singular value exceeds ``tol`` times
    its largest.  The first failing column set (in lexicographic order) is
    returned as a witness.
    """
    r, c = op.rows, op.columns
    if r > c:
        raise PreconditionError("certification requires rows <= columns")
    total = comb(c, r)
    if total > budget:
        return SparkCertificate(None, None, 0, budget_exceeded=True)
    mat = op.matrix
    checked = 0
    combos_iter = itertools.combinations(range(c), r)
    while True:
        chunk = list(itertools.islice(combos_iter, batch))
        if not chunk:
            break
        idx = np.asarray(chunk)  # (b, r)
        sub = mat[:, idx]  # (r, b, r)
        sub = np.moveaxis(sub, 1, 0)  # (b, r, r)
        s = np.linalg.svd(sub, compute_uv=False)
        bad = s[:, -1] <= tol * s[:, 0]
        if np.any(bad):
            first = int(np.flatnonzero(bad)[0])
            checked += first + 1
            return SparkCertificate(False, tuple(chunk[first]), checked)
        checked += len(chunk)
    return SparkCertificate(True, None, checked)


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasurementSet:
    """Per-channel spectral measurements attached to their grid.

    ``a4_violations`` lists (channel, k) pairs where the source magnitude was
    at or below the non-vanishing tolerance; downstream solvers may treat the
    set as a warning flag.
    """

    grid: Grid
    per_channel: tuple
    a4_violations: tuple = ()
    circular: bool = False

    def __post_init__(self):
        vals = tuple(np.asarray(v, dtype=complex).ravel() for v in self.per_channel)
        for v in vals:
            v.setflags(write=False)
        object.__setattr__(self, "per_channel", vals)
        if len(vals) != self.grid.n_channels:
            raise PreconditionError("one measurement vector per grid channel required")
        for n, v in enumerate(vals):
            if v.size != len(self.grid.per_channel_sets[n]):
                raise PreconditionError(f"channel {n}: measurement count must match |K_n|")

    @property
    def n_channels(self) -> int:
        return len(self.per_channel)

    @property
    def a4_ok(self) -> bool:
        return not self.a4_violations

    def matrix(self, channels: Iterable[int] | None = None) -> np.ndarray:
        """Column-stacked measurements for channels sharing one index set."""
        chans = list(channels) if channels is not None else list(range(self.n_channels))
        base = self.grid.per_channel_sets[chans[0]]
        for n in chans[1:]:
            if self.grid.per_channel_sets[n] != base:
                raise PreconditionError("matrix form requires identical index sets")
        return np.column_stack([self.per_channel[n] for n in chans])


def _source_values_on(
    realization: SourceRealization, grid: Grid, channel: int, circular: bool
) -> np.ndarray:
    ks = grid.per_channel_sets[channel]
    if circular:
        table = realization.spectrum
        if table is None:
            # DFT samples of the time realization (support inside [0, M))
            return dtft_at(realization.time, grid.omega0, ks)
        m = realization.grid_length
        return table[np.asarray(ks) % m]
    if isinstance(grid, ZGrid):
        return z_eval(realization.time, grid.points(channel))
    return dtft_at(realization.time, grid.omega0, ks)


def measure_fourier(
    ensemble: ChannelEnsemble, grid: Grid, a4_tol: float = 1e-9
) -> MeasurementSet:
    """Acquire per-channel spectral measurements Y_n = S * X_n on the grid.

    Linear mode requires the alias bound to cover both the cross-convolution
    window and the source, ``bar_m >= max(2*M_x - 1, M_s)``; circular mode
    requires the DFT grid of the ensemble period (bar_m == M, omega0 ==
    2*pi/M).  Channels where the source magnitude dips to ``a4_tol`` or below
    are flagged, not rejected, so degenerate instances remain observable.
    """
    if grid.n_channels != ensemble.n_channels:
        raise PreconditionError("grid and ensemble channel counts differ")
    circular = ensemble.period is not None
    if circular:
        if isinstance(grid, ZGrid):
            raise PreconditionError("circular ensembles require a Fourier grid")
        m = ensemble.period
        if grid.bar_m != m or abs(grid.omega0 - 2.0 * math.pi / m) > 1e-12:
            raise PreconditionError("circular mode requires omega0 = 2*pi/M and bar_m = M")
    else:
        need = max(2 * ensemble.max_filter_len - 1, ensemble.source_length)
        if grid.bar_m < need:
            raise PreconditionError(
                f"alias bound bar_m={grid.bar_m} below max(2*M_x-1, M_s)={need}"
            )
    realization = realize_source(ensemble.source)
    per_channel = []
    violations = []
    for n, filt in enumerate(ensemble.filters):
        s_vals = _source_values_on(realization, grid, n, circular)
        seq = filt.to_sequence()
        if isinstance(grid, ZGrid):
            x_vals = z_eval(seq, grid.points(n))
        else:
            x_vals = dtft_at(seq, grid.omega0, grid.per_channel_sets[n])
        per_channel.append(s_vals * x_vals)
        for i, k in enumerate(grid.per_channel_sets[n]):
            if abs(s_vals[i]) <= a4_tol:
                violations.append((n, k))
    return MeasurementSet(grid, tuple(per_channel), tuple(violations), circular)


# ---------------------------------------------------------------------------
# Sum-of-sincs kernel acquisition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SosKernel:
    """Discrete sum-of-sincs FIR kernel over index set ``ks`` at interval omega0.

    The impulse response has length ``length``; acquiring a signal supported
    on [0, M) requires ``length >= M + |ks| - 1`` so the selected output
    window carries at least |ks| valid samples.
    """

    ks: tuple
    omega0: float
    length: int

    def __post_init__(self):
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        if not 0.0 < self.omega0 < 2.0 * math.pi:
            raise PreconditionError("omega0 must lie in (0, 2*pi)")
        if not self.ks or len(set(self.ks)) != len(self.ks):
            raise PreconditionError("ks must be a non-empty set of distinct integers")
        if self.length < len(self.ks):
            raise PreconditionError("kernel length must cover at least |ks| taps")


def sos_impulse(kernel: SosKernel) -> ComplexSequence:
    """Impulse response h[m] = sum_{k in ks} e^{j k omega0 m} on [0, length)."""
    m = np.arange(kernel.length)
    ks = np.asarray(kernel.ks)
    h = np.exp(1j * kernel.omega0 * np.outer(m, ks)).sum(axis=1)
    return ComplexSequence(h)


def acquire_via_kernel(
    y: ComplexSequence,
    kernel: SosKernel,
    signal_length: int | None = None,
    rows: Iterable[int] | None = None,
    cond_max: float = 1e12,
) -> np.ndarray:
    """Recover the Fourier coefficients {Y(e^{j k omega0})} from time samples.

    The signal is filtered by the kernel; on the window ``[M-1, length)`` the
    filtered output is exactly ``sum_k e^{j k omega0 m} Y(e^{j k omega0})``,
    so the coefficients follow by solving the Vandermonde system on that
    window.  All window rows are used (least squares) unless ``rows`` selects
    a subset of at least |ks| of them.
    """
    m_len = int(signal_length) if signal_length is not None else max(y.stop, 0)
    if not y.is_zero and (y.start < 0 or y.stop > m_len):
        raise PreconditionError(f"signal support must lie inside [0, {m_len})")
    kcount = len(kernel.ks)
    if kernel.length < m_len + kcount - 1:
        raise PreconditionError(
            f"kernel length {kernel.length} below M + |K| - 1 = {m_len + kcount - 1}"
        )
    window = range(m_len - 1, kernel.length)
    if rows is None:
        sample_idx = np.asarray(list(window))
    else:
        sample_idx = np.asarray(sorted(int(r) for r in rows))
        if np.any(sample_idx < m_len - 1) or np.any(sample_idx >= kernel.length):
            raise PreconditionError("selected rows must lie in the valid window [M-1, M_h)")
        if sample_idx.size < kcount:
            raise PreconditionError("need at least |ks| sample rows")
    ybar = linear_convolve(y, sos_impulse(kernel))
    vals = ybar.to_array(int(sample_idx[0]), int(sample_idx[-1]) + 1)[
        sample_idx - sample_idx[0]
    ]
    v = np.exp(1j * kernel.omega0 * np.outer(sample_idx, np.asarray(kernel.ks)))
    s = np.linalg.svd(v, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > cond_max:
        cond = math.inf if s[-1] == 0 else s[0] / s[-1]
        raise ConditioningError(f"sample-window Vandermonde condition number {cond:.3e}")
    coeffs, *_ = np.linalg.lstsq(v, vals, rcond=None)
    return coeffs


def z_grid(z0: complex, pks: Iterable[int], columns: int) -> VandermondeOperator:
    """Vandermonde operator seeded by z0**p_k; full spark when the exponent
    set is universal (verify with ``certify_full_spark`` at small sizes)."""
    z0 = complex(z0)
    if z0 == 1:
        raise PreconditionError("z0 must differ from 1")
    if z0 == 0:
        raise PreconditionError("z0 must be non-zero")
    p = np.asarray(list(pks), dtype=int)
    if p.size == 0 or np.unique(p).size != p.size:
        raise PreconditionError("pks must be a non-empty set of distinct integers")
    return VandermondeOperator(np.power(z0, p), columns)


# ---------------------------------------------------------------------------
# Serialization: CSV body with a JSON header line
# ---------------------------------------------------------------------------


def write_measurements(mset: MeasurementSet, path) -> None:
    """CSV rows (channel, k, re, im) preceded by one JSON header comment."""
    grid = mset.grid
    header = {
        "bar_m": grid.bar_m,
        "certified": grid.certified,
        "circular": mset.circular,
        "a4_violations": [list(v) for v in mset.a4_violations],
    }
    if isinstance(grid, ZGrid):
        header["mode"] = "z"
        header["z0"] = [grid.z0.real, grid.z0.imag]
    else:
        header["mode"] = "fourier"
        header["omega0"] = grid.omega0
    lines = ["# " + json.dumps(header, sort_keys=True), "channel,k,re,im"]
    for n, vals in enumerate(mset.per_channel):
        for k, v in zip(grid.per_channel_sets[n], vals):
            lines.append(f"{n},{k}," + FMT % v.real + "," + FMT % v.imag)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_measurements(path) -> MeasurementSet:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise PreconditionError("missing JSON header line")
        header = json.loads(first[2:])
        fh.readline()  # column header
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            n, k, re, im = line.split(",")
            rows.append((int(n), int(k), float(re), float(im)))
    n_channels = max(r[0] for r in rows) + 1
    sets, vals = [], []
    for n in range(n_channels):
        chan = [r for r in rows if r[0] == n]
        sets.append(tuple(r[1] for r in chan))
        vals.append(np.asarray([complex(r[2], r[3]) for r in chan]))
    if header["mode"] == "z":
        grid: Grid = ZGrid(
            complex(header["z0"][0], header["z0"][1]),
            tuple(sets),
            header["bar_m"],
            header["certified"],
        )
    else:
        grid = FrequencyGrid(header["omega0"], tuple(sets), header["bar_m"], header["certified"])
    return MeasurementSet(
        grid,
        tuple(vals),
        tuple(tuple(v) for v in header.get("a4_violations", [])),
        header.get("circular", False),
    )
