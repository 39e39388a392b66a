"""Shared instance builders and oracles for the test suite."""

import numpy as np

from cmbd import (
    ChannelEnsemble,
    ComplexSequence,
    ExplicitSamples,
    FourierGaussianMixture,
    FrequencyGrid,
    coprimeness_check,
    consecutive_universal_grid,
    measure_fourier,
    random_sparse_filter,
)


def gaussian_mixture_source(m: int) -> FourierGaussianMixture:
    """The reference two-bump spectral source on an M-point grid."""
    return FourierGaussianMixture(((4.0, m / 2.0, 0.001), (1.0, 2.0 * m / 3.0, 0.01)), m)


def random_sequence(rng, length, complex_valued=True) -> ComplexSequence:
    v = rng.standard_normal(length)
    if complex_valued:
        v = v + 1j * rng.standard_normal(length)
    return ComplexSequence(v)


def coprime_sparse_pair(sparsity, m_x, rng):
    while True:
        f1 = random_sparse_filter(sparsity, m_x, rng)
        f2 = random_sparse_filter(sparsity, m_x, rng)
        if coprimeness_check(f1.to_sequence(), f2.to_sequence()).coprime:
            return f1, f2


def circular_instance(sparsity, m_x, m, k, rng, start=1):
    """Coprime sparse pair driven by the reference spectral source, measured
    on the first k DFT bins starting at ``start``."""
    f1, f2 = coprime_sparse_pair(sparsity, m_x, rng)
    ens = ChannelEnsemble(gaussian_mixture_source(m), (f1, f2), period=m)
    grid = consecutive_universal_grid(k, m, start=start)
    return ens, measure_fourier(ens, grid)


def pairwise_instance(sparsity, m_x, m_s, k, n_channels, rng, overlap=2, start=1):
    """Linear-mode ensemble with pairwise-overlapping consecutive grids."""
    filters = []
    for _ in range(n_channels // 2):
        filters += list(coprime_sparse_pair(sparsity, m_x, rng))
    n_pairs = n_channels // 2
    union = (n_pairs - 1) * (k - overlap) + k
    bar_m = max(2 * m_x - 1, m_s, start + union - 1)
    sets = []
    for r in range(n_pairs):
        ks = tuple(range(start + r * (k - overlap), start + r * (k - overlap) + k))
        sets += [ks, ks]
    grid = FrequencyGrid(2 * np.pi / bar_m, tuple(sets), bar_m, certified=True)
    while True:
        samples = (rng.standard_normal(m_s) + 1j * rng.standard_normal(m_s)) / np.sqrt(2)
        ens = ChannelEnsemble(ExplicitSamples(samples, m_s), tuple(filters))
        mset = measure_fourier(ens, grid)
        if mset.a4_ok:
            return ens, mset


def null_split_pair(a_bar, support, rng):
    """Construct two distinct L-sparse vectors with identical measurements.

    Draws a null vector of the column-restricted matrix on a 2L support and
    splits it in two; both halves map to the same image under a_bar, which is
    the mechanism behind non-identifiability below 2L measurements.
    """
    cols = a_bar[:, list(support)]
    _, _, vh = np.linalg.svd(cols)
    v = vh[-1].conj()
    half = len(support) // 2
    m_x = a_bar.shape[1]
    x = np.zeros(m_x, dtype=complex)
    x_alt = np.zeros(m_x, dtype=complex)
    x[list(support[:half])] = v[:half]
    x_alt[list(support[half:])] = -v[half:]
    return x, x_alt


def ambiguous_instance(sparsity, m_x, rng, start=1):
    """An instance with two non-equivalent solutions at |K| = 2L - 1.

    Each channel filter is one half of a null split, so swapping in the other
    halves yields a second consistent solution outside the shift/scale orbit.
    Returns (measurement set, truth pair, alternative pair).
    """
    k = 2 * sparsity - 1
    bar_m = 2 * m_x - 1
    grid = consecutive_universal_grid(k, bar_m, start=start)
    a_bar = grid.eval_matrix(0, m_x)
    while True:
        sup1 = tuple(int(i) for i in np.sort(rng.choice(m_x, 2 * sparsity, replace=False)))
        sup2 = tuple(int(i) for i in np.sort(rng.choice(m_x, 2 * sparsity, replace=False)))
        x1, x1_alt = null_split_pair(a_bar, sup1, rng)
        x2, x2_alt = null_split_pair(a_bar, sup2, rng)
        seqs = [ComplexSequence(v) for v in (x1, x1_alt, x2, x2_alt)]
        if any(len(s.support()) != sparsity for s in seqs):
            continue
        if not coprimeness_check(seqs[0], seqs[2]).coprime:
            continue
        from cmbd import MeasurementSet

        y1 = a_bar @ x1  # delta source: Y_n = X_n on the grid
        y2 = a_bar @ x2
        mset = MeasurementSet(grid, (y1, y2))
        return mset, (seqs[0], seqs[2]), (seqs[1], seqs[3])
