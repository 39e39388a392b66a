"""Core sequence algebra, generators, coprimeness, and alignment."""

import math

import numpy as np
import pytest

from cmbd import (
    ComplexSequence,
    ExplicitSamples,
    FourierGaussianMixture,
    LinearComplexitySource,
    PreconditionError,
    align_up_to_shift_scale,
    circular_convolve,
    coprimeness_check,
    delta,
    dtft_at,
    linear_convolve,
    random_sparse_filter,
    realize_source,
    z_eval,
)
from cmbd.errors import DomainError

from helpers import random_sequence


class TestComplexSequence:
    def test_canonical_trim(self):
        x = ComplexSequence([0, 0, 1, 2, 0, 3, 0, 0], offset=-1)
        assert x.offset == 1
        assert np.allclose(x.values, [1, 2, 0, 3])
        assert list(x.support()) == [1, 2, 4]

    def test_zero_sequence(self):
        z = ComplexSequence([0, 0, 0], offset=5)
        assert z.is_zero and len(z) == 0 and z.offset == 0

    def test_window_and_at(self):
        x = ComplexSequence([1, 2, 3], offset=2)
        assert x.at(3) == 2
        assert x.at(10) == 0
        assert np.allclose(x.to_array(0, 6), [0, 0, 1, 2, 3, 0])

    def test_shift_scale(self):
        x = ComplexSequence([1, 2])
        assert x.shift(3).offset == 3
        assert np.allclose(x.scale(2j).values, [2j, 4j])


class TestLinearConvolve:
    def test_delta_identity(self):
        x = random_sequence(np.random.default_rng(0), 5)
        assert linear_convolve(delta(0), x).allclose(x)

    def test_forced_example(self):
        a = ComplexSequence([1, 1])
        b = ComplexSequence([1, -1])
        assert np.allclose(linear_convolve(a, b).values, [1, 0, -1])

    def test_matches_dtft_product(self):
        rng = np.random.default_rng(1)
        a = random_sequence(rng, 4)
        b = random_sequence(rng, 3)
        c = linear_convolve(a, b)
        w0 = 2 * math.pi / 16
        ks = range(16)
        lhs = dtft_at(c, w0, ks)
        rhs = dtft_at(a, w0, ks) * dtft_at(b, w0, ks)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))

    def test_offsets_add(self):
        a = ComplexSequence([1, 2], offset=-2)
        b = ComplexSequence([3], offset=5)
        assert linear_convolve(a, b).offset == 3

    def test_zero_input(self):
        assert linear_convolve(ComplexSequence([]), delta()).is_zero

    def test_convolution_theorem_random_lengths(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            la, lb = rng.integers(1, 65), rng.integers(1, 65)
            a = random_sequence(rng, la)
            b = random_sequence(rng, lb)
            c = linear_convolve(a, b)
            w0 = 2 * math.pi / 257
            ks = rng.integers(0, 257, size=8)
            lhs = dtft_at(c, w0, ks)
            rhs = dtft_at(a, w0, ks) * dtft_at(b, w0, ks)
            scale = max(np.max(np.abs(rhs)), 1e-30)
            assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale


class TestCircularConvolve:
    def test_delta_identity(self):
        x = ComplexSequence([1, 2, 3])
        assert circular_convolve(delta(0), x, 8).allclose(x)

    def test_no_wraparound_equals_linear(self):
        rng = np.random.default_rng(2)
        a = random_sequence(rng, 3)
        b = random_sequence(rng, 3)
        assert circular_convolve(a, b, 16).allclose(linear_convolve(a, b))

    def test_cross_term_equals_linear_when_supports_in_half(self):
        # filters inside [0, M/2) keep the cross difference wrap-free
        rng = np.random.default_rng(3)
        m = 16
        x1 = random_sparse_filter(3, m // 2, rng).to_sequence()
        x2 = random_sparse_filter(3, m // 2, rng).to_sequence()
        h1 = random_sparse_filter(3, m // 2, rng).to_sequence()
        h2 = random_sparse_filter(3, m // 2, rng).to_sequence()
        circ = circular_convolve(x1, h2, m).to_array(0, m) - circular_convolve(
            x2, h1, m
        ).to_array(0, m)
        lin = linear_convolve(x1, h2).to_array(0, m) - linear_convolve(x2, h1).to_array(0, m)
        assert np.max(np.abs(circ - lin)) <= 1e-12 * max(np.max(np.abs(lin)), 1.0)

    def test_support_precondition(self):
        with pytest.raises(PreconditionError):
            circular_convolve(ComplexSequence([1], offset=9), delta(0), 8)

    def test_wraparound_reduces(self):
        a = ComplexSequence([1, 1, 1, 1])
        out = circular_convolve(a, a, 4)
        assert np.allclose(out.to_array(0, 4), [4, 4, 4, 4])


class TestSpectralEvaluation:
    def test_dtft_delta(self):
        assert np.allclose(dtft_at(delta(0), 0.3, [0, 1, 5]), [1, 1, 1])

    def test_dtft_shifted_delta(self):
        val = dtft_at(delta(1), math.pi / 2, [1])
        assert abs(val[0] - np.exp(-1j * math.pi / 2)) < 1e-15

    def test_dtft_matches_z_eval_on_circle(self):
        rng = np.random.default_rng(4)
        x = random_sequence(rng, 9)
        w0 = 0.37
        ks = [0, 1, 3, 7]
        zs = np.exp(1j * w0 * np.asarray(ks))
        assert np.allclose(dtft_at(x, w0, ks), z_eval(x, zs), atol=1e-12)

    def test_dtft_domain(self):
        with pytest.raises(PreconditionError):
            dtft_at(delta(0), 0.0, [1])

    def test_z_eval_examples(self):
        assert np.allclose(z_eval(ComplexSequence([1, 1]), [1.0]), [2.0])
        assert np.allclose(z_eval(ComplexSequence([1, 0, -1]), [-1.0]), [0.0])

    def test_z_eval_zero_point(self):
        with pytest.raises(DomainError):
            z_eval(ComplexSequence([1, 1]), [0.0])
        anti = ComplexSequence([2, 1], offset=-1)  # support {-1, 0}
        assert np.allclose(z_eval(anti, [0.0]), [1.0])


class TestSources:
    def test_linear_complexity_constant(self):
        src = LinearComplexitySource([1.0], [1.0], 4)
        out = realize_source(src).time
        assert np.allclose(out.to_array(0, 4), [1, 1, 1, 1])

    def test_gaussian_mixture_reference_values(self):
        m = 64
        spec = FourierGaussianMixture(((4, m / 2, 0.001), (1, 2 * m / 3, 0.01)), m)
        table = realize_source(spec).spectrum
        assert table.shape == (64,)
        assert np.min(np.abs(table)) > 1e-9  # non-vanishing by construction
        k = np.arange(m)
        expect = np.zeros(m)
        for amp, c, v in ((4, 32.0, 0.001), (1, 128.0 / 3.0, 0.01)):
            for p in (-1, 0, 1):
                expect = expect + amp * np.exp(-v * (k - c + p * m) ** 2)
        assert np.allclose(table, expect)
        # clearly non-flat, yet of mild dynamic range
        ratio = np.max(np.abs(table)) / np.min(np.abs(table))
        assert 1.3 <= ratio <= 10.0

    def test_gaussian_mixture_time_matches_table(self):
        spec = FourierGaussianMixture(((2, 8, 0.01),), 16)
        real = realize_source(spec)
        back = np.fft.fft(real.time.to_array(0, 16))
        assert np.allclose(back, real.spectrum, atol=1e-12)

    def test_unit_root_source_spectral_zeros(self):
        # single exponential with unit root: the spectrum vanishes exactly at
        # offsets of 2*pi/M_s from the root's frequency
        m_s = 12
        w1 = 0.71
        src = LinearComplexitySource([1.0], [np.exp(1j * w1)], m_s)
        time = realize_source(src).time
        for p in (1, 2, 5, -3):
            w = w1 + 2 * math.pi * p / m_s
            val = z_eval(time, [np.exp(1j * w)])
            assert abs(val[0]) < 1e-10
        on_root = z_eval(time, [np.exp(1j * w1)])
        assert abs(on_root[0] - m_s) < 1e-9

    def test_explicit_samples_validation(self):
        with pytest.raises(PreconditionError):
            ExplicitSamples(np.ones(5), 4)


class TestRandomSparseFilter:
    def test_full_support(self):
        rng = np.random.default_rng(0)
        f = random_sparse_filter(6, 6, rng)
        assert f.support == tuple(range(6))

    def test_deterministic(self):
        a = random_sparse_filter(4, 32, np.random.default_rng(11))
        b = random_sparse_filter(4, 32, np.random.default_rng(11))
        assert a.support == b.support
        assert np.allclose(a.amplitudes, b.amplitudes)

    def test_amplitude_range(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            f = random_sparse_filter(3, 10, rng)
            mags = np.abs(f.amplitudes)
            assert np.all((mags >= 1.0) & (mags <= 2.0))
            assert np.allclose(f.amplitudes.imag, 0.0)

    def test_complex_flag(self):
        f = random_sparse_filter(4, 16, np.random.default_rng(6), complex_amplitudes=True)
        assert np.any(np.abs(f.amplitudes.imag) > 1e-12)

    def test_support_uniformity_chi_square(self):
        rng = np.random.default_rng(1234)
        m_x, sparsity, draws = 8, 2, 10_000
        counts = np.zeros(m_x)
        for _ in range(draws):
            f = random_sparse_filter(sparsity, m_x, rng)
            for i in f.support:
                counts[i] += 1
        expected = draws * sparsity / m_x
        stat = float(np.sum((counts - expected) ** 2 / expected))
        dof = m_x - 1
        assert stat <= dof + 3.0 * math.sqrt(2.0 * dof)

    def test_sparsity_bound(self):
        with pytest.raises(PreconditionError):
            random_sparse_filter(9, 8, np.random.default_rng(0))


class TestCoprimeness:
    def test_coprime_pair(self):
        assert coprimeness_check(ComplexSequence([1, 1]), ComplexSequence([1, -1])).coprime

    def test_shared_factor_detected(self):
        a = ComplexSequence([1, 1])
        b = linear_convolve(a, ComplexSequence([1, -1]))  # [1, 0, -1]
        rep = coprimeness_check(a, b)
        assert not rep.coprime and rep.shared_zero_count == 1

    def test_leading_zero_factor_ignored(self):
        # z=0 zeros never count: shifted copies stay coprime if the cores are
        a = ComplexSequence([1, 1]).shift(3)
        b = ComplexSequence([1, -1])
        assert coprimeness_check(a, b).coprime

    def test_agrees_with_root_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            f1 = random_sparse_filter(4, 32, rng).to_sequence()
            f2 = random_sparse_filter(4, 32, rng).to_sequence()
            r1 = np.roots(f1.values[::-1]) if len(f1) > 1 else np.array([])
            r2 = np.roots(f2.values[::-1]) if len(f2) > 1 else np.array([])
            if r1.size and r2.size:
                dist = np.min(np.abs(r1[:, None] - r2[None, :]))
            else:
                dist = np.inf
            rep = coprimeness_check(f1, f2)
            if dist > 1e-4:
                assert rep.coprime
            if dist < 1e-12:
                assert not rep.coprime

    def test_zero_rejected(self):
        with pytest.raises(PreconditionError):
            coprimeness_check(ComplexSequence([]), ComplexSequence([1]))


class TestAlignment:
    def test_planted_shift_scale(self):
        rng = np.random.default_rng(8)
        truth = [random_sequence(rng, 6), random_sequence(rng, 4)]
        est = [x.shift(1).scale(2.0) for x in truth]
        res = align_up_to_shift_scale(truth, est, (-5, 5))
        assert res.shift == -1
        assert abs(res.alpha - 0.5) < 1e-12
        assert res.error_db <= -300.0

    def test_identity(self):
        truth = [ComplexSequence([1, 2, 3])]
        res = align_up_to_shift_scale(truth, truth, (-2, 2))
        assert res.shift == 0 and abs(res.alpha - 1) < 1e-12
        assert res.error_db <= -300.0

    def test_small_perturbation_error_level(self):
        rng = np.random.default_rng(9)
        truth = [random_sequence(rng, 16), random_sequence(rng, 16)]
        norm = math.sqrt(sum(x.norm() ** 2 for x in truth))
        est = []
        for x in truth:
            noise = 1e-3 * norm / math.sqrt(2 * 16) * (
                rng.standard_normal(16) + 1j * rng.standard_normal(16)
            ) / math.sqrt(2)
            est.append(ComplexSequence(x.values + noise))
        res = align_up_to_shift_scale(truth, est, (-4, 4))
        assert -63.0 <= res.error_db <= -57.0

    def test_orbit_detector(self):
        rng = np.random.default_rng(10)
        truth = [random_sequence(rng, 5), random_sequence(rng, 7)]
        inside = [x.shift(-2).scale(1.5j) for x in truth]
        outside = [ComplexSequence(x.values + 1e-3) for x in truth]
        assert align_up_to_shift_scale(truth, inside, (-6, 6)).error_db <= -300.0
        assert align_up_to_shift_scale(truth, outside, (-6, 6)).error_db > -300.0

    def test_zero_truth_rejected(self):
        with pytest.raises(PreconditionError):
            align_up_to_shift_scale([ComplexSequence([])], [ComplexSequence([1])], (0, 0))


class TestAmbiguityInvariance:
    def test_orbit_preserves_outputs(self):
        rng = np.random.default_rng(12)
        src = random_sequence(rng, 6)
        filters = [random_sequence(rng, 5), random_sequence(rng, 5)]
        for alpha, m in ((2.0, 1), (0.5 - 1j, -2), (3j, 3)):
            src2 = src.shift(-m).scale(1.0 / alpha)
            for x in filters:
                y = linear_convolve(src, x)
                y2 = linear_convolve(src2, x.shift(m).scale(alpha))
                assert y.allclose(y2, tol=1e-12)

    def test_common_factor_breaks_coprimeness(self):
        # a shared convolution factor of positive degree is always detected
        rng = np.random.default_rng(13)
        h0 = random_sequence(rng, 3)
        x1 = linear_convolve(h0, random_sequence(rng, 4))
        x2 = linear_convolve(h0, random_sequence(rng, 5))
        assert not coprimeness_check(x1, x2).coprime
