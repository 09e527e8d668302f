import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diqa import kspace, pgm
from diqa.dataset import normalize_image
from diqa.kspace import MotionTrace


def rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def phantom(seed, size=64):
    return kspace.generate_phantom(kspace.PhantomSpec(size, seed=seed))


class TestFFT:
    @pytest.mark.parametrize("n", [1, 2, 8, 64])
    def test_matches_numpy_unitary(self, n, rng):
        x = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
        np.testing.assert_allclose(kspace.fft(x), np.fft.fft(x, norm="ortho"), atol=1e-12)
        np.testing.assert_allclose(kspace.ifft(x), np.fft.ifft(x, norm="ortho"), atol=1e-12)

    def test_fft2_matches_numpy(self, rng):
        x = rng.normal(size=(32, 64))
        np.testing.assert_allclose(kspace.fft2(x), np.fft.fft2(x, norm="ortho"), atol=1e-12)

    def test_round_trip(self, rng):
        x = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
        assert np.abs(kspace.ifft2(kspace.fft2(x)) - x).max() < 1e-9

    def test_impulse(self):
        x = np.zeros((64, 64))
        x[0, 0] = 1
        np.testing.assert_allclose(np.abs(kspace.fft2(x)), 1 / 64, atol=1e-15)

    def test_parseval(self, rng):
        x = rng.normal(size=(64, 64))
        e_x, e_k = np.sum(np.abs(x) ** 2), np.sum(np.abs(kspace.fft2(x)) ** 2)
        assert abs(e_x - e_k) / e_x < 1e-9

    @pytest.mark.parametrize("shape", [(6, 8), (8, 12), (3,)])
    def test_non_power_of_two_rejected(self, shape):
        with pytest.raises(ValueError):
            kspace.fft2(np.zeros(shape)) if len(shape) == 2 else kspace.fft(np.zeros(shape))

    def test_signed_frequencies(self):
        assert kspace.signed_frequencies(8).tolist() == [0, 1, 2, 3, -4, -3, -2, -1]


class TestMotion:
    def test_zero_trace_is_identity(self):
        img = phantom(1)
        out = kspace.simulate_motion(img, MotionTrace.constant(64))
        assert np.abs(out - img).max() < 1e-6

    def test_constant_trace_is_circular_shift(self):
        img = phantom(2)
        worst = 0.0
        for dx in range(8):
            for dy in range(8):
                out = kspace.simulate_motion(img, MotionTrace.constant(64, dx, dy))
                worst = max(worst, np.abs(out - np.roll(img, (dy, dx), axis=(0, 1))).max())
        assert worst < 1e-6

    def test_single_row_substitution_matches_shifted_image_oracle(self, rng):
        img = phantom(3)
        shifts = np.zeros((64, 2))
        # acquisition rows 40.. (signed ky = 8 ... 31) see the object moved by (3, -2)
        shifts[40:] = (3, -2)
        got = kspace.corrupt_kspace(kspace.fft2(img), MotionTrace(shifts))
        clean = np.fft.fft2(img, norm="ortho")
        moved = np.fft.fft2(np.roll(img, (-2, 3), axis=(0, 1)), norm="ortho")
        expected = clean.copy()
        for r in range(40, 64):
            ky = (r - 32) % 64
            expected[ky] = moved[ky]
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_upper_half_step_rms_grows_with_displacement(self):
        means = []
        for dx in (2, 4, 8):
            errs = []
            for seed in range(20):
                img = phantom(seed)
                shifts = np.zeros((64, 2))
                shifts[32:, 0] = dx
                errs.append(rms(img, kspace.simulate_motion(img, MotionTrace(shifts))))
            means.append(np.mean(errs))
        assert means[0] > 0
        assert means == sorted(means)

    def test_rms_non_decreasing_across_severities(self):
        means = []
        for s in (1, 2, 4, 8):
            errs = [rms(phantom(seed), kspace.simulate_motion(phantom(seed), kspace.random_trace(seed, 64, s).scaled_to(s)))
                    for seed in range(20)]
            means.append(np.mean(errs))
        assert means == sorted(means)

    def test_columns_axis_is_transposed_rows(self):
        img = phantom(5)
        trace = kspace.random_trace(5, 64, 3.0)
        a = kspace.simulate_motion(img, trace, phase_axis="columns")
        b = kspace.simulate_motion(img.T, MotionTrace(trace.shifts[:, ::-1])).T
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, kspace.simulate_motion(img, trace))

    def test_output_clamped(self):
        out = kspace.simulate_motion(np.ones((32, 32)), kspace.random_trace(0, 32, 6.0))
        assert out.min() >= 0 and out.max() <= 1

    def test_trace_length_mismatch(self):
        with pytest.raises(ValueError):
            kspace.simulate_motion(phantom(0), MotionTrace.constant(32))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            kspace.simulate_motion(np.zeros((32, 64)), MotionTrace.constant(32))

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            kspace.simulate_motion(phantom(0), MotionTrace.constant(64), phase_axis="slices")


class TestTraces:
    def test_zero_severity(self):
        t = kspace.random_trace(9, 64, 0.0)
        assert not t.shifts.any() and t.severity == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**63 - 1), st.sampled_from([16, 32, 64]), st.floats(0.01, 20))
    def test_bound_and_positivity(self, seed, h, s):
        t = kspace.random_trace(seed, h, s)
        assert len(t) == h
        assert 0 < t.severity <= s + 1e-12
        assert np.array_equal(t.shifts, kspace.random_trace(seed, h, s).shifts)
        # piecewise constant with 1 to 4 movements, starting at rest
        changes = np.count_nonzero(np.any(np.diff(t.shifts, axis=0) != 0, axis=1))
        assert 1 <= changes <= 4 and not t.shifts[0].any()

    def test_severity_definition(self):
        t = MotionTrace(np.array([[3.0, 4.0], [1.0, 0.0]]))
        assert t.severity == 5.0

    def test_scaled_to(self):
        t = kspace.random_trace(1, 64, 3.0).scaled_to(6.5)
        assert t.severity == pytest.approx(6.5, rel=1e-15)

    def test_negative_severity(self):
        with pytest.raises(ValueError):
            kspace.random_trace(0, 64, -1)


class TestSeverityClasses:
    @pytest.mark.parametrize("s, cls", [(0, 2), (1.0, 2), (1.0001, 1), (2.5, 1), (4.0, 1), (4.01, 0), (6, 0)])
    def test_defaults(self, s, cls):
        assert kspace.severity_to_class(s) == cls

    @pytest.mark.parametrize("t", [(2.0, 1.0), (-1.0, 2.0), (3.0, 3.0)])
    def test_invalid_thresholds(self, t):
        with pytest.raises(ValueError):
            kspace.severity_to_class(1.0, t)


class TestPhantom:
    def test_deterministic(self):
        assert phantom(42).tobytes() == phantom(42).tobytes()

    def test_seeds_differ(self):
        for s in range(10):
            a, b = phantom(2 * s), phantom(2 * s + 1)
            assert np.mean(a != b) >= 0.01

    def test_range(self):
        for s in range(5):
            img = phantom(s)
            assert img.min() >= 0 and img.max() <= 1

    def test_min_size(self):
        with pytest.raises(ValueError):
            kspace.PhantomSpec(16)


class TestPGM:
    def test_round_trip(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(5, 7), dtype=np.uint8)
        back = pgm.read_pgm(pgm.write_pgm(tmp_path / "a.pgm", pixels))
        np.testing.assert_array_equal(back, pixels)

    def test_header(self):
        assert pgm.encode(np.zeros((2, 3), np.uint8)).startswith(b"P5\n3 2\n255\n")

    def test_quantize_and_normalize_inverse(self, rng):
        x = rng.random((64, 64))
        assert np.abs(normalize_image(pgm.quantize(x)) - x).max() <= 1 / 510 + 1e-7

    def test_quantize_rounding(self):
        assert pgm.quantize(np.array([0.0, 1.0, 0.5, 127.5 / 255])).tolist() == [0, 255, 128, 128]

    def test_comments_in_header(self):
        data = b"P5\n# made by hand\n2 1\n255\n\x01\x02"
        assert pgm.decode(data).tolist() == [[1, 2]]

    @pytest.mark.parametrize("data", [b"P2\n1 1\n255\n\x00", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00", b"P5\n1"])
    def test_rejects(self, data):
        with pytest.raises(pgm.PGMError):
            pgm.decode(data)
