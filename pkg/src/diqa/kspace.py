"""Synthetic phantoms and rigid-motion artifacts simulated in k-space.

The Fourier transforms are an iterative radix-2 decimation-in-time FFT with
unitary scaling, so ``ifft2(fft2(x)) == x`` and energy is preserved.

Motion model: k-space row ``r`` of an ``H``-row grid is acquired at time
``r`` and holds signed phase-encode frequency ``r - H // 2``. While that row
is acquired the object sits at the translation ``trace.shifts[r]``, so the row
is replaced by the same row of the translated object's spectrum. A pure
translation only multiplies the spectrum by a phase ramp, which makes the
substitution exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLDS = (1.0, 4.0)


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last(a: np.ndarray, inverse: bool) -> np.ndarray:
    n = a.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = a.shape[:-1]
    out = np.asarray(a, dtype=np.complex128)[..., _bit_reverse(n)]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return out / np.sqrt(n)


def fft(a, axis=-1) -> np.ndarray:
    """Unitary 1-d DFT along ``axis``."""
    return np.moveaxis(_fft_last(np.moveaxis(np.asarray(a), axis, -1), False), -1, axis)


def ifft(a, axis=-1) -> np.ndarray:
    return np.moveaxis(_fft_last(np.moveaxis(np.asarray(a), axis, -1), True), -1, axis)


def fft2(image) -> np.ndarray:
    """Unitary 2-d DFT over the last two axes (1/sqrt(HW) overall)."""
    return fft(fft(image, -1), -2)


def ifft2(kspace) -> np.ndarray:
    return ifft(ifft(kspace, -1), -2)


def signed_frequencies(n: int) -> np.ndarray:
    """Signed frequency of each unshifted DFT bin: 0, 1, ..., n/2-1, -n/2, ..., -1."""
    k = np.arange(n)
    return np.where(k < n // 2, k, k - n)


# ---------------------------------------------------------------------------
# motion traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MotionTrace:
    """Per-phase-encode-row rigid translation, in pixels.

    ``shifts[r] = (dx, dy)`` is the object position while k-space row ``r``
    (acquisition order) is read out.
    """

    shifts: np.ndarray  # (H, 2) float64

    def __post_init__(self):
        s = np.asarray(self.shifts, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 2:
            raise ValueError(f"trace shifts must have shape (H, 2), got {s.shape}")
        object.__setattr__(self, "shifts", s)

    def __len__(self) -> int:
        return len(self.shifts)

    @property
    def severity(self) -> float:
        return float(np.hypot(self.shifts[:, 0], self.shifts[:, 1]).max()) if len(self) else 0.0

    @classmethod
    def constant(cls, height: int, dx: float = 0.0, dy: float = 0.0) -> "MotionTrace":
        return cls(np.tile([dx, dy], (height, 1)))

    def scaled_to(self, severity: float) -> "MotionTrace":
        """Same motion pattern rescaled so its severity equals ``severity``."""
        current = self.severity
        if current == 0.0:
            if severity != 0.0:
                raise ValueError("cannot rescale a motionless trace to a nonzero severity")
            return self
        return MotionTrace(self.shifts * (severity / current))


def random_trace(seed, height: int, severity: float, band=(0.25, 0.75)) -> MotionTrace:
    """Piecewise-constant trace with 1-4 patient movements.

    The object starts at rest; at each movement (a random row boundary inside
    ``band``, given as fractions of the acquisition) it jumps to a new position
    drawn uniformly from the disc of radius ``severity``.
    """
    if severity < 0:
        raise ValueError(f"severity must be >= 0, got {severity}")
    shifts = np.zeros((height, 2))
    if severity == 0:
        return MotionTrace(shifts)
    rng = np.random.default_rng(seed)
    n_events = int(rng.integers(1, 5))
    if not 0 <= band[0] < band[1] <= 1:
        raise ValueError(f"band must satisfy 0 <= lo < hi <= 1, got {band}")
    lo = int(band[0] * height)
    hi = max(lo + 1, int(band[1] * height))
    n_events = min(n_events, hi - lo)
    starts = np.sort(rng.choice(np.arange(lo, hi), size=n_events, replace=False))
    # 1 - u keeps the radius strictly positive
    radius = severity * np.sqrt(1.0 - rng.random(n_events))
    angle = rng.uniform(0.0, 2 * np.pi, n_events)
    for start, r, a in zip(starts, radius, angle):
        shifts[start:] = (r * np.cos(a), r * np.sin(a))
    return MotionTrace(shifts)


def severity_to_class(severity: float, thresholds=DEFAULT_THRESHOLDS) -> int:
    """2 (excellent) up to t1, 1 (diagnostic) up to t2, 0 (non-diagnostic) beyond."""
    t1, t2 = thresholds
    if not 0 <= t1 < t2:
        raise ValueError(f"thresholds must satisfy 0 <= t1 < t2, got {thresholds}")
    if severity <= t1:
        return 2
    if severity <= t2:
        return 1
    return 0


# ---------------------------------------------------------------------------
# corruption
# ---------------------------------------------------------------------------


def corrupt_kspace(kspace: np.ndarray, trace: MotionTrace) -> np.ndarray:
    """Apply per-row translation phase ramps to an unshifted k-space grid."""
    h, w = kspace.shape
    if len(trace) != h:
        raise ValueError(f"trace has {len(trace)} rows, k-space has {h}")
    rows = (np.arange(h) - h // 2) % h  # acquisition index -> unshifted row
    kx = signed_frequencies(w)[None, :]
    ky = signed_frequencies(h)[rows][:, None]
    dx = trace.shifts[:, 0:1]
    dy = trace.shifts[:, 1:2]
    ramp = np.exp(-2j * np.pi * (kx * dx / w + ky * dy / h))
    out = kspace.copy()
    out[rows] = kspace[rows] * ramp
    return out


def simulate_motion(image: np.ndarray, trace: MotionTrace, phase_axis: str = "rows") -> np.ndarray:
    """Magnitude image of ``image`` acquired under ``trace``, clamped to [0, 1].

    ``phase_axis="columns"`` acquires columns instead of rows; ``dx`` then
    still refers to the width axis.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    if phase_axis == "columns":
        swapped = MotionTrace(trace.shifts[:, ::-1])
        return simulate_motion(image.T, swapped).T
    if phase_axis != "rows":
        raise ValueError(f"phase_axis must be 'rows' or 'columns', got {phase_axis!r}")
    if len(trace) != image.shape[0]:
        raise ValueError(f"trace has {len(trace)} rows, image has {image.shape[0]}")
    k = corrupt_kspace(fft2(image), trace)
    return np.clip(np.abs(ifft2(k)), 0.0, 1.0)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    seed: int = 0
    n_ellipses: tuple[int, int] = (3, 7)
    intensity: tuple[float, float] = (0.15, 0.95)
    background: float = 0.02
    noise: float = 0.01

    def __post_init__(self):
        if self.size < 32:
            raise ValueError(f"phantom size must be >= 32, got {self.size}")


def _ellipse(xx, yy, cx, cy, a, b, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_phantom(spec: PhantomSpec) -> np.ndarray:
    """Abdomen-like test image: a body ellipse holding smaller organs, with a
    smooth coil-shading gradient and mild noise. Deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    coords = (np.arange(n) + 0.5) / n * 2 - 1
    xx, yy = np.meshgrid(coords, coords)
    img = np.full((n, n), spec.background)

    body_a = rng.uniform(0.70, 0.88)
    body_b = rng.uniform(0.50, 0.72)
    body_theta = rng.uniform(-0.2, 0.2)
    body = _ellipse(xx, yy, 0.0, 0.0, body_a, body_b, body_theta)
    img[body] = rng.uniform(0.35, 0.55)

    lo, hi = spec.n_ellipses
    for _ in range(int(rng.integers(lo, hi + 1))):
        a = rng.uniform(0.08, 0.35)
        b = rng.uniform(0.06, 0.25)
        # centre drawn inside the body, inset by the organ size
        r = np.sqrt(rng.random()) * 0.6
        phi = rng.uniform(0, 2 * np.pi)
        cx, cy = r * body_a * np.cos(phi), r * body_b * np.sin(phi)
        organ = _ellipse(xx, yy, cx, cy, a, b, rng.uniform(0, np.pi)) & body
        img[organ] = rng.uniform(*spec.intensity)

    g = rng.uniform(0.0, 0.25)
    g_dir = rng.uniform(0, 2 * np.pi)
    img *= 1.0 + g * (xx * np.cos(g_dir) + yy * np.sin(g_dir))
    img += rng.normal(0.0, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)
