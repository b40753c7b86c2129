"""
Fourier representation of periodic fields.

Fields on the box [0, L)^d are stored as complex coefficients on the full
(N,)*d FFT lattice, component axes first, mode axes last, modes in numpy FFT
order. The forward transform is unnormalized and the inverse carries 1/N^d, so
for a real field f sampled on the grid

    ||f||_{L2}^2 = (L/N)^d * sum_x |f(x)|^2 = L^d / N^(2d) * sum_k |f_k|^2

which is the Parseval constant used by `SpectralField.norm`.

Index conventions are fixed for the whole package: (grad u)_ij = d_j u_i,
(div E)_i = d_j E_ij (contraction on the last index) and curl acts on the
last index as well. Odd derivatives zero the Nyquist wavenumber; even
multipliers (Lambda^s, Leray, Hodge) use the full |xi|.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft

from lab.exceptions import ContractViolation, GridMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    dim: int
    points_per_axis: int
    box_length: float = 2 * np.pi

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.points_per_axis <= 0 or self.points_per_axis % 2:
            raise ValueError(
                f"points_per_axis must be a positive even integer, got {self.points_per_axis}"
            )
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")

    @property
    def shape(self):
        return (self.points_per_axis,) * self.dim

    @property
    def mode_axes(self):
        return tuple(range(-self.dim, 0))

    @property
    def spacing(self):
        return self.box_length / self.points_per_axis

    @property
    def volume(self):
        return self.box_length**self.dim

    @property
    def fundamental(self):
        """Smallest nonzero wavenumber magnitude, 2*pi/L."""
        return 2 * np.pi / self.box_length

    @cached_property
    def integer_modes(self):
        """Integer wavenumbers k, shape (d, N, ..., N), k_i in {-N/2, ..., N/2 - 1}."""
        n = self.points_per_axis
        k = np.fft.fftfreq(n, d=1.0 / n)
        return np.array(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def wavevectors(self):
        return self.fundamental * self.integer_modes

    @cached_property
    def derivative_wavevectors(self):
        # Nyquist freq=0 for odd derivatives of real fields
        xi = self.wavevectors.copy()
        xi[self.integer_modes == -self.points_per_axis // 2] = 0.0
        return xi

    @cached_property
    def xi_mag(self):
        return np.sqrt(np.sum(self.wavevectors**2, axis=0))

    @cached_property
    def xi_mag_safe(self):
        """|xi| with the zero mode replaced by 1, for divisions."""
        r = self.xi_mag.copy()
        r[(0,) * self.dim] = 1.0
        return r

    @cached_property
    def zero_mode(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[(0,) * self.dim] = True
        return mask

    @cached_property
    def dealias_mask(self):
        """Two-thirds rule: keep modes with every |k_i| < N/3."""
        return np.all(3 * np.abs(self.integer_modes) < self.points_per_axis, axis=0)

    @cached_property
    def nyquist_free_mask(self):
        return np.all(self.integer_modes != -self.points_per_axis // 2, axis=0)

    def band_mask(self, band):
        """Modes with every |k_i| <= band."""
        return np.all(np.abs(self.integer_modes) <= band, axis=0)

    @cached_property
    def coordinates(self):
        x = np.arange(self.points_per_axis) * self.spacing
        return np.array(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def parseval_factor(self):
        return self.volume / float(self.points_per_axis) ** (2 * self.dim)

    def to_dict(self):
        return {"dim": self.dim, "N": self.points_per_axis, "L": self.box_length}


def forward(values, grid):
    return fft.fftn(values, axes=grid.mode_axes)


def inverse(coeffs, grid):
    return fft.ifftn(coeffs, axes=grid.mode_axes)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A scalar (rank 0), vector (rank 1) or tensor (rank 2) field in Fourier space."""

    grid: Grid
    rank: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.rank not in (0, 1, 2):
            raise ContractViolation(f"rank must be 0, 1 or 2, got {self.rank}")
        expected = (self.grid.dim,) * self.rank + self.grid.shape
        coeffs = np.array(self.coeffs, dtype=np.complex128)
        if coeffs.shape != expected:
            raise ContractViolation(
                f"coefficient shape {coeffs.shape} does not match rank {self.rank} on {expected}"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, grid, rank):
        return cls(grid, rank, np.zeros((grid.dim,) * rank + grid.shape, dtype=np.complex128))

    @classmethod
    def from_physical(cls, grid, values, rank=None):
        values = np.asarray(values, dtype=np.float64)
        if rank is None:
            rank = values.ndim - grid.dim
        return cls(grid, rank, forward(values, grid))

    def physical(self):
        return inverse(self.coeffs, self.grid).real

    def with_coeffs(self, coeffs, rank=None):
        return SpectralField(self.grid, self.rank if rank is None else rank, coeffs)

    def _check_compatible(self, other):
        if other.grid != self.grid:
            raise GridMismatchError(f"fields live on different grids: {self.grid} vs {other.grid}")
        if other.rank != self.rank:
            raise ContractViolation(f"rank mismatch: {self.rank} vs {other.rank}")

    def __add__(self, other):
        self._check_compatible(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_compatible(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def transpose(self):
        if self.rank != 2:
            raise ContractViolation("transpose needs a rank 2 field")
        return self.with_coeffs(np.swapaxes(self.coeffs, 0, 1))

    def masked(self, mask):
        return self.with_coeffs(self.coeffs * mask)

    def dealiased(self):
        return self.masked(self.grid.dealias_mask)

    def realified(self):
        """Enforce Hermitian symmetry by a round trip through physical space."""
        return SpectralField.from_physical(self.grid, self.physical(), self.rank)

    def inner(self, other):
        """Real L2 inner product over the box."""
        self._check_compatible(other)
        return float(
            self.grid.parseval_factor() * np.real(np.vdot(other.coeffs, self.coeffs))
        )

    def norm_sq(self):
        return float(self.grid.parseval_factor() * np.sum(np.abs(self.coeffs) ** 2))

    def norm(self):
        return float(np.sqrt(self.norm_sq()))

    def sobolev_norm(self, m):
        """H^m norm with weights sum_{j<=m} |xi|^(2j) (all ordered derivatives of order <= m)."""
        r2 = self.grid.xi_mag**2
        weight = sum(r2**j for j in range(m + 1))
        total = self.grid.parseval_factor() * np.sum(weight * np.abs(self.coeffs) ** 2)
        return float(np.sqrt(total))

    def max_abs(self):
        """Pointwise sup of the Euclidean component norm in physical space."""
        values = self.physical()
        if self.rank == 0:
            return float(np.max(np.abs(values)))
        squared = np.sum(values**2, axis=tuple(range(self.rank)))
        return float(np.sqrt(np.max(squared)))

    def hermitian_defect(self):
        """max |f(-k) - conj(f(k))| relative to max |f|."""
        reflected = np.conj(np.roll(np.flip(self.coeffs, axis=self.grid.mode_axes), 1, axis=self.grid.mode_axes))
        scale = max(float(np.max(np.abs(self.coeffs))), 1e-300)
        return float(np.max(np.abs(self.coeffs - reflected)) / scale)


def lambda_power(f, s):
    """Multiply every coefficient by |xi|^s; the zero mode goes to 0 unless s == 0."""
    if s == 0:
        return f
    grid = f.grid
    multiplier = np.where(grid.zero_mode, 0.0, grid.xi_mag_safe**s)
    return f.with_coeffs(f.coeffs * multiplier)


def leray_project(v):
    """(I - xi xi^T / |xi|^2) per mode; the zero mode is left unchanged."""
    if v.rank != 1:
        raise ContractViolation("leray_project needs a vector field")
    return v.with_coeffs(_project_rows(v.coeffs, v.grid, keep_gradient=False))


def _project_rows(coeffs, grid, keep_gradient):
    xi = grid.wavevectors
    r2 = grid.xi_mag_safe**2
    along = np.sum(xi * coeffs, axis=-grid.dim - 1, keepdims=True)
    gradient = np.expand_dims(xi, 0) if coeffs.ndim == grid.dim + 2 else xi
    gradient_part = gradient * along / r2
    gradient_part[..., *((0,) * grid.dim)] = 0.0
    if keep_gradient:
        gradient_part[..., *((0,) * grid.dim)] = coeffs[..., *((0,) * grid.dim)]
        return gradient_part
    return coeffs - gradient_part


def hodge_decompose(E):
    """
    Split a tensor into a part whose rows are gradients (carries all of div E)
    and a part with divergence-free rows. The zero mode goes wholly to the
    first part.
    """
    if E.rank != 2:
        raise ContractViolation("hodge_decompose needs a rank 2 field")
    div_part = _project_rows(E.coeffs, E.grid, keep_gradient=True)
    return E.with_coeffs(div_part), E.with_coeffs(E.coeffs - div_part)


def grad(f):
    """Append a derivative index: (grad f)_{...j} = d_j f_{...}."""
    if f.rank >= 2:
        raise ContractViolation("grad is defined for scalar and vector fields")
    kd = f.grid.derivative_wavevectors
    coeffs = 1j * np.expand_dims(f.coeffs, axis=f.rank) * kd
    return f.with_coeffs(coeffs, rank=f.rank + 1)


def tensor_grad(u):
    if u.rank != 1:
        raise ContractViolation("tensor_grad needs a vector field")
    return grad(u)


def div(f):
    """Contract the last index with the derivative: (div E)_i = d_j E_ij."""
    if f.rank == 0:
        raise ContractViolation("div needs a vector or tensor field")
    kd = f.grid.derivative_wavevectors
    return f.with_coeffs(np.sum(1j * kd * f.coeffs, axis=f.rank - 1), rank=f.rank - 1)


def curl_rows(f):
    """
    Curl acting on the last index. In 3D the rank is preserved; in 2D the
    last index is consumed (scalar curl d_0 f_1 - d_1 f_0 per row).
    """
    if f.rank == 0:
        raise ContractViolation("curl needs a vector or tensor field")
    grid = f.grid
    kd = grid.derivative_wavevectors
    axis = f.rank - 1
    component = lambda j: np.take(f.coeffs, j, axis=axis)  # noqa: E731
    if grid.dim == 2:
        coeffs = 1j * (kd[0] * component(1) - kd[1] * component(0))
        return f.with_coeffs(coeffs, rank=f.rank - 1)
    parts = [
        1j * (kd[(m + 1) % 3] * component((m + 2) % 3) - kd[(m + 2) % 3] * component((m + 1) % 3))
        for m in range(3)
    ]
    return f.with_coeffs(np.stack(parts, axis=axis))


def laplacian(f):
    return f.with_coeffs(-(f.grid.xi_mag**2) * f.coeffs)


def divergence_defect(u):
    """max over modes of |xi . u_k| in the L2 scale of `norm`, to be compared with ||u||."""
    grid = u.grid
    along = np.abs(np.sum(grid.wavevectors * u.coeffs, axis=0))
    scale = np.sqrt(grid.parseval_factor())
    return float(np.max(along) * scale)


def random_field(grid, rank, rng, band=None, zero_mean=True):
    """
    Random real field, band-limited to |k_i| <= band (default: the dealiased
    band) and free of Nyquist modes.
    """
    values = rng.standard_normal((grid.dim,) * rank + grid.shape)
    mask = grid.dealias_mask & grid.nyquist_free_mask
    if band is not None:
        mask = mask & grid.band_mask(band)
    if zero_mean:
        mask = mask & ~grid.zero_mode
    return SpectralField(grid, rank, forward(values, grid) * mask)


def random_solenoidal(grid, rng, band=None):
    return leray_project(random_field(grid, 1, rng, band=band))


class PointEvaluator:
    """
    Evaluate a band-limited field at arbitrary points by summing its nonzero
    Fourier modes. Exact up to round-off for trigonometric polynomials.
    """

    def __init__(self, field, rel_tol=1e-17, chunk=4096):
        grid = field.grid
        flat = field.coeffs.reshape(field.coeffs.shape[: field.rank] + (-1,))
        magnitude = np.max(np.abs(flat), axis=tuple(range(field.rank))) if field.rank else np.abs(flat)
        keep = magnitude > rel_tol * max(float(np.max(magnitude)), 1e-300)
        self.rank = field.rank
        self.xi = grid.wavevectors.reshape(grid.dim, -1)[:, keep]
        self.coeffs = flat[..., keep] / grid.points_per_axis**grid.dim
        self.chunk = chunk
        logger.debug(f"PointEvaluator keeps {int(np.sum(keep))} of {keep.size} modes")

    def __call__(self, points):
        points = np.asarray(points, dtype=np.float64)
        out = np.empty(self.coeffs.shape[:-1] + (points.shape[1],))
        for start in range(0, points.shape[1], self.chunk):
            block = points[:, start : start + self.chunk]
            phase = np.exp(1j * (self.xi.T @ block))
            out[..., start : start + self.chunk] = np.real(self.coeffs @ phase)
        return out


def physical_gradient(f):
    """d_k f_{...} sampled on the grid, derivative index last."""
    kd = f.grid.derivative_wavevectors
    coeffs = 1j * np.expand_dims(f.coeffs, axis=f.rank) * kd
    return inverse(coeffs, f.grid).real


def dealiased_transform(values, grid):
    """Forward transform of a physical-space product with the two-thirds mask applied."""
    return forward(values, grid) * grid.dealias_mask
