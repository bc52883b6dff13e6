"""Galerkin truncation: diagonal semigroups, sine transforms and noise.

All state vectors are coordinate vectors in an orthonormal eigenbasis, so the
Euclidean norm of the coordinates is the Hilbert norm of the represented
element.  For the Dirichlet Laplacian on [0, 1] that basis is
``phi_k(xi) = sqrt(2) sin(k pi xi)``.
"""

from dataclasses import dataclass
import zlib

import numpy as np
import scipy.fft

from twoscale.errors import ConfigurationError

# Paths are generated in fixed-size blocks so that the increments of a given
# path do not depend on how many paths were requested in total.
PATH_CHUNK = 256


@dataclass(frozen=True)
class DiagonalSemigroup:
    """Semigroup ``exp(t A)`` of a diagonal generator.

    Parameters
    ----------
    eigenvalues : ndarray
        One eigenvalue per retained mode, in units of 1/time.
    label : str
        Name of the generator, used in error messages.
    """

    eigenvalues: np.ndarray
    label: str = "A"

    def __post_init__(self):
        eig = np.asarray(self.eigenvalues, dtype=float).reshape(-1)
        if not np.all(np.isfinite(eig)):
            raise ConfigurationError(f"{self.label}: non-finite eigenvalues")
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def dim(self):
        return self.eigenvalues.size

    def factors(self, t):
        """Per-mode multipliers ``exp(eig * t)``."""
        return np.exp(self.eigenvalues * t)

    def phi1(self, t):
        """Per-mode ``(exp(eig t) - 1) / eig``, equal to ``t`` for a zero eigenvalue."""
        eig = self.eigenvalues
        out = np.full_like(eig, float(t))
        nz = np.abs(eig * t) > 1e-14
        out[nz] = np.expm1(eig[nz] * t) / eig[nz]
        return out

    def hs_norm(self, s):
        """Hilbert-Schmidt norm of ``exp(s A)`` on the truncated space."""
        return float(np.sqrt(np.sum(np.exp(2.0 * self.eigenvalues * s))))


def apply_semigroup(sg, t, v):
    """Apply ``exp(t A)`` to ``v`` exactly.

    ``v`` may carry leading batch axes; the last axis must match the number of
    modes.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != sg.dim:
        raise ConfigurationError(
            f"{sg.label}: vector has {v.shape[-1]} modes, semigroup has {sg.dim}"
        )
    return v * sg.factors(t)


def laplacian_eigenvalues(n_modes, diffusivity=1.0, shift=0.0):
    """Eigenvalues ``-(diffusivity k^2 pi^2 + shift)`` for k = 1..n_modes."""
    k = np.arange(1, n_modes + 1, dtype=float)
    return -(diffusivity * k**2 * np.pi**2 + shift)


def fit_hs_constant(sg, gamma, s_grid=None):
    """Smallest ``C`` with ``hs_norm(s) <= C s^(-gamma)`` on ``s_grid``."""
    if s_grid is None:
        s_grid = np.logspace(-4, 0, 81)
    return max(sg.hs_norm(s) * s**gamma for s in s_grid)


# ---------------------------------------------------------------- transforms


class SineBasis:
    """Dirichlet sine basis sampled on a uniform interior grid of [0, 1].

    ``sine_transform`` returns coefficients against ``sin(k pi xi)`` (so the
    grid function ``sin(pi xi)`` maps to the first unit vector).  The
    orthonormal coordinates used for states are these coefficients divided by
    ``sqrt(2)``; ``to_field`` and ``from_field`` work in those coordinates.
    """

    def __init__(self, n_grid, n_modes):
        if n_modes > n_grid:
            raise ConfigurationError(
                f"cannot resolve {n_modes} modes on a grid of {n_grid} points"
            )
        self.n_grid = int(n_grid)
        self.n_modes = int(n_modes)
        self.xi = np.arange(1, n_grid + 1) / (n_grid + 1.0)
        k = np.arange(1, n_modes + 1)
        # (n_modes, n_grid) orthonormal basis functions on the grid
        self.phi = np.sqrt(2.0) * np.sin(np.pi * np.outer(k, self.xi))
        self.weight = 1.0 / (n_grid + 1.0)

    def to_field(self, coords):
        """Grid values of ``sum_k coords_k phi_k`` (batched over leading axes)."""
        return np.asarray(coords) @ self.phi

    def from_field(self, values):
        """Orthonormal coordinates of grid values (discrete L2 projection)."""
        return (np.asarray(values) @ self.phi.T) * self.weight

    def inner(self, values, mode=0):
        """Discrete L2 inner product of grid values with one basis function."""
        return (np.asarray(values) @ self.phi[mode]) * self.weight


def sine_transform(values, n_modes=None):
    """Coefficients of grid values against ``sin(k pi xi)``.

    Parameters
    ----------
    values : ndarray
        Samples on the ``n`` interior points ``i / (n + 1)``, last axis.
    n_modes : int, optional
        Number of coefficients to keep; defaults to ``n``.

    Raises
    ------
    ConfigurationError
        If more modes are requested than the grid resolves.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    n_modes = n if n_modes is None else int(n_modes)
    if n_modes > n:
        raise ConfigurationError(f"cannot resolve {n_modes} modes on {n} grid points")
    coeffs = scipy.fft.dst(values, type=1, axis=-1) / (n + 1.0)
    return coeffs[..., :n_modes]


def inverse_sine_transform(coeffs, n_grid=None):
    """Grid values of ``sum_k coeffs_k sin(k pi xi)`` on ``n_grid`` interior points."""
    coeffs = np.asarray(coeffs, dtype=float)
    n_modes = coeffs.shape[-1]
    n_grid = n_modes if n_grid is None else int(n_grid)
    if n_modes > n_grid:
        raise ConfigurationError(f"cannot resolve {n_modes} modes on {n_grid} grid points")
    padded = np.zeros(coeffs.shape[:-1] + (n_grid,))
    padded[..., :n_modes] = coeffs
    return scipy.fft.dst(padded, type=1, axis=-1) / 2.0


# --------------------------------------------------------------------- noise


def stream_code(stream_id):
    """Stable integer code for a stream name such as ``"W1"`` or ``"train/B"``."""
    if isinstance(stream_id, (int, np.integer)):
        return int(stream_id)
    return zlib.crc32(str(stream_id).encode())


@dataclass(frozen=True)
class NoiseSpec:
    """Key of one truncated cylindrical Wiener process.

    Parameters
    ----------
    n_noise : int
        Number of retained noise modes.
    seed : int
        Experiment seed.
    stream_id : str or int
        Which Wiener process; distinct ids give independent increments.
    """

    n_noise: int
    seed: int
    stream_id: object = "W1"


def _chunk_normals(spec, chunk, n_steps):
    ss = np.random.SeedSequence([int(spec.seed), stream_code(spec.stream_id), int(chunk)])
    gen = np.random.Generator(np.random.Philox(ss))
    # step-major layout: the first k steps do not depend on n_steps
    return gen.standard_normal((n_steps, PATH_CHUNK, spec.n_noise))


def noise_increment(spec, dt, step=0, path=0):
    """Increment of path ``path`` over time step ``step``.

    Returns a vector of ``n_noise`` independent N(0, dt) samples, a
    deterministic function of ``(seed, stream_id, path, step)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    chunk, offset = divmod(int(path), PATH_CHUNK)
    z = _chunk_normals(spec, chunk, int(step) + 1)
    return np.sqrt(dt) * z[step, offset]


def noise_block(spec, dt, n_paths, n_steps, antithetic=False):
    """Increments for paths ``0..n_paths-1`` over ``n_steps`` steps.

    Returns an array of shape ``(n_paths, n_steps, n_noise)`` whose entries
    coincide with ``noise_increment`` for the same key.  With ``antithetic``
    each odd path is the negation of the preceding even path.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_paths = int(n_paths)
    if antithetic and n_paths % 2:
        raise ConfigurationError("antithetic sampling needs an even number of paths")
    n_chunks = -(-n_paths // PATH_CHUNK)
    out = np.empty((n_paths, n_steps, spec.n_noise))
    for c in range(n_chunks):
        lo = c * PATH_CHUNK
        hi = min(n_paths, lo + PATH_CHUNK)
        z = _chunk_normals(spec, c, n_steps)
        out[lo:hi] = np.swapaxes(z[:, : hi - lo], 0, 1)
    out *= np.sqrt(dt)
    if antithetic:
        out[1::2] = -out[0::2]
    return out
