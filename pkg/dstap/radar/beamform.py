"""
Sample covariance estimation and MVDR output-power heatmaps.

P(theta, phi) = | a^H a / (a^H R^-1 a) |, evaluated through a Cholesky
factorization of the (loaded) covariance that is computed once per range
bin and reused for every grid point of that bin.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from dstap.radar.geometry import AngleGrid, ArrayGeometry, RangeGrid, steering_matrix
from dstap.utils.errors import ConfigurationError, NumericalError, ShapeError

DEFAULT_LOADING = 1e-6


@dataclass(frozen=True)
class CovarianceMatrix:
    data: np.ndarray       # L x L complex Hermitian
    loading: float = 0.0   # absolute epsilon already added to the diagonal

    @property
    def size(self):
        return self.data.shape[0]


@dataclass
class HeatmapTensor:
    values: np.ndarray     # (n_bins, n_theta, n_phi), linear power
    range_grid: RangeGrid
    angle_grid: AngleGrid

    @property
    def shape(self):
        return self.values.shape


class FactoredCovariance(object):
    """Immutable Cholesky factor of a loaded covariance; safe to share across threads."""

    def __init__(self, cov: CovarianceMatrix, range_bin=None):
        self.range_bin = range_bin
        try:
            self._factor = cho_factor(cov.data, lower=True, check_finite=True)
        except (LinAlgError, ValueError) as e:
            raise NumericalError("covariance is not positive definite", range_bin=range_bin) from e

    def solve(self, a):
        return cho_solve(self._factor, a, check_finite=False)

    def mvdr_powers(self, steering, grid_shape=None):
        """MVDR power for each column of `steering` (L x M)."""
        x = self.solve(steering)
        numer = np.sum(np.abs(steering) ** 2, axis=0)
        denom = np.sum(steering.conj() * x, axis=0)
        p = np.abs(numer / denom)
        bad = ~(np.isfinite(p) & (p > 0))
        if np.any(bad):
            m = int(np.flatnonzero(bad)[0])
            idx = np.unravel_index(m, grid_shape) if grid_shape is not None else (m,)
            raise NumericalError("non-positive MVDR power", range_bin=self.range_bin,
                                 angle_index=tuple(int(k) for k in idx))
        return p


def sample_covariance(Y):
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ShapeError(f"snapshot matrix must be L x K with K >= 1, got shape {Y.shape}")
    R = (Y @ Y.conj().T) / Y.shape[1]
    # force exact Hermitian symmetry against rounding in the product
    R = 0.5 * (R + R.conj().T)
    return CovarianceMatrix(R)


def diagonal_load(cov: CovarianceMatrix, epsilon_rel=DEFAULT_LOADING):
    if epsilon_rel < 0:
        raise ConfigurationError(f"loading must be non-negative, got {epsilon_rel}")
    L = cov.size
    eps = epsilon_rel * float(np.trace(cov.data).real) / L
    if eps == 0.0:
        return cov
    return CovarianceMatrix(cov.data + eps * np.eye(L), cov.loading + eps)


def mvdr_power(cov: CovarianceMatrix, a):
    a = np.asarray(a, dtype=np.complex128)
    if not np.any(a):
        raise ConfigurationError("steering vector must be nonzero")
    return float(FactoredCovariance(cov).mvdr_powers(a[:, None])[0])


def _mvdr_slice(cov, steering, grid_shape, range_bin):
    return FactoredCovariance(cov, range_bin).mvdr_powers(steering, grid_shape)


# Heatmap statistics: f(loaded covariance, steering matrix, grid shape, bin) -> powers.
statistic_dict = {
    'mvdr': _mvdr_slice,
}


def heatmap_slice(Y, angle_grid: AngleGrid, array: ArrayGeometry,
                  epsilon_rel=DEFAULT_LOADING, statistic='mvdr', range_bin=None, steering=None):
    if statistic not in statistic_dict:
        raise ConfigurationError(f"unknown heatmap statistic '{statistic}', options: {sorted(statistic_dict)}")
    Y = np.asarray(Y)
    if Y.shape[0] != array.n_elements:
        raise ShapeError(f"snapshot rows ({Y.shape[0]}) != array elements ({array.n_elements})")
    cov = diagonal_load(sample_covariance(Y), epsilon_rel)
    if steering is None:
        steering = steering_matrix(array, angle_grid)
    p = statistic_dict[statistic](cov, steering, angle_grid.shape, range_bin)
    return p.reshape(angle_grid.shape)


def heatmap_tensor(snapshots, range_grid: RangeGrid, angle_grid: AngleGrid, array: ArrayGeometry,
                   epsilon_rel=DEFAULT_LOADING, statistic='mvdr'):
    """Stack one slice per range bin (bin-major). `snapshots` holds L x K arrays or ArraySnapshots."""
    if len(snapshots) != range_grid.n_bins:
        raise ShapeError(f"got {len(snapshots)} range-bin snapshots, range grid has {range_grid.n_bins} bins")
    steering = steering_matrix(array, angle_grid)
    values = np.empty((range_grid.n_bins,) + angle_grid.shape, dtype=np.float64)
    for b, snap in enumerate(snapshots):
        Y = getattr(snap, 'data', snap)
        values[b] = heatmap_slice(Y, angle_grid, array, epsilon_rel, statistic,
                                  range_bin=b, steering=steering)
    return HeatmapTensor(values, range_grid, angle_grid)
