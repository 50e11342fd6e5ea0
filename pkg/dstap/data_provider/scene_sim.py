"""
Post-matched-filter array snapshot simulator.

One example = one random target inside the constrained region, ground
clutter on every range bin, and thermal noise. Each range bin b yields an
L x K matrix

    Y_b = sum_p c_p(k) a(theta_p, phi_ground(b)) + N_b  [+ s e^{j psi_k} a(theta_t, phi_t) if b is the target bin]

with i.i.d. circular-Gaussian clutter gains and noise, and an i.i.d. uniform
target phase per snapshot. Target amplitude follows the r^-2 voltage law of
the radar equation times one global scale fixed by `calibrate_scnr`.
"""

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from dstap.radar.geometry import (ArrayGeometry, CartesianPoint, RangeGrid, AngleGrid,
                                  ground_depression, make_angle_grid, polar_to_cartesian,
                                  steering_vector)
from dstap.utils.errors import ConfigurationError
from dstap.utils.logger import logger

SCNR_FLOOR_DB = -300.0


@dataclass(frozen=True)
class TargetRegion:
    range_bins: tuple      # (first, last) bin, inclusive
    theta_bounds: tuple    # degrees
    phi_bounds: tuple      # degrees


@dataclass(frozen=True)
class ClutterConfig:
    patches_per_bin: int = 64
    azimuth_span: tuple = (0.0, 50.0)
    reflectivity_db: float = 0.0   # per-patch power, dB

    @property
    def reflectivity(self):
        return 10.0 ** (self.reflectivity_db / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    array: ArrayGeometry
    range_grid: RangeGrid
    angle_grid: AngleGrid
    n_snapshots: int
    target_region: TargetRegion
    rcs_min_dbsm: float = 75.0
    rcs_max_dbsm: float = 85.0
    clutter: ClutterConfig = ClutterConfig()
    noise_power: float = 1.0
    scnr_target_db: float = -2.82
    platform_height: float = 1000.0
    amplitude_scale: float = 1.0
    metadata: dict = field(default_factory=dict, compare=False)

    def validate(self):
        if self.n_snapshots < 2:
            raise ConfigurationError(f"n_snapshots must be >= 2 for a covariance estimate, got {self.n_snapshots}")
        if self.rcs_min_dbsm > self.rcs_max_dbsm:
            raise ConfigurationError(f"rcs_min_dbsm ({self.rcs_min_dbsm}) > rcs_max_dbsm ({self.rcs_max_dbsm})")
        if not (self.noise_power > 0 and np.isfinite(self.noise_power)):
            raise ConfigurationError(f"noise_power must be finite and > 0, got {self.noise_power}")
        if self.clutter.patches_per_bin < 1 or not np.isfinite(self.clutter.reflectivity_db):
            raise ConfigurationError(f"clutter needs patches_per_bin >= 1 and a finite reflectivity_db, "
                                     f"got {self.clutter.patches_per_bin} and {self.clutter.reflectivity_db}")
        if not self.amplitude_scale > 0:
            raise ConfigurationError(f"amplitude_scale must be positive, got {self.amplitude_scale}")
        if not 0 < self.platform_height:
            raise ConfigurationError(f"platform_height must be positive, got {self.platform_height}")

        b0, b1 = self.target_region.range_bins
        if not 0 <= b0 <= b1 < self.range_grid.n_bins:
            raise ConfigurationError(f"target range bins {b0}..{b1} outside range grid [0, {self.range_grid.n_bins})")
        g = self.angle_grid
        t0, t1 = self.target_region.theta_bounds
        p0, p1 = self.target_region.phi_bounds
        if not (g.theta_min <= t0 <= t1 <= g.theta_max):
            raise ConfigurationError(f"target azimuth span [{t0}, {t1}] outside grid [{g.theta_min}, {g.theta_max}]")
        if not (g.phi_min <= p0 <= p1 <= g.phi_max):
            raise ConfigurationError(f"target elevation span [{p0}, {p1}] outside grid [{g.phi_min}, {g.phi_max}]")
        return self

    @property
    def tensor_shape(self):
        return (self.range_grid.n_bins, self.angle_grid.n_theta, self.angle_grid.n_phi)

    def interference_power(self):
        """Clutter plus noise power summed over the L elements of one range bin."""
        L = self.array.n_elements
        return L * self.clutter.patches_per_bin * self.clutter.reflectivity + L * self.noise_power

    def to_dict(self):
        g = self.angle_grid
        return {
            'array': asdict(self.array),
            'range_grid': asdict(self.range_grid),
            'angle_grid': {'theta_bounds': [g.theta_min, g.theta_max], 'dtheta': g.dtheta,
                           'phi_bounds': [g.phi_min, g.phi_max], 'dphi': g.dphi},
            'n_snapshots': self.n_snapshots,
            'target_region': {k: list(v) for k, v in asdict(self.target_region).items()},
            'rcs_min_dbsm': self.rcs_min_dbsm,
            'rcs_max_dbsm': self.rcs_max_dbsm,
            'clutter': {'patches_per_bin': self.clutter.patches_per_bin,
                        'azimuth_span': list(self.clutter.azimuth_span),
                        'reflectivity_db': self.clutter.reflectivity_db},
            'noise_power': self.noise_power,
            'scnr_target_db': self.scnr_target_db,
            'platform_height': self.platform_height,
            'amplitude_scale': self.amplitude_scale,
            'metadata': dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            ag = d['angle_grid']
            tr = d['target_region']
            cl = d.get('clutter', {})
            config = cls(
                array=ArrayGeometry(**d['array']),
                range_grid=RangeGrid(**d['range_grid']),
                angle_grid=make_angle_grid(tuple(ag['theta_bounds']), tuple(ag['phi_bounds']),
                                           ag['dtheta'], ag['dphi']),
                n_snapshots=int(d['n_snapshots']),
                target_region=TargetRegion(tuple(tr['range_bins']), tuple(tr['theta_bounds']),
                                           tuple(tr['phi_bounds'])),
                rcs_min_dbsm=float(d.get('rcs_min_dbsm', 75.0)),
                rcs_max_dbsm=float(d.get('rcs_max_dbsm', 85.0)),
                clutter=ClutterConfig(int(cl.get('patches_per_bin', 64)),
                                      tuple(cl.get('azimuth_span', (0.0, 50.0))),
                                      float(cl.get('reflectivity_db', 0.0))),
                noise_power=float(d.get('noise_power', 1.0)),
                scnr_target_db=float(d.get('scnr_target_db', -2.82)),
                platform_height=float(d.get('platform_height', 1000.0)),
                amplitude_scale=float(d.get('amplitude_scale', 1.0)),
                metadata=dict(d.get('metadata', {})),
            )
        except (KeyError, TypeError) as e:
            raise ConfigurationError(f"malformed scenario config: {e!r}") from e
        return config.validate()


def load_scenario(filepath):
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            d = json.load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"scenario config not found: {filepath}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"scenario config {filepath} is not valid JSON: {e}") from e
    return ScenarioConfig.from_dict(d)


@dataclass(frozen=True)
class TargetTruth:
    range_bin: int
    r: float
    theta: float
    phi: float
    rcs_dbsm: float
    position: CartesianPoint
    amplitude: float


@dataclass
class ArraySnapshot:
    range_bin: int
    data: np.ndarray   # L x K complex


def rcs_to_amplitude(rcs_dbsm, r, config: ScenarioConfig):
    if not r > 0:
        raise ConfigurationError(f"target range must be positive, got {r}")
    return config.amplitude_scale * np.sqrt(10.0 ** (rcs_dbsm / 10.0)) / r ** 2


def make_truth(config: ScenarioConfig, r, theta, phi, rcs_dbsm):
    return TargetTruth(
        range_bin=config.range_grid.bin_of(r),
        r=float(r), theta=float(theta), phi=float(phi), rcs_dbsm=float(rcs_dbsm),
        position=polar_to_cartesian(r, theta, phi),
        amplitude=float(rcs_to_amplitude(rcs_dbsm, r, config)),
    )


def sample_target(rng: np.random.Generator, config: ScenarioConfig):
    region = config.target_region
    b = int(rng.integers(region.range_bins[0], region.range_bins[1] + 1))
    lo, hi = config.range_grid.bin_edges(b)
    r = rng.uniform(lo, hi)
    theta = rng.uniform(*region.theta_bounds)
    phi = rng.uniform(*region.phi_bounds)
    rcs = rng.uniform(config.rcs_min_dbsm, config.rcs_max_dbsm)
    truth = make_truth(config, r, theta, phi, rcs)
    # bin_of may round an upper-edge draw; the sampled bin is authoritative
    return replace(truth, range_bin=b)


def _circular_gaussian(rng, shape, power):
    return np.sqrt(power / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_snapshots(config: ScenarioConfig, truth: TargetTruth, rng: np.random.Generator):
    L, K = config.array.n_elements, config.n_snapshots
    P = config.clutter.patches_per_bin
    phi_ground = ground_depression(config.range_grid, config.platform_height)
    n = np.arange(L)[:, None]
    a_target = steering_vector(config.array, truth.theta, truth.phi)

    snapshots = []
    for b in range(config.range_grid.n_bins):
        Y = np.zeros((L, K), dtype=np.complex128)
        if P > 0:
            az = np.deg2rad(rng.uniform(*config.clutter.azimuth_span, size=P))
            u = np.sin(az) * np.cos(np.deg2rad(phi_ground[b]))
            A = np.exp(2j * np.pi * config.array.spacing_wavelengths * n * u[None, :])
            C = _circular_gaussian(rng, (P, K), config.clutter.reflectivity)
            Y += A @ C
        if config.noise_power > 0:
            Y += _circular_gaussian(rng, (L, K), config.noise_power)
        if b == truth.range_bin:
            psi = rng.uniform(0.0, 2.0 * np.pi, size=K)
            Y += truth.amplitude * np.exp(1j * psi)[None, :] * a_target[:, None]
        snapshots.append(ArraySnapshot(b, Y))
    return snapshots


def measure_scnr(config: ScenarioConfig, truth: TargetTruth):
    L = config.array.n_elements
    interference = config.interference_power()
    signal = L * truth.amplitude ** 2
    if signal <= 0 or interference <= 0:
        return SCNR_FLOOR_DB
    return max(10.0 * np.log10(signal / interference), SCNR_FLOOR_DB)


def calibrate_scnr(config: ScenarioConfig, n_draws, rng: np.random.Generator):
    """Amplitude scale putting the mean per-example SCNR (dB) at config.scnr_target_db."""
    if n_draws < 100:
        raise ConfigurationError(f"n_draws must be >= 100, got {n_draws}")
    if not config.interference_power() > 0:
        raise ConfigurationError("SCNR calibration needs non-zero clutter plus noise power")
    uncalibrated = replace(config, amplitude_scale=1.0)
    scnrs = [measure_scnr(uncalibrated, sample_target(rng, uncalibrated)) for _ in range(n_draws)]
    mean_db = float(np.mean(scnrs))
    scale = 10.0 ** ((config.scnr_target_db - mean_db) / 20.0)
    logger.debug(f"SCNR calibration: uncalibrated mean={mean_db:.3f} dB, "
                 f"target={config.scnr_target_db:.3f} dB, scale={scale:.6e}")
    return scale
