"""Synthetic spatially consistent propagation environment.

A Scenario freezes a set of stationary random fields (per-path log-amplitude
fields, a shared shadowing field, per-path angle fields) realized as sums of
random cosines whose wavevectors are drawn from the spectral density of the
isotropic exponential correlation exp(-d/d_decorr). Field values at any
coordinate are therefore lazy, deterministic in (config, seed), and
approximately Gaussian for a large number of spectral components.

Fast fading comes from i.i.d. uniform path phases drawn per sample (block
fading), so received power at a fixed location is the squared magnitude of a
sum of fixed-amplitude random-phase paths. Everything is reproducible through
seed sub-streams derived by hashing (purpose label, location, sample seed).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InsufficientSamplesError
from .stats import EmpiricalDistribution, capacity_from_power, empirical_quantile

__all__ = [
    "Location",
    "ScenarioConfig",
    "PointProcessConfig",
    "CSISample",
    "CosineField",
    "Scenario",
    "generate_scenario",
    "band_variant",
    "derive_seed",
    "sample_locations_thomas",
    "channel_coefficient",
    "draw_power_samples",
    "draw_csi",
    "true_outage_capacity",
    "measure_outage_probability",
    "multipath_power_samples",
]

TWO_PI = 2.0 * math.pi


def _label_entropy(label: str) -> int:
    """Stable 64-bit entropy word for a purpose label (never python hash())."""
    return int.from_bytes(
        hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest(), "little")


def _location_entropy(x: float, y: float, z: float) -> int:
    buf = np.asarray([x, y, z], dtype=np.float64).tobytes()
    return int.from_bytes(hashlib.blake2s(buf, digest_size=8).digest(), "little")


def _substream(*entropy) -> np.random.Generator:
    words = [e & 0xFFFFFFFFFFFFFFFF if isinstance(e, (int, np.integer))
             else _label_entropy(str(e)) for e in entropy]
    return np.random.default_rng(np.random.SeedSequence(words))


def derive_seed(root: int, *labels) -> int:
    """Stable 64-bit sub-seed from a root seed and purpose labels."""
    h = hashlib.blake2s(digest_size=8)
    h.update(int(root).to_bytes(16, "little", signed=True))
    for lab in labels:
        h.update(str(lab).encode("utf-8") + b"\x00")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class Location:
    """A point in the cell; z is height above ground in meters."""

    x: float
    y: float
    z: float = 1.5

    def __post_init__(self):
        if self.z < 0:
            raise ConfigurationError(f"location height must be >= 0, got {self.z}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class ScenarioConfig:
    """Propagation environment parameters.

    The cell is the square [-cell_side/2, cell_side/2]^2 at user_height.
    Path amplitudes combine log-distance pathloss, a shared shadowing field,
    and independent per-path fields, all in dB, on top of a deterministic
    per-path weight profile decaying as exp(-path_weight_decay * p).
    """

    cell_side: float = 200.0
    bs_location: Location = field(default_factory=lambda: Location(-100.0, 0.0, 10.0))
    user_height: float = 1.5
    num_paths: int = 7
    pathloss_exponent: float = 3.0
    pathloss_ref_db: float = 30.0       # loss at 1 m
    shadowing_std_db: float = 4.0
    shadowing_decorrelation_m: float = 60.0
    path_amp_field_std_db: float = 2.5
    path_amp_decorrelation_m: float = 50.0
    noise_power: float = 1e-13          # linear watts
    num_antennas: int = 1
    num_subcarriers: int = 1
    carrier_wavelength: float = 0.375   # meters (800 MHz)
    field_components: int = 128         # spectral components per random field
    bandwidth_hz: float = 5e6           # spanned by the subcarriers
    delay_spread_s: float = 5e-7        # per-path delays drawn from [0, this)
    angle_spread_rad: float = 0.6       # std of the per-path angle field
    path_weight_decay: float = 0.45

    def __post_init__(self):
        if self.num_paths < 1:
            raise ConfigurationError("num_paths must be >= 1")
        if self.field_components < 1:
            raise ConfigurationError("field_components must be >= 1")
        if self.num_antennas < 1 or self.num_subcarriers < 1:
            raise ConfigurationError("antenna/subcarrier counts must be >= 1")
        for name in ("cell_side", "shadowing_decorrelation_m",
                     "path_amp_decorrelation_m", "noise_power",
                     "carrier_wavelength", "bandwidth_hz"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.delay_spread_s < 0 or self.angle_spread_rad < 0:
            raise ConfigurationError("delay spread and angle spread must be >= 0")
        if self.user_height < 0:
            raise ConfigurationError("user_height must be >= 0")

    def cell_bounds(self) -> tuple[float, float, float, float]:
        h = self.cell_side / 2.0
        return (-h, h, -h, h)

    def contains(self, loc: Location, tol: float = 1e-9) -> bool:
        xmin, xmax, ymin, ymax = self.cell_bounds()
        return (xmin - tol <= loc.x <= xmax + tol
                and ymin - tol <= loc.y <= ymax + tol)


@dataclass(frozen=True)
class PointProcessConfig:
    """Thomas cluster process: Poisson parents, Gaussian-scattered offspring."""

    parent_intensity: float     # parents per m^2
    mean_cluster_size: float    # expected offspring per parent
    offspring_std: float        # isotropic Gaussian offset std, meters

    def __post_init__(self):
        if self.parent_intensity <= 0 or self.mean_cluster_size <= 0:
            raise ConfigurationError("intensities must be positive")
        if self.offspring_std < 0:
            raise ConfigurationError("offspring_std must be >= 0")


@dataclass(frozen=True)
class CSISample:
    """One complex channel snapshot, num_antennas x num_subcarriers."""

    entries: np.ndarray

    def __post_init__(self):
        e = self.entries
        if e.ndim != 2:
            raise ValueError("CSI entries must be a 2-D matrix")
        if not np.all(np.isfinite(e)):
            raise ValueError("CSI entries must be finite")
        if not np.any(e != 0):
            raise ValueError("CSI must have at least one nonzero entry")


class CosineField:
    """Stationary random field: sum of M weighted random cosines.

    Wavevectors are drawn from the 2-D spectral density of exp(-d/decorr)
    (radial CDF G(k) = 1 - (1+(k*L)^2)^(-1/2), direction uniform), so the
    ensemble covariance of the field is variance * exp(-d/decorr) and values
    approach Gaussianity as M grows.
    """

    __slots__ = ("wavevectors", "phases", "amplitude")

    def __init__(self, std: float, decorrelation: float, n_components: int,
                 rng: np.random.Generator):
        u = rng.random(n_components)
        radial = np.sqrt((1.0 - u) ** -2 - 1.0) / decorrelation
        direction = rng.uniform(0.0, TWO_PI, n_components)
        self.wavevectors = radial[:, None] * np.column_stack(
            [np.cos(direction), np.sin(direction)])
        self.phases = rng.uniform(0.0, TWO_PI, n_components)
        self.amplitude = std * math.sqrt(2.0 / n_components)

    def evaluate(self, xy: np.ndarray) -> np.ndarray:
        """Field values at (N, 2) planar coordinates."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        args = xy @ self.wavevectors.T + self.phases
        return self.amplitude * np.cos(args).sum(axis=1)


@dataclass(frozen=True)
class Scenario:
    """Frozen propagation environment; immutable and shareable across threads."""

    config: ScenarioConfig
    seed: int
    shadow_field: CosineField
    path_amp_fields: tuple
    angle_fields: tuple
    base_angles: np.ndarray     # (P,) frozen mean arrival angle per path
    delays: np.ndarray          # (P,) frozen per-path delay, seconds
    path_weights: np.ndarray    # (P,) deterministic linear weight profile

    # -------------------------------------------------- field evaluation

    def _check_inside(self, loc: Location):
        if not self.config.contains(loc):
            raise ValueError(
                f"location ({loc.x}, {loc.y}) outside the cell "
                f"{self.config.cell_bounds()}")
        bs = self.config.bs_location
        if (loc.x, loc.y, loc.z) == (bs.x, bs.y, bs.z):
            raise ValueError("user cannot be co-located with the base station")

    def path_amplitudes(self, locs: np.ndarray) -> np.ndarray:
        """Deterministic per-path linear amplitudes at (N, 3) locations."""
        locs = np.atleast_2d(np.asarray(locs, dtype=float))
        xy = locs[:, :2]
        d = np.linalg.norm(locs - self.config.bs_location.as_array(), axis=1)
        pl_db = self.config.pathloss_ref_db + 10.0 * \
            self.config.pathloss_exponent * np.log10(np.maximum(d, 1e-9))
        shadow_db = self.shadow_field.evaluate(xy)
        gains_db = np.stack(
            [(-pl_db + shadow_db + f.evaluate(xy)) for f in self.path_amp_fields],
            axis=1)
        return self.path_weights * 10.0 ** (gains_db / 20.0)

    def path_angles(self, locs: np.ndarray) -> np.ndarray:
        """Per-path arrival angles (radians) at (N, 3) locations."""
        locs = np.atleast_2d(np.asarray(locs, dtype=float))
        xy = locs[:, :2]
        wobble = np.stack([f.evaluate(xy) for f in self.angle_fields], axis=1)
        return self.base_angles + self.config.angle_spread_rad * wobble

    def mean_power(self, loc: Location) -> float:
        """Average received SISO/MRC reference power: sum of a_p^2."""
        a = self.path_amplitudes(loc.as_array())
        return float(np.sum(a * a))

    # -------------------------------------------------- sampling helpers

    def _geometry(self, loc: Location):
        a = self.path_amplitudes(loc.as_array())[0]
        theta = self.path_angles(loc.as_array())[0]
        ant = np.arange(self.config.num_antennas)
        steering = np.exp(-1j * math.pi * np.outer(np.sin(theta), ant))
        return a, steering

    def _phase_rng(self, loc: Location, purpose: str, sample_seed: int):
        return _substream(self.seed, purpose,
                          _location_entropy(loc.x, loc.y, loc.z), sample_seed)

    def subcarrier_ramps(self) -> np.ndarray:
        """(P, S) phase ramps from per-path delay across the subcarrier grid."""
        spacing = self.config.bandwidth_hz / self.config.num_subcarriers
        freqs = spacing * np.arange(self.config.num_subcarriers)
        return np.exp(-1j * TWO_PI * np.outer(self.delays, freqs))


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Realize all random fields and per-path geometry for (config, seed).

    Field sub-streams depend only on the seed and a purpose label, so two
    configs differing only in array/noise parameters (e.g. two radio bands)
    share identical large-scale fields.
    """
    if not isinstance(config, ScenarioConfig):
        raise ConfigurationError("config must be a ScenarioConfig")
    m = config.field_components
    shadow = CosineField(config.shadowing_std_db,
                         config.shadowing_decorrelation_m, m,
                         _substream(seed, "field:shadowing"))
    amp_fields = tuple(
        CosineField(config.path_amp_field_std_db,
                    config.path_amp_decorrelation_m, m,
                    _substream(seed, "field:path-amp", p))
        for p in range(config.num_paths))
    angle_fields = tuple(
        CosineField(1.0, config.path_amp_decorrelation_m, m,
                    _substream(seed, "field:path-angle", p))
        for p in range(config.num_paths))
    geom = _substream(seed, "path-geometry")
    base_angles = geom.uniform(0.0, TWO_PI, config.num_paths)
    delays = geom.uniform(0.0, config.delay_spread_s, config.num_paths)
    weights = np.exp(-config.path_weight_decay * np.arange(config.num_paths))
    weights /= np.linalg.norm(weights)
    return Scenario(config=config, seed=int(seed), shadow_field=shadow,
                    path_amp_fields=amp_fields, angle_fields=angle_fields,
                    base_angles=base_angles, delays=delays,
                    path_weights=weights)


def band_variant(scenario: Scenario, **overrides) -> Scenario:
    """Same environment on a different radio interface.

    Only array/noise parameters may change (antennas, subcarriers,
    wavelength, bandwidth, noise power); the random fields are reused as-is
    so channel statistics stay spatially consistent across bands.
    """
    allowed = {"num_antennas", "num_subcarriers", "carrier_wavelength",
               "bandwidth_hz", "noise_power"}
    bad = set(overrides) - allowed
    if bad:
        raise ConfigurationError(
            f"band variant may only override {sorted(allowed)}, got {sorted(bad)}")
    return replace(scenario, config=replace(scenario.config, **overrides))


def sample_locations_thomas(pp: PointProcessConfig,
                            bounds: tuple[float, float, float, float],
                            user_height: float, seed: int) -> list[Location]:
    """Thomas process draw on a rectangle; offspring outside are discarded."""
    xmin, xmax, ymin, ymax = bounds
    if xmax <= xmin or ymax <= ymin:
        raise ConfigurationError(f"empty sampling region {bounds}")
    rng = _substream(seed, "thomas-process")
    area = (xmax - xmin) * (ymax - ymin)
    n_parents = rng.poisson(pp.parent_intensity * area)
    parents = np.column_stack([
        rng.uniform(xmin, xmax, n_parents),
        rng.uniform(ymin, ymax, n_parents),
    ])
    counts = rng.poisson(pp.mean_cluster_size, n_parents)
    total = int(counts.sum())
    offsets = rng.normal(0.0, pp.offspring_std, (total, 2)) \
        if pp.offspring_std > 0 else np.zeros((total, 2))
    pts = np.repeat(parents, counts, axis=0) + offsets
    inside = ((pts[:, 0] >= xmin) & (pts[:, 0] <= xmax)
              & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax))
    return [Location(float(x), float(y), user_height) for x, y in pts[inside]]


def multipath_power_samples(amplitudes, n: int,
                            rng: np.random.Generator) -> np.ndarray:
    """|sum_p a_p e^{j phi_p}|^2 with i.i.d. uniform phases, n draws."""
    a = np.asarray(amplitudes, dtype=float)
    phases = rng.uniform(0.0, TWO_PI, (n, a.size))
    h = (a * np.exp(1j * phases)).sum(axis=1)
    return np.abs(h) ** 2


def channel_coefficient(scenario: Scenario, loc: Location,
                        sample_seed: int) -> np.ndarray:
    """One channel realization at the reference subcarrier, per antenna."""
    scenario._check_inside(loc)
    a, steering = scenario._geometry(loc)
    rng = scenario._phase_rng(loc, "channel", sample_seed)
    phases = rng.uniform(0.0, TWO_PI, a.size)
    return (a * np.exp(1j * phases)) @ steering


def draw_power_samples(scenario: Scenario, loc: Location, n: int,
                       sample_seed: int) -> np.ndarray:
    """n effective received power samples (MRC over antennas), noiseless."""
    if n < 1:
        raise ValueError("need n >= 1 power samples")
    scenario._check_inside(loc)
    a, steering = scenario._geometry(loc)
    rng = scenario._phase_rng(loc, "power", sample_seed)
    phases = rng.uniform(0.0, TWO_PI, (n, a.size))
    h = (a * np.exp(1j * phases)) @ steering
    return np.sum(np.abs(h) ** 2, axis=1)


def draw_csi(scenario: Scenario, loc: Location, sample_seed: int) -> CSISample:
    """One full antenna x subcarrier channel snapshot."""
    scenario._check_inside(loc)
    a, steering = scenario._geometry(loc)
    ramps = scenario.subcarrier_ramps()
    rng = scenario._phase_rng(loc, "csi", sample_seed)
    phases = rng.uniform(0.0, TWO_PI, a.size)
    paths = a * np.exp(1j * phases)
    entries = np.einsum("p,pa,ps->as", paths, steering, ramps)
    return CSISample(entries=entries)


def true_outage_capacity(scenario: Scenario, loc: Location, epsilon: float,
                         oracle_n: int, seed: int) -> float:
    """Monte-Carlo ground truth for the eps-outage capacity at a location."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0,1), got {epsilon}")
    required = int(math.ceil(100.0 / epsilon))
    if oracle_n < required:
        raise InsufficientSamplesError(oracle_n, epsilon, required=required)
    powers = draw_power_samples(scenario, loc, oracle_n, _oracle_seed(seed))
    caps = capacity_from_power(powers, scenario.config.noise_power)
    return empirical_quantile(EmpiricalDistribution.from_samples(caps), epsilon)


def measure_outage_probability(scenario: Scenario, loc: Location, rate: float,
                               n_mc: int, seed: int) -> float:
    """Fraction of n_mc capacity draws strictly below the given rate."""
    if n_mc < 1:
        raise ValueError("need n_mc >= 1 draws")
    if rate <= 0.0:
        return 0.0
    powers = draw_power_samples(scenario, loc, n_mc, _outage_seed(seed))
    caps = capacity_from_power(powers, scenario.config.noise_power)
    return float(np.count_nonzero(caps < rate)) / n_mc


def _oracle_seed(seed: int) -> int:
    return (int(seed) ^ _label_entropy("capacity-oracle")) & 0xFFFFFFFFFFFFFFFF


def _outage_seed(seed: int) -> int:
    return (int(seed) ^ _label_entropy("outage-measure")) & 0xFFFFFFFFFFFFFFFF
