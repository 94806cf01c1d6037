"""Corridor geometry and passenger-demand profiles."""

from dataclasses import dataclass, field, asdict

import numpy as np

# Uneven layout of a 9.21 km corridor. Positions are km from the outbound terminal.
DEFAULT_STOPS = (0.25, 0.78, 1.30, 1.72, 2.35, 2.91, 3.36, 3.98, 4.55,
                 5.02, 5.61, 6.20, 6.74, 7.28, 7.83, 8.40, 8.96)
DEFAULT_INTERSECTIONS = (0.52, 1.05, 2.10, 2.62, 4.20, 4.80, 6.45, 7.05, 8.10)

# Independent RNG streams derived from one master seed.
STREAM_PROFILE = 0
STREAM_SPEEDS = 1
STREAM_ARRIVALS = 2
STREAM_SIGNALS = 3
STREAM_POLICY = 4


class ConfigError(ValueError):
    pass


class ProfileConstructionError(RuntimeError):
    pass


def stream_rng(seed, stream, *extra):
    """Generator for a named stream of a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream, *extra]))


@dataclass
class RouteConfig:
    length_km: float = 9.21
    stop_positions: tuple = DEFAULT_STOPS
    intersection_positions: tuple = DEFAULT_INTERSECTIONS
    n_buses: int = 16
    mean_speed: float = 27.0        # km/h
    speed_std: float = 4.5          # km/h
    board_time: float = 3.0         # s/pax
    alight_time: float = 1.8        # s/pax
    intersection_red_prob: float = 0.5
    intersection_red_mean: float = 20.0  # s
    min_speed: float = 5.0          # km/h, lower truncation of segment speeds

    def __post_init__(self):
        self.stop_positions = tuple(float(x) for x in self.stop_positions)
        self.intersection_positions = tuple(float(x) for x in self.intersection_positions)

    def validate(self):
        L = self.length_km
        if not L > 0:
            raise ConfigError("length_km must be positive")
        stops = self.stop_positions
        if len(stops) < 2:
            raise ConfigError("need at least two stops")
        if any(b <= a for a, b in zip(stops, stops[1:])):
            raise ConfigError("stop_positions must be strictly increasing")
        if any(not 0 < x < L for x in stops + self.intersection_positions):
            raise ConfigError("stop and intersection positions must lie in (0, length_km)")
        if self.n_buses < 2:
            raise ConfigError("n_buses must be >= 2")
        if not self.mean_speed > 0:
            raise ConfigError("mean_speed must be positive")
        if self.speed_std < 0 or self.board_time < 0 or self.alight_time < 0:
            raise ConfigError("speed_std and dwell constants must be >= 0")
        if not 0 <= self.intersection_red_prob <= 1:
            raise ConfigError("intersection_red_prob must be a probability")
        if self.intersection_red_mean < 0:
            raise ConfigError("intersection_red_mean must be >= 0")
        if not 0 < self.min_speed <= self.mean_speed:
            raise ConfigError("min_speed must be in (0, mean_speed]")
        return self

    @property
    def n_stops(self):
        return len(self.stop_positions)

    @property
    def ring_length(self):
        return 2.0 * self.length_km

    @property
    def equilibrium_headway(self):
        """Even-spacing time headway in seconds, 2L / (N * v_bar)."""
        return self.ring_length / (self.n_buses * self.mean_speed) * 3600.0

    @property
    def ring_time(self):
        """Seconds to traverse the whole ring at the nominal speed."""
        return self.ring_length / self.mean_speed * 3600.0

    def to_dict(self):
        d = asdict(self)
        d["stop_positions"] = list(self.stop_positions)
        d["intersection_positions"] = list(self.intersection_positions)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown route keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class ArrivalProfile:
    """Per-stop Poisson rates (pax/min) whose mean and population std both equal xi."""
    lambdas: np.ndarray
    xi: float
    seed: int = 0
    _check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if self._check:
            self.validate()

    def validate(self):
        lam = self.lambdas
        if np.any(lam < 0):
            raise ConfigError("negative arrival rate")
        if abs(lam.mean() - self.xi) > 1e-9 or abs(lam.std() - self.xi) > 1e-6:
            raise ConfigError("profile violates mean(lambdas) = std(lambdas) = xi")
        return self

    def to_dict(self):
        return {"xi": self.xi, "seed": self.seed, "lambdas": [float(x) for x in self.lambdas]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["lambdas"], dtype=float), float(d["xi"]), int(d.get("seed", 0)))


def _affine_match(x, xi):
    s = x.std()
    if s == 0:
        return None
    return xi + xi * (x - x.mean()) / s


def make_profile(n_stops, xi, seed, max_iter=100, max_attempts=1000):
    """Random rate vector with mean = population std = xi.

    Draws exponential samples, rescales them affinely onto the target moments and
    repeats clip-then-rescale until no rate is negative; resamples on failure.
    """
    if xi < 0:
        raise ConfigError("xi must be >= 0")
    if xi == 0:
        return ArrivalProfile(np.zeros(n_stops), 0.0, seed)
    rng = stream_rng(seed, STREAM_PROFILE)
    for _ in range(max_attempts):
        lam = _affine_match(rng.gamma(1.0, 1.0, size=n_stops), xi)
        for _ in range(max_iter):
            if lam is None or lam.min() >= 0:
                break
            lam = _affine_match(np.clip(lam, 0.0, None), xi)
        if lam is not None and lam.min() >= 0:
            return ArrivalProfile(lam, float(xi), seed)
    raise ProfileConstructionError(
        f"could not build a nonnegative profile with mean=std={xi} over {n_stops} stops")
