import numpy as np
import pytest

from busholding.config import RouteConfig, make_profile
from busholding.sim import Simulation
from busholding.trace import SimTrace


@pytest.fixture
def route():
    return RouteConfig()


def make_sim(xi=0.02, seed=0, route=None, **kw):
    route = route or RouteConfig()
    return Simulation(route, make_profile(route.n_stops, xi, seed), seed, **kw)


def synthetic_trace(positions, times, config, holds=None, passengers=None, end=None):
    """SimTrace from a (T, N) array of ring positions sampled at ``times``."""
    positions = np.asarray(positions, dtype=float)
    T, N = positions.shape
    traj = {"time": np.repeat(times, N).astype(float),
            "bus_id": np.tile(np.arange(N), T),
            "position": positions.ravel(),
            "phase": np.zeros(T * N, dtype=int),
            "onboard": np.zeros(T * N, dtype=int)}
    pax = np.zeros((0, 5)) if passengers is None else np.asarray(passengers, dtype=float)
    hold = np.zeros((0, 4)) if holds is None else np.asarray(holds, dtype=float)
    end = float(times[-1] + (times[1] - times[0])) if end is None else end
    return SimTrace(config, None, 0, "test", end, traj, pax.reshape(-1, 5), hold.reshape(-1, 4))


def numeric_grad(f, params, h=1e-6):
    """Central differences of the scalar f() w.r.t. every entry of each array in params."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = f()
            p[i] = old - h
            down = f()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_error(a, b):
    """Norm-wise relative error between two gradient arrays."""
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def random_batch(rng, n, n_actor, n_critic, theta=None):
    """Synthetic Batch with ratios spread around 1 when ``theta`` is given."""
    from busholding.ppo import Batch, forward_policy, log_prob
    s = rng.normal(size=(n, n_actor))
    a = rng.normal(scale=0.5, size=n)
    if theta is not None:
        mean, ls = forward_policy(theta, s)
        lp_old = log_prob(mean, ls, a) + rng.normal(scale=0.4, size=n)
    else:
        lp_old = rng.normal(size=n)
    return Batch(s, rng.normal(size=(n, n_critic)), a, lp_old,
                 rng.normal(size=n), rng.normal(size=n))
