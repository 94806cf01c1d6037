"""Experiment configuration and the gen-env / simulate / train / evaluate / sweep commands."""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import numpy as np

from .agent import PolicyController
from .config import ConfigError, RouteConfig, make_profile, stream_rng, STREAM_POLICY
from .controllers import DualHeadwayHolding, DualHeadwayParams, NoControl
from .metrics import expected_wait, export_summary, summarize
from .nn import Mlp, PolicyParams, load_checkpoint, save_checkpoint
from .ppo import NetworkSnapshots, Optimizers, ReplayBuffer, TrainConfig, train_epoch
from .sim import Simulation

log = logging.getLogger(__name__)

CONTROLLERS = ("none", "dual-headway", "rl", "ippo-dh")
LEARNED = ("rl", "ippo-dh")
DEFAULT_XI_GRID = (0.010, 0.015, 0.020, 0.025, 0.030, 0.035, 0.040)


class DivergenceError(RuntimeError):
    pass


def _check_keys(d, allowed, where):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    route: dict = field(default_factory=dict)
    xi_grid: list = field(default_factory=lambda: list(DEFAULT_XI_GRID))
    controller: str = "dual-headway"
    controllers: list = field(default_factory=lambda: list(CONTROLLERS))
    dual_headway: dict = field(default_factory=lambda: {"beta": 0.6, "r": 1.0, "alpha": None})
    train: dict = field(default_factory=dict)
    n_epochs: int = 200
    episode_s: float = 28800.0
    train_xi: float = 0.01
    train_seed: int = 0
    eval_every: int = 10
    eval_duration_s: float = 21600.0
    duration_s: float = 86400.0
    warmup_s: float = 7200.0
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "out"
    checkpoint: str = None
    checkpoints: dict = field(default_factory=dict)
    bunching: dict = field(default_factory=lambda: {"threshold_fraction": 0.25,
                                                    "min_duration_s": 120.0})
    record_dt: float = 10.0
    workers: int = 1

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, [f.name for f in fields(cls)], "config")
        cfg = cls(**d)
        return cfg.validate()

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def validate(self):
        self.route_config()
        self.train_config()
        _check_keys(self.dual_headway, ("beta", "r", "alpha"), "dual_headway")
        _check_keys(self.bunching, ("threshold_fraction", "min_duration_s"), "bunching")
        if not self.xi_grid or any(x < 0 for x in self.xi_grid):
            raise ConfigError("xi_grid must be non-empty and nonnegative")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be positive")
        for c in [self.controller, *self.controllers]:
            if c not in CONTROLLERS:
                raise ConfigError(f"unknown controller {c!r}; expected one of {CONTROLLERS}")
        _check_keys(self.checkpoints, LEARNED, "checkpoints")
        if self.n_epochs < 0 or self.episode_s <= 0 or self.workers < 1:
            raise ConfigError("n_epochs >= 0, episode_s > 0 and workers >= 1 required")
        return self

    def route_config(self):
        try:
            return RouteConfig.from_dict(self.route)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self):
        _check_keys(self.train, [f.name for f in fields(TrainConfig)], "train")
        try:
            return TrainConfig(**self.train).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dh_params(self, xi):
        return DualHeadwayParams.for_route(self.route_config(), xi, **self.dual_headway)

    def to_dict(self):
        return asdict(self)


# ---- networks and controllers --------------------------------------------

def init_networks(route, tc, seed):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 77]))
    theta = PolicyParams.init(2, tc.hidden, rng, log_std=tc.init_log_std)
    phi = Mlp([2 * route.n_buses, *tc.hidden, 1], rng=rng)
    return theta, phi


def network_sizes(route, tc):
    return [2, *tc.hidden, 1], [2 * route.n_buses, *tc.hidden, 1]


def make_controller(cfg, name, xi, networks=None, buffer=None, rng=None,
                    zero_overlay=False, episode=0):
    route = cfg.route_config()
    if name == "none":
        return NoControl()
    if name == "dual-headway":
        return DualHeadwayHolding(cfg.dh_params(xi))
    if networks is None:
        raise ConfigError(f"controller {name!r} needs a trained checkpoint")
    theta, phi = networks
    tc = cfg.train_config()
    return PolicyController(name, theta, phi, tc, cfg.dh_params(xi), route.equilibrium_headway,
                            buffer=buffer, rng=rng, zero_overlay=zero_overlay, episode=episode)


def load_networks(cfg, name, path=None):
    path = path or cfg.checkpoints.get(name) or cfg.checkpoint
    if not path:
        raise ConfigError(f"controller {name!r} needs a checkpoint but none is configured")
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    psize, vsize = network_sizes(cfg.route_config(), cfg.train_config())
    theta, phi, _ = load_checkpoint(path, psize, vsize)
    return theta, phi


def run_cell(cfg, name, xi, seed, networks=None, duration=None, zero_overlay=False,
             check_invariants=False):
    """Simulate one (controller, xi, seed) cell; returns (trace, summary)."""
    route = cfg.route_config()
    tc = cfg.train_config()
    sim = Simulation(route, make_profile(route.n_stops, xi, seed), seed, max_hold=tc.max_hold,
                     record_dt=cfg.record_dt, check_invariants=check_invariants)
    ctrl = make_controller(cfg, name, xi, networks, zero_overlay=zero_overlay)
    trace = sim.run(ctrl, duration or cfg.duration_s)
    summary = summarize(trace, xi, seed, name, cfg.warmup_s, **cfg.bunching)
    return trace, summary


# ---- commands -------------------------------------------------------------

def profile_path(out, xi, seed):
    return Path(out) / "profiles" / f"profile_xi{xi:.3f}_seed{seed}.json"


def gen_env(cfg, out):
    route = cfg.route_config()
    paths = []
    for xi in cfg.xi_grid:
        for seed in cfg.seeds:
            p = profile_path(out, xi, seed)
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(json.dumps(make_profile(route.n_stops, xi, seed).to_dict(), indent=1))
            paths.append(p)
    return paths


def simulate(cfg, out):
    """Run the configured controller on every (xi, seed); traces go to per-cell folders."""
    out = Path(out)
    networks = load_networks(cfg, cfg.controller) if cfg.controller in LEARNED else None
    summaries = []
    for xi in cfg.xi_grid:
        for seed in cfg.seeds:
            trace, s = run_cell(cfg, cfg.controller, xi, seed, networks)
            trace.to_csv(out / f"{cfg.controller}_xi{xi:.3f}_seed{seed}")
            summaries.append(s)
    export_summary(summaries, out / "summary.csv")
    return summaries


def _epoch_seed(seed, epoch):
    return int(np.random.SeedSequence([int(seed), 1000, epoch]).generate_state(1)[0])


def evaluate_policy(cfg, name, networks, xi, seed, duration):
    """Demand-weighted expected wait of a deterministic policy run (low-variance score)."""
    trace, _ = run_cell(cfg, name, xi, seed, networks, duration=duration)
    route = cfg.route_config()
    return expected_wait(trace.departures, trace.profile.lambdas, route.n_stops,
                         min(cfg.warmup_s, duration / 2))


def train(cfg, out=None, name=None, n_epochs=None, progress=None):
    """Alternate trajectory collection and PPO updates.

    Returns (theta, phi, log_rows). With ``out`` the final and best checkpoints
    and train_log.csv are written there.
    """
    name = name or cfg.controller
    if name not in LEARNED:
        raise ConfigError(f"controller {name!r} is not trainable")
    n_epochs = cfg.n_epochs if n_epochs is None else n_epochs
    route = cfg.route_config()
    tc = cfg.train_config()
    seed = cfg.train_seed
    theta, phi = init_networks(route, tc, seed)
    snaps = NetworkSnapshots.of(theta, phi)
    optim = Optimizers(theta, phi, tc)
    upd_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2000]))
    buffer = ReplayBuffer()
    rows = []
    best = (math.inf, theta.copy(), phi.copy())
    eval_seed = int(seed) + 10_000
    for epoch in range(n_epochs):
        env_seed = _epoch_seed(seed, epoch)
        sim = Simulation(route, make_profile(route.n_stops, cfg.train_xi, env_seed), env_seed,
                         max_hold=tc.max_hold, record_dt=max(cfg.record_dt, 60.0))
        ctrl = make_controller(cfg, name, cfg.train_xi, (theta, phi), buffer,
                               stream_rng(env_seed, STREAM_POLICY), episode=epoch)
        sim.run(ctrl, cfg.episode_s)
        theta, phi, snaps, diag = train_epoch(buffer, theta, phi, snaps, tc, upd_rng, optim)
        if not (math.isfinite(diag["policy_loss"]) and math.isfinite(diag["value_loss"])):
            raise DivergenceError(f"non-finite loss at epoch {epoch}: {diag}")
        row = {"epoch": epoch, "mean_reward": diag["mean_reward"],
               "policy_loss": diag["policy_loss"], "value_loss": diag["value_loss"],
               "clip_fraction": diag["clip_fraction"], "n_transitions": diag["n_transitions"],
               "mean_delta": float(np.mean(ctrl.deltas)), "log_std": float(theta.log_std[0]),
               "eval_wait_s": math.nan}
        if cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch == n_epochs - 1):
            w = evaluate_policy(cfg, name, (theta, phi), cfg.train_xi, eval_seed,
                                cfg.eval_duration_s)
            row["eval_wait_s"] = w
            if w < best[0]:
                best = (w, theta.copy(), phi.copy())
        rows.append(row)
        if progress:
            progress(row)
    if out is not None:
        out = Path(out)
        meta = {"controller": name, "epochs": n_epochs, "train_xi": cfg.train_xi, "seed": seed}
        save_checkpoint(out / f"{name}_final.json", theta, phi, meta)
        if math.isfinite(best[0]):
            save_checkpoint(out / f"{name}_best.json", best[1], best[2],
                            dict(meta, eval_wait_s=best[0]))
        else:
            save_checkpoint(out / f"{name}_best.json", theta, phi, meta)
        write_rows(out / f"{name}_train_log.csv", rows)
    return theta, phi, rows


def write_rows(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return path
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return path


def _cell_job(args):
    cfg_dict, name, xi, seed, ckpt = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        networks = load_networks(cfg, name, ckpt) if name in LEARNED else None
        return run_cell(cfg, name, xi, seed, networks)[1], None
    except Exception as exc:  # recorded per cell; the sweep carries on
        return None, (name, xi, seed, f"{type(exc).__name__}: {exc}")


def run_cells(cfg, names, checkpoint_for):
    jobs = [(cfg.to_dict(), n, xi, seed, checkpoint_for(n))
            for n in names for xi in cfg.xi_grid for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    summaries = [s for s, _ in results if s is not None]
    failures = [f for _, f in results if f is not None]
    return summaries, failures


def _write_outputs(out, summaries, failures):
    out = Path(out)
    export_summary(summaries, out / "summary.csv")
    if failures:
        with open(out / "failures.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("controller", "xi", "seed", "error"))
            w.writerows(sorted(failures))


def evaluate(cfg, out):
    """Metrics of the configured controller over xi_grid x seeds."""
    name = cfg.controller
    summaries, failures = run_cells(cfg, [name], lambda n: cfg.checkpoints.get(n) or cfg.checkpoint)
    _write_outputs(out, summaries, failures)
    return summaries, failures


def sweep(cfg, out):
    """Full controllers x xi_grid x seeds cross product into one summary.csv."""
    for n in cfg.controllers:
        if n in LEARNED and not (cfg.checkpoints.get(n) or cfg.checkpoint):
            raise ConfigError(f"sweep needs a checkpoint for {n!r}")
    summaries, failures = run_cells(cfg, cfg.controllers, lambda n: cfg.checkpoints.get(n))
    _write_outputs(out, summaries, failures)
    return summaries, failures
