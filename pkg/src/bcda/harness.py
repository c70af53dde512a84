"""Experiment runner: seeded trials, periodic greedy evaluation, artifacts.

Output files per experiment directory:

* ``curves.csv``  ``trial,timestep,avg_reward,ma_reward`` (deterministic)
* ``band.csv``    ``timestep,mean,lower,upper`` across trials (mean +- 0.5 std)
* ``timing.csv``  ``trial,timestep,wall_clock_s`` cumulative training time
* ``summary.csv`` ``agent,task,trial,max_avg_reward,train_time_s``
* ``curves.svg``  mean curve with the half-std band
"""

import csv
import dataclasses
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from .agents import AgentConfig, make_agent
from .envs import ENVIRONMENTS, make_env
from .errors import ConfigError, MisalignedTrials

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    task: str = "invpen"
    agent: str = "bcda"
    trials: int = 5
    total_steps: int = 100_000
    eval_interval: int = 500
    eval_episodes: int = 5
    ma_window: int = 10
    seed_base: int = 0
    output_dir: str = "runs"
    workers: int = 1
    agent_cfg: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if isinstance(self.agent_cfg, dict):
            self.agent_cfg = AgentConfig(**self.agent_cfg)
        if self.task not in ENVIRONMENTS:
            raise ConfigError(f"task must be one of {sorted(ENVIRONMENTS)}, got {self.task!r}")
        if self.agent not in ("bcda", "ddpg"):
            raise ConfigError(f"agent must be 'bcda' or 'ddpg', got {self.agent!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.total_steps < 0 or self.eval_interval < 1:
            raise ConfigError("total_steps must be >= 0 and eval_interval >= 1")
        if self.total_steps % self.eval_interval:
            raise ConfigError("eval_interval must divide total_steps")
        if self.eval_episodes < 1 or self.ma_window < 1 or self.workers < 1:
            raise ConfigError("eval_episodes, ma_window and workers must be >= 1")

    def replace(self, **changes):
        agent_keys = {f.name for f in dataclasses.fields(AgentConfig)}
        agent_changes = {k: v for k, v in changes.items() if k in agent_keys}
        rest = {k: v for k, v in changes.items() if k not in agent_keys}
        agent_cfg = dataclasses.replace(self.agent_cfg, **agent_changes)
        return dataclasses.replace(self, agent_cfg=agent_cfg, **rest)


@dataclass
class EvalRecord:
    trial: int
    timestep: int
    avg_reward: float
    wall_clock_s: float


@dataclass
class TrialResult:
    records: list
    agent: object
    updates: list = field(default_factory=list)


@dataclass
class ExperimentSummary:
    agent: str
    task: str
    max_avg_reward: list
    train_time_s: list
    records: list
    band: dict

    @property
    def mean_train_time(self):
        return float(np.mean(self.train_time_s))


_EXPERIMENT_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"agent_cfg"}
_AGENT_KEYS = {f.name for f in dataclasses.fields(AgentConfig)}


def config_from_mapping(values):
    """Build a config from a flat mapping of experiment and agent keys."""
    unknown = set(values) - _EXPERIMENT_KEYS - _AGENT_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    exp = {k: v for k, v in values.items() if k in _EXPERIMENT_KEYS}
    agent = {k: v for k, v in values.items() if k in _AGENT_KEYS}
    try:
        return ExperimentConfig(**exp, agent_cfg=AgentConfig(**agent))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=None):
    """Read a flat ``key: value`` YAML file; ``overrides`` win over file values."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict) or any(isinstance(v, dict) for v in loaded.values()):
            raise ConfigError(f"{path} must be a flat key-value mapping")
        values.update(loaded)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(values)


def trial_seeds(seed_base, trial_index):
    """Independent integer seeds for the agent, training env and evaluation env."""
    children = np.random.SeedSequence(seed_base + trial_index).spawn(3)
    return [int(c.generate_state(1)[0]) for c in children]


def evaluate(agent, env, episodes):
    """Mean undiscounted return of the noise-free policy; touches no training state."""
    total = 0.0
    for _ in range(episodes):
        s = env.reset()
        while True:
            res = env.step(agent.select_action(s, explore=False))
            total += res.reward
            if res.terminated or res.truncated:
                break
            s = res.next_obs
    return total / episodes


def run_trial(cfg, trial_index, stop_when=None, checkpoint_dir=None, keep_updates=False):
    """Run one seeded trial of ``cfg.total_steps`` environment steps.

    ``stop_when(records)`` may end the run early after any evaluation.
    """
    agent_seed, env_seed, eval_seed = trial_seeds(cfg.seed_base, trial_index)
    env = make_env(cfg.task, np.random.default_rng(env_seed))
    eval_env = make_env(cfg.task, np.random.default_rng(eval_seed))
    agent = make_agent(cfg.agent, env.spec(), cfg.agent_cfg, agent_seed)

    records, updates = [], []
    train_time = 0.0
    s = env.reset()
    for t in range(1, cfg.total_steps + 1):
        t0 = time.perf_counter()
        a = agent.select_action(s, explore=True)
        res = env.step(a)
        agent.observe(s, a, res.reward, res.next_obs, res.terminated)
        s = env.reset() if res.terminated or res.truncated else res.next_obs
        report = agent.maybe_update()
        train_time += time.perf_counter() - t0
        if keep_updates and report is not None:
            updates.append(report)

        if t % cfg.eval_interval == 0:
            avg = evaluate(agent, eval_env, cfg.eval_episodes)
            records.append(EvalRecord(trial_index, t, avg, train_time))
            log.info("%s/%s trial %d step %d reward %.4f time %.1fs",
                     cfg.agent, cfg.task, trial_index, t, avg, train_time)
            if stop_when is not None and stop_when(records):
                break
    if checkpoint_dir is not None:
        agent.save(checkpoint_dir)
    return TrialResult(records, agent, updates)


def moving_average(series, window):
    """Trailing mean with an expanding window over the first ``window - 1`` points."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return []
    c = np.cumsum(np.concatenate([[0.0], x]))
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - window)
    return list((c[idx] - c[lo]) / (idx - lo))


def curve_band(records_by_trial, window):
    """Mean over trials of the moving-averaged rewards, with a +-0.5 std band."""
    grids = [[r.timestep for r in recs] for recs in records_by_trial]
    if any(g != grids[0] for g in grids):
        raise MisalignedTrials("trials were evaluated at different timesteps")
    ma = np.array([moving_average([r.avg_reward for r in recs], window) for recs in records_by_trial])
    if ma.size == 0:
        return {"timestep": [], "mean": [], "lower": [], "upper": []}
    mean = ma.mean(axis=0)
    half = 0.5 * ma.std(axis=0)
    return {"timestep": grids[0], "mean": list(mean), "lower": list(mean - half),
            "upper": list(mean + half)}


def _fmt(x):
    return repr(float(x))


def curves_csv(records_by_trial, window):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "timestep", "avg_reward", "ma_reward"])
    for recs in records_by_trial:
        ma = moving_average([r.avg_reward for r in recs], window)
        for r, m in zip(recs, ma):
            w.writerow([r.trial, r.timestep, _fmt(r.avg_reward), _fmt(m)])
    return buf.getvalue()


def render_svg(band, title="", width=640, height=400, pad=48):
    """Hand-written SVG: filled band polygon under a mean polyline."""
    ts = np.asarray(band["timestep"], dtype=np.float64)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if ts.size:
        lo, hi = np.asarray(band["lower"]), np.asarray(band["upper"])
        y_min, y_max = float(lo.min()), float(hi.max())
        if y_max == y_min:
            y_min, y_max = y_min - 1.0, y_max + 1.0
        x_min, x_max = float(ts.min()), float(ts.max()) if ts.max() > ts.min() else float(ts.min()) + 1.0

        def px(t):
            return pad + (t - x_min) / (x_max - x_min) * (width - 2 * pad)

        def py(v):
            return height - pad - (v - y_min) / (y_max - y_min) * (height - 2 * pad)

        upper = [f"{px(t):.2f},{py(v):.2f}" for t, v in zip(ts, hi)]
        lower = [f"{px(t):.2f},{py(v):.2f}" for t, v in zip(ts[::-1], lo[::-1])]
        mean = [f"{px(t):.2f},{py(v):.2f}" for t, v in zip(ts, band["mean"])]
        lines += [
            f'<polygon points="{" ".join(upper + lower)}" fill="steelblue" fill-opacity="0.25" stroke="none"/>',
            f'<polyline points="{" ".join(mean)}" fill="none" stroke="steelblue" stroke-width="2"/>',
            f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
            f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
            f'<text x="{pad}" y="{height - pad / 3:.0f}" font-size="12">{x_min:g}</text>',
            f'<text x="{width - pad}" y="{height - pad / 3:.0f}" font-size="12" text-anchor="end">{x_max:g}</text>',
            f'<text x="{pad - 4}" y="{height - pad}" font-size="12" text-anchor="end">{y_min:.3g}</text>',
            f'<text x="{pad - 4}" y="{pad}" font-size="12" text-anchor="end">{y_max:.3g}</text>',
        ]
    if title:
        lines.append(f'<text x="{width / 2:.0f}" y="{pad / 2:.0f}" font-size="14" text-anchor="middle">{title}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_curves(records_by_trial, cfg, out_dir, svg=True):
    """Write ``curves.csv``, ``band.csv`` and (optionally) ``curves.svg``; return the band."""
    band = curve_band(records_by_trial, cfg.ma_window)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "curves.csv"), "w", newline="") as fh:
        fh.write(curves_csv(records_by_trial, cfg.ma_window))
    with open(os.path.join(out_dir, "band.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestep", "mean", "lower", "upper"])
        for row in zip(band["timestep"], band["mean"], band["lower"], band["upper"]):
            w.writerow([row[0], *map(_fmt, row[1:])])
    if svg:
        with open(os.path.join(out_dir, "curves.svg"), "w") as fh:
            fh.write(render_svg(band, f"{cfg.agent} on {cfg.task}"))
    return band


def _trial_worker(args):
    cfg, i, out_dir = args
    ckpt = None if out_dir is None else os.path.join(out_dir, f"checkpoint_trial{i}")
    return run_trial(cfg, i, checkpoint_dir=ckpt).records


def run_experiment(cfg, out_dir=None, config_text=None):
    """Run every trial, write artifacts under ``out_dir`` (default ``cfg.output_dir``)."""
    out_dir = cfg.output_dir if out_dir is None else out_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    jobs = [(cfg, i, out_dir) for i in range(cfg.trials)]
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            all_records = list(pool.map(_trial_worker, jobs))
    else:
        all_records = [_trial_worker(j) for j in jobs]

    band = emit_curves(all_records, cfg, out_dir)
    max_rewards = [max((r.avg_reward for r in recs), default=float("nan")) for recs in all_records]
    times = [recs[-1].wall_clock_s if recs else 0.0 for recs in all_records]

    with open(os.path.join(out_dir, "timing.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "timestep", "wall_clock_s"])
        for recs in all_records:
            for r in recs:
                w.writerow([r.trial, r.timestep, _fmt(r.wall_clock_s)])
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "task", "trial", "max_avg_reward", "train_time_s"])
        for i, (m, t) in enumerate(zip(max_rewards, times)):
            w.writerow([cfg.agent, cfg.task, i, _fmt(m), _fmt(t)])
    if config_text is not None:
        with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
            fh.write(config_text)
    with open(os.path.join(out_dir, "resolved_config.yaml"), "w") as fh:
        yaml.safe_dump(flat_config(cfg), fh, sort_keys=True)
    return ExperimentSummary(cfg.agent, cfg.task, max_rewards, times, all_records, band)


def flat_config(cfg):
    values = {k: getattr(cfg, k) for k in sorted(_EXPERIMENT_KEYS)}
    agent = dataclasses.asdict(cfg.agent_cfg)
    agent["hidden"] = list(agent["hidden"])
    values.update(agent)
    return values


def steps_to_fraction(records, window, fraction=0.8):
    """First timestep at which the moving average reaches ``fraction`` of its final value."""
    ma = moving_average([r.avg_reward for r in records], window)
    if not ma:
        return None
    goal = fraction * ma[-1]
    for r, m in zip(records, ma):
        if m >= goal:
            return r.timestep
    return records[-1].timestep
