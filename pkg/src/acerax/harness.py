"""Experiment machinery: config files, manifests, metrics CSV, sweeps, and checks.

Config files are flat key = value text grouped under arbitrary [sections];
section names are organizational only and every key must name a Config field
(plus the special key ``preset``). Command-line overrides win over file
values. All CSV output uses comma separators, '.' decimals, a header row, and
LF line endings, with floats rendered by shortest round-trip repr so reruns
are byte-identical.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import dispersion
from . import policy as gp
from .agent import (
    Config,
    PRESETS,
    box_penalty,
    box_penalty_grad,
    checkpoint_bytes,
    evaluate,
    load_checkpoint,
    run_training,
    MetricsRow,
    TrainResult,
)
from .envs import make_env, riccati_policy
from .nets import DenseNet, finite_diff_check

CSV_FIELDS = (
    "step",
    "mean_return",
    "std_return",
    "min_eta",
    "max_eta",
    "critic_loss",
    "dispersion_loss",
    "actor_term",
)

OUT_ENV_VAR = "ACERAX_OUT"
SEED_ENV_VAR = "ACERAX_SEED"


class ConfigError(ValueError):
    """A config file or override could not be parsed."""


# -- config parsing -----------------------------------------------------------


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _parse_optional_float(text: str):
    if text.strip().lower() in ("", "none", "env"):
        return None
    return float(text)


def _parse_sigma(text: str):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) == 1:
        return float(parts[0])
    return tuple(float(p) for p in parts)


_PARSERS = {
    "env": str.strip,
    "seed": int,
    "gamma": float,
    "n_step": int,
    "trunc_level": float,
    "hard_truncation": _parse_bool,
    "alpha": float,
    "capacity": int,
    "minibatch": int,
    "gradient_steps": int,
    "actor_step_size": float,
    "critic_step_size": float,
    "eta_step_size": float,
    "mean_hidden": _parse_int_tuple,
    "critic_hidden": _parse_int_tuple,
    "eta_hidden": _parse_int_tuple,
    "eta_output_bias": float,
    "penalty_coeff": float,
    "action_box": _parse_optional_float,
    "mode": str.strip,
    "sigma": _parse_sigma,
    "total_steps": int,
    "eval_interval": int,
    "eval_episodes": int,
    "env_noise": _parse_optional_float,
}

assert set(_PARSERS) == {f.name for f in fields(Config)}


def _key_line(path: Path, key: str) -> int | None:
    for i, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) and stripped[len(key) :].lstrip()[:1] in ("=", ":"):
            return i
    return None


def parse_overrides(pairs: dict[str, str], path: Path | None = None) -> dict:
    """Parse raw key -> value-text pairs into Config field values."""
    parsed = {}
    for key, text in pairs.items():
        if key not in _PARSERS:
            loc = ""
            if path is not None:
                line = _key_line(path, key)
                loc = f"{path}:{line}: " if line else f"{path}: "
            raise ConfigError(f"{loc}unknown config key {key!r}")
        try:
            parsed[key] = _PARSERS[key](text)
        except ValueError as err:
            loc = ""
            if path is not None:
                line = _key_line(path, key)
                loc = f"{path}:{line}: " if line else f"{path}: "
            raise ConfigError(f"{loc}bad value for {key}: {err}") from err
    return parsed


def config_from_file(path: str | Path) -> Config:
    """Load a Config from flat key = value text with [sections]."""
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from err
    raw: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in raw:
                line = _key_line(path, key)
                raise ConfigError(f"{path}:{line}: duplicate key {key!r}")
            raw[key] = value
    preset = raw.pop("preset", "toy")
    if preset not in PRESETS:
        raise ConfigError(f"{path}: unknown preset {preset!r}; known: {sorted(PRESETS)}")
    base = PRESETS[preset]()
    cfg = replace(base, **parse_overrides(raw, path))
    cfg.validate()
    return cfg


def config_to_dict(config: Config) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> Config:
    """Rebuild a Config from a manifest snapshot (JSON turns tuples into lists)."""
    known = {f.name for f in fields(Config)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    values = dict(d)
    for key in ("mean_hidden", "critic_hidden", "eta_hidden"):
        if key in values and values[key] is not None:
            values[key] = tuple(int(v) for v in values[key])
    if isinstance(values.get("sigma"), list):
        values["sigma"] = tuple(float(v) for v in values["sigma"])
    cfg = replace(Config(), **values)
    cfg.validate()
    return cfg


# -- manifests and metrics ------------------------------------------------------


def code_hash() -> str:
    """Content hash of the installed package sources."""
    root = Path(__file__).parent
    digest = hashlib.sha256()
    for p in sorted(root.glob("*.py")):
        digest.update(p.name.encode())
        digest.update(p.read_bytes())
    return digest.hexdigest()


def write_manifest(
    path: Path, config: Config, started_at: float, finished_at: float, outputs: dict[str, str]
) -> None:
    doc = {
        "config": config_to_dict(config),
        "seed": config.seed,
        "code_hash": code_hash(),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started_at)),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(finished_at)),
        "outputs": outputs,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def config_from_manifest(path: str | Path) -> Config:
    doc = json.loads(Path(path).read_text())
    return config_from_dict(doc["config"])


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(path: Path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(CSV_FIELDS) + "\n")
        for r in rows:
            f.write(
                f"{r.step},{_fmt(r.mean_return)},{_fmt(r.std_return)},"
                f"{_fmt(r.min_eta)},{_fmt(r.max_eta)},{_fmt(r.critic_loss)},"
                f"{_fmt(r.dispersion_loss)},{_fmt(r.actor_term)}\n"
            )


def read_metrics_csv(path: Path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        for rec in reader:
            rows.append(
                MetricsRow(
                    step=int(rec["step"]),
                    **{k: float(rec[k]) for k in CSV_FIELDS[1:]},
                )
            )
    return rows


# -- train / sweep drivers -------------------------------------------------------


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


def run_name(config: Config) -> str:
    return f"{config.env}_{config.mode}_seed{config.seed}"


def train_to_dir(config: Config, out_dir: str | Path) -> TrainResult:
    """Run one training job and write metrics.csv, final.ckpt, and manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    env = make_env(config.env, config.env_noise)
    result = run_training(env, config)
    metrics_path = out_dir / "metrics.csv"
    ckpt_path = out_dir / "final.ckpt"
    write_metrics_csv(metrics_path, result.rows)
    ckpt_path.write_bytes(checkpoint_bytes(result.params, result.critic))
    write_manifest(
        out_dir / "manifest.json",
        config,
        started,
        time.time(),
        outputs={"metrics": metrics_path.name, "checkpoint": ckpt_path.name},
    )
    return result


@dataclass(frozen=True)
class SweepCell:
    param: str
    value_text: str
    seed: int
    out_dir: str


@dataclass
class CellOutcome:
    cell: SweepCell
    final: MetricsRow | None
    error: str | None


def _run_cell(args: tuple[dict, str]) -> tuple[dict | None, str | None]:
    config_dict, out_dir = args
    try:
        config = config_from_dict(config_dict)
        result = train_to_dir(config, out_dir)
        return asdict(result.rows[-1]), None
    except Exception as err:  # cell failures are recorded, not fatal
        return None, f"{type(err).__name__}: {err}"


def run_sweep(
    base: Config,
    param: str,
    values: list[str],
    seeds: list[int],
    out_root: str | Path,
    jobs: int = 1,
) -> tuple[list[CellOutcome], bool]:
    """Run every (value, seed) cell; write per-cell outputs plus summary tables.

    Returns the outcomes and whether every cell succeeded. An empty value or
    seed list is a no-op success.
    """
    if param not in _PARSERS:
        raise ConfigError(f"unknown sweep parameter {param!r}")
    out_root = Path(out_root)
    cells: list[SweepCell] = []
    configs: list[Config] = []
    for value in values:
        cfg_v = replace(base, **parse_overrides({param: value}))
        for seed in seeds:
            cfg = replace(cfg_v, seed=int(seed))
            cfg.validate()
            cell_dir = out_root / f"{param}={value}" / f"seed{seed}"
            cells.append(SweepCell(param, value, int(seed), str(cell_dir)))
            configs.append(cfg)
    if not cells:
        return [], True

    args = [(config_to_dict(cfg), cell.out_dir) for cfg, cell in zip(configs, cells)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_run_cell, args))
    else:
        raw = [_run_cell(a) for a in args]

    outcomes = []
    for cell, (final_dict, error) in zip(cells, raw):
        final = MetricsRow(**final_dict) if final_dict is not None else None
        outcomes.append(CellOutcome(cell=cell, final=final, error=error))

    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / "summary.csv", "w", newline="") as f:
        f.write("param,value,seed,status,final_step,final_mean_return,final_std_return,"
                "final_min_eta,final_max_eta,path\n")
        for oc in outcomes:
            if oc.final is None:
                stats = "error,,,,"
            else:
                r = oc.final
                stats = (
                    f"ok,{r.step},{_fmt(r.mean_return)},{_fmt(r.std_return)},"
                    f"{_fmt(r.min_eta)},{_fmt(r.max_eta)}"
                )
            f.write(f"{oc.cell.param},{oc.cell.value_text},{oc.cell.seed},{stats},"
                    f"{oc.cell.out_dir}\n")
    with open(out_root / "aggregate.csv", "w", newline="") as f:
        f.write("param,value,runs,mean_final_return,std_final_return\n")
        for value in values:
            finals = [
                oc.final.mean_return
                for oc in outcomes
                if oc.cell.value_text == value and oc.final is not None
            ]
            if finals:
                f.write(
                    f"{param},{value},{len(finals)},{_fmt(np.mean(finals))},"
                    f"{_fmt(np.std(finals))}\n"
                )
            else:
                f.write(f"{param},{value},0,,\n")
    ok = all(oc.error is None for oc in outcomes)
    return outcomes, ok


# -- evaluation ----------------------------------------------------------------


def rollout_policy(env, act, episodes: int, rng: np.random.Generator) -> np.ndarray:
    """Undiscounted episode returns of a deterministic state->action callable."""
    if episodes < 1:
        raise ValueError(f"episodes must be positive, got {episodes}")
    returns = np.empty(episodes)
    for ep in range(episodes):
        s = env.reset(rng)
        total = 0.0
        while True:
            res = env.step(act(s), rng)
            total += res.reward
            s = res.next_state
            if res.terminal or res.truncated:
                break
        returns[ep] = total
    return returns


def riccati_reference_return(
    gamma: float, episodes: int, seed: int, noise_std: float | None = None
) -> np.ndarray:
    """Episode returns of the optimal-control reference policy on lqr2."""
    env = make_env("lqr2", noise_std)
    act = riccati_policy(gamma, env)
    return rollout_policy(env, act, episodes, np.random.default_rng(seed))


def eval_checkpoint(
    checkpoint: str | Path,
    env_name: str,
    episodes: int,
    seed: int,
    gamma: float = 0.98,
    noise_std: float | None = None,
) -> np.ndarray:
    """Episode returns of a saved policy (or the built-in "riccati" reference)."""
    env = make_env(env_name, noise_std)
    rng = np.random.default_rng(seed)
    if str(checkpoint) == "riccati":
        if env_name != "lqr2":
            raise ValueError("the riccati reference policy only exists for lqr2")
        return rollout_policy(env, riccati_policy(gamma, env), episodes, rng)
    params, _critic = load_checkpoint(Path(checkpoint).read_bytes())
    spec = env.spec
    if params.state_dim != spec.state_dim or params.action_dim != spec.action_dim:
        raise ValueError(
            f"checkpoint shapes (state {params.state_dim}, action {params.action_dim}) "
            f"do not match {env_name} (state {spec.state_dim}, action {spec.action_dim})"
        )
    box = (spec.action_low, spec.action_high)
    return evaluate(env, params, box, episodes, rng).returns


def append_eval_log(path: Path, checkpoint: str, env_name: str, seed: int, returns: np.ndarray):
    new = not path.exists()
    with open(path, "a", newline="") as f:
        if new:
            f.write("checkpoint,env,episodes,seed,mean_return,std_return\n")
        f.write(
            f"{checkpoint},{env_name},{len(returns)},{seed},"
            f"{_fmt(returns.mean())},{_fmt(returns.std())}\n"
        )


# -- gradient-check suite ---------------------------------------------------------


@dataclass(frozen=True)
class GradCheckCase:
    name: str
    max_rel_error: float
    worst_draw: int
    worst_coordinate: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradcheck_suite(
    seed: int = 0,
    draws: int = 100,
    tolerance: float = 1e-4,
    step: float = 1e-6,
    alpha: float = 0.1,
    corruption: float = 0.0,
) -> list[GradCheckCase]:
    """Finite-difference sweeps over the three loss gradients at random draws.

    Small network shapes keep the runtime low; the differentiated code paths
    are size-independent. ``corruption`` offsets the analytic gradients and
    exists so tests can confirm the check actually detects broken gradients.
    """
    rng = np.random.default_rng(seed)
    state_dim, action_dim, batch = 3, 2, 8
    half_width = np.ones(action_dim)
    worst = {name: (0.0, -1, -1) for name in ("critic", "actor", "dispersion")}

    def corrupt(g: np.ndarray) -> np.ndarray:
        if corruption:
            g = g.copy()
            g[0] += corruption
        return g

    for draw in range(draws):
        mean_net = DenseNet([state_dim, 8, 6, action_dim], rng=rng)
        log_std_net = DenseNet([state_dim, 6, 4, action_dim], rng=rng, output_bias=-1.0)
        critic = DenseNet([state_dim, 10, 8, 1], rng=rng)
        states = rng.standard_normal((batch, state_dim))
        actions = rng.standard_normal((batch, action_dim))
        modes = rng.standard_normal((batch, action_dim))
        e = rng.standard_normal(batch)

        def critic_loss(p):
            critic.flat[:] = p
            return float(np.mean(e * critic.forward_batch(states)[:, 0]))

        def critic_gradient(p):
            critic.flat[:] = p
            return corrupt(critic.backward_batch(states, e[:, None] / batch))

        def actor_loss(p):
            mean_net.flat[:] = p
            means = mean_net.forward_batch(states)
            log_stds = log_std_net.forward_batch(states)
            logp = gp.log_density_parts(means, log_stds, actions)
            pen = np.array([box_penalty(m, half_width, 1.0) for m in means])
            return float(np.mean(e * logp - pen))

        def actor_gradient(p):
            mean_net.flat[:] = p
            means = mean_net.forward_batch(states)
            log_stds = log_std_net.forward_batch(states)
            inv_var = np.exp(-2.0 * np.clip(log_stds, gp.LOG_STD_MIN, gp.LOG_STD_MAX))
            up = e[:, None] * (actions - means) * inv_var - box_penalty_grad(
                means, half_width, 1.0
            )
            return corrupt(mean_net.backward_batch(states, up / batch))

        def dispersion_loss(p):
            log_std_net.flat[:] = p
            means = mean_net.forward_batch(states)
            log_stds = log_std_net.forward_batch(states)
            return float(np.mean(dispersion.loss_parts(means, log_stds, actions, modes, alpha)))

        def dispersion_gradient(p):
            log_std_net.flat[:] = p
            means = mean_net.forward_batch(states)
            log_stds = log_std_net.forward_batch(states)
            up = dispersion.output_grad(means, log_stds, actions, modes, alpha)
            return corrupt(log_std_net.backward_batch(states, up / batch))

        for name, loss, grad, net in (
            ("critic", critic_loss, critic_gradient, critic),
            ("actor", actor_loss, actor_gradient, mean_net),
            ("dispersion", dispersion_loss, dispersion_gradient, log_std_net),
        ):
            report = finite_diff_check(loss, grad, net.flat.copy(), step=step, tolerance=tolerance)
            if report.max_rel_error > worst[name][0]:
                worst[name] = (report.max_rel_error, draw, report.worst_index)

    return [
        GradCheckCase(
            name=name,
            max_rel_error=err,
            worst_draw=draw,
            worst_coordinate=coord,
            tolerance=tolerance,
        )
        for name, (err, draw, coord) in worst.items()
    ]
