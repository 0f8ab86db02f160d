"""Conditional scenario forecasts by optimizing over a trained GAN's latent space.

For a history ``p_hist`` (length h+1) and point forecast ``p_pred`` (length k),
each scenario is found by

1. sampling a target inside the narrower ``alpha_sub`` interval and pulling
   ``P_pred(G(z))`` toward it from a uniform start (``init_objective``), then
2. minimizing the barrier objective (``main_objective``)::

       |P_hist(G(z)) - p_hist|_2 - beta * sum(log(P_pred(G(z)) - L))
                                 - beta * sum(log(U - P_pred(G(z)))) - gamma * D(G(z))

Both stages use momentum gradient descent with ``z`` clipped to ``[-1, 1]``.
Steps that would leave the barrier's domain are halved until they do not.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .gan import GanModel, sample_noise
from .nn import Momentum, clip_values

DEFAULT_FLOOR = 1e-3


def project_hist(v, h: int, k: int) -> np.ndarray:
    """First h+1 entries of a length h+k+1 vector."""
    v = _check_window(v, h, k)
    return v[: h + 1]


def project_pred(v, h: int, k: int) -> np.ndarray:
    """Last k entries of a length h+k+1 vector."""
    v = _check_window(v, h, k)
    return v[h + 1:]


def _check_window(v, h: int, k: int) -> np.ndarray:
    if h < 0 or k < 1:
        raise ConfigError(f"need h >= 0 and k >= 1, got h={h}, k={k}")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (h + k + 1,):
        raise ShapeError(f"expected a vector of length {h + k + 1}, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class IntervalBounds:
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, values, strict: bool = True) -> bool:
        values = np.asarray(values)
        if strict:
            return bool(np.all(values > self.lower) and np.all(values < self.upper))
        return bool(np.all(values >= self.lower) and np.all(values <= self.upper))


def interval_bounds(p_pred, alpha: float, cap: float | None = None) -> IntervalBounds:
    """L = p_pred / alpha, U = alpha * p_pred (optionally capped at ``cap``)."""
    p = np.asarray(p_pred, dtype=np.float64)
    if not alpha > 1.0:
        raise ConfigError(f"alpha must exceed 1, got {alpha}")
    if np.any(p <= 0):
        raise DataError(
            "point forecast must be strictly positive; apply the forecast floor "
            "(apply_forecast_floor) before building prediction intervals"
        )
    lower = p / alpha
    upper = alpha * p
    if cap is not None:
        upper = np.minimum(upper, cap)
        if np.any(upper <= lower):
            raise DataError(f"cap {cap} leaves an empty interval")
    return IntervalBounds(lower, upper)


def apply_forecast_floor(p_pred, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    return np.maximum(np.asarray(p_pred, dtype=np.float64), floor)


@dataclass
class ForecastProblem:
    p_hist: np.ndarray
    p_pred: np.ndarray
    alpha: float = 2.0
    alpha_sub: float | None = None  # default 1 + 0.8 * (alpha - 1)
    beta: float = 0.01
    gamma: float = 0.1
    n_scenarios: int = 20
    n_init: int = 200
    n_scen: int = 500
    lr: float = 0.05
    momentum: float = 0.9
    cap: float | None = None
    forecast_floor: float = DEFAULT_FLOOR
    restarts: int = 5
    max_halvings: int = 20
    floored: bool = field(default=False, init=False)

    def __post_init__(self):
        self.p_hist = np.asarray(self.p_hist, dtype=np.float64).ravel()
        raw = np.asarray(self.p_pred, dtype=np.float64).ravel()
        self.p_pred = apply_forecast_floor(raw, self.forecast_floor)
        self.floored = bool(np.any(self.p_pred != raw))
        if self.alpha_sub is None:
            self.alpha_sub = 1.0 + 0.8 * (self.alpha - 1.0)
        self.validate()

    @property
    def h(self) -> int:
        return len(self.p_hist) - 1

    @property
    def k(self) -> int:
        return len(self.p_pred)

    def validate(self) -> None:
        if len(self.p_hist) < 1 or len(self.p_pred) < 1:
            raise ConfigError("history and point forecast must be non-empty")
        if np.any(self.p_hist < 0) or np.any(self.p_hist > 1) or not np.all(np.isfinite(self.p_hist)):
            raise DataError("history values must lie in [0, 1]")
        if not np.all(np.isfinite(self.p_pred)):
            raise DataError("point forecast must be finite")
        if not self.alpha > 1.0:
            raise ConfigError("alpha must exceed 1")
        if not 1.0 < self.alpha_sub < self.alpha:
            raise ConfigError(f"need 1 < alpha_sub < alpha, got alpha_sub={self.alpha_sub}")
        if self.beta <= 0 or self.gamma < 0:
            raise ConfigError("beta must be positive and gamma non-negative")
        if self.n_scenarios < 0 or self.n_init < 0 or self.n_scen < 0 or self.restarts < 0:
            raise ConfigError("scenario count and iteration budgets must be non-negative")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ConfigError("need lr > 0 and momentum in [0, 1)")

    def bounds(self) -> IntervalBounds:
        return interval_bounds(self.p_pred, self.alpha, self.cap)

    def init_bounds(self) -> IntervalBounds:
        return interval_bounds(self.p_pred, self.alpha_sub, self.cap)

    def check_model(self, model: GanModel) -> None:
        if self.h + self.k + 1 != model.window_length:
            raise ConfigError(
                f"problem needs windows of length {self.h + self.k + 1}, "
                f"model produces {model.window_length}"
            )

    def to_json(self) -> dict:
        return {
            "p_hist": self.p_hist.tolist(),
            "p_pred": self.p_pred.tolist(),
            "alpha": self.alpha,
            "alpha_sub": self.alpha_sub,
            "beta": self.beta,
            "gamma": self.gamma,
            "n_scenarios": self.n_scenarios,
            "n_init": self.n_init,
            "n_scen": self.n_scen,
            "lr": self.lr,
            "momentum": self.momentum,
            "cap": self.cap,
            "forecast_floor": self.forecast_floor,
            "floored": self.floored,
            "restarts": self.restarts,
            "max_halvings": self.max_halvings,
        }


# -- objectives -----------------------------------------------------------------

def _norm_and_grad(r: np.ndarray):
    n = float(np.sqrt(r @ r))
    # the norm is not differentiable at 0; use the zero subgradient there
    return n, (r / n if n > 0 else np.zeros_like(r))


def _check_z(z, model: GanModel) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise ShapeError(f"latent vector must have length {model.latent_dim}, got {z.shape}")
    return z


def main_objective(z, problem: ForecastProblem, model: GanModel,
                   bounds: IntervalBounds | None = None):
    """Barrier objective and its latent gradient; ``(inf, None)`` outside the barrier."""
    z = _check_z(z, model)
    bounds = problem.bounds() if bounds is None else bounds
    h, k = problem.h, problem.k
    x, tape_g = model.gen_forward(z[None, :], "frozen")
    x = x[0]
    hist, pred = x[: h + 1], x[h + 1:]
    slack_lo = pred - bounds.lower
    slack_hi = bounds.upper - pred
    if np.any(slack_lo <= 0) or np.any(slack_hi <= 0):
        return math.inf, None
    fit, g_hist = _norm_and_grad(hist - problem.p_hist)
    value = fit - problem.beta * (np.sum(np.log(slack_lo)) + np.sum(np.log(slack_hi)))
    gx = np.concatenate([g_hist, problem.beta * (1.0 / slack_hi - 1.0 / slack_lo)])
    if problem.gamma:
        d, tape_d = model.disc_forward(x[None, :], "frozen")
        value -= problem.gamma * float(d[0, 0])
        _, gd = model.disc_backward(tape_d, np.full((1, 1), -problem.gamma))
        gx = gx + gd[0]
    _, gz = model.gen_backward(tape_g, gx[None, :])
    return float(value), gz[0]


def init_objective(z, p_initial, model: GanModel):
    """|P_pred(G(z)) - p_initial|_2 and its latent gradient."""
    z = _check_z(z, model)
    p_initial = np.asarray(p_initial, dtype=np.float64)
    if p_initial.shape != (model.k,):
        raise ShapeError(f"p_initial must have length {model.k}, got {p_initial.shape}")
    x, tape = model.gen_forward(z[None, :], "frozen")
    value, g_pred = _norm_and_grad(x[0, model.h + 1:] - p_initial)
    gx = np.concatenate([np.zeros(model.h + 1), g_pred])
    _, gz = model.gen_backward(tape, gx[None, :])
    return value, gz[0]


# -- solvers --------------------------------------------------------------------

def find_initial_z(problem: ForecastProblem, model: GanModel, rng: np.random.Generator,
                   on_step=None) -> np.ndarray:
    """Momentum descent on the initialization subproblem from a uniform draw."""
    problem.check_model(model)
    model = model.with_split(problem.k)
    sub = problem.init_bounds()
    p_initial = rng.uniform(sub.lower, sub.upper)
    z = sample_noise(1, model.latent_dim, rng)[0]
    opt = Momentum(problem.lr, problem.momentum)
    for _ in range(problem.n_init):
        _, g = init_objective(z, p_initial, model)
        z = clip_values(opt.step(z, g), -1.0, 1.0)
        if on_step is not None:
            on_step("init", z)
    return z


@dataclass
class Scenario:
    values: np.ndarray          # P_pred(G(z*)), length k
    history: np.ndarray         # P_hist(G(z*)), length h+1
    z: np.ndarray | None
    objective: float
    feasible: bool
    attempts: int = 1
    skipped_steps: int = 0


def _descend(z, problem: ForecastProblem, model: GanModel, bounds: IntervalBounds, on_step):
    value, grad = main_objective(z, problem, model, bounds)
    opt = Momentum(problem.lr, problem.momentum)
    skipped = 0
    for _ in range(problem.n_scen):
        v = opt.direction(grad)
        step = problem.lr
        for _ in range(problem.max_halvings + 1):
            cand = clip_values(z - step * v, -1.0, 1.0)
            cand_value, cand_grad = main_objective(cand, problem, model, bounds)
            if math.isfinite(cand_value):
                break
            step *= 0.5
        else:
            # no acceptable step along this direction: drop the accumulated velocity
            opt.reset()
            skipped += 1
            continue
        opt.velocity = v
        z, value, grad = cand, cand_value, cand_grad
        if on_step is not None:
            on_step("scen", z)
    return z, value, skipped


def solve_scenario(problem: ForecastProblem, model: GanModel, rng: np.random.Generator,
                   on_step=None) -> Scenario:
    """One scenario: initialization, then barrier descent; restarts on infeasible starts."""
    problem.check_model(model)
    model = model.with_split(problem.k)
    bounds = problem.bounds()
    z = None
    for attempt in range(1, problem.restarts + 2):
        z = find_initial_z(problem, model, rng, on_step)
        if math.isfinite(main_objective(z, problem, model, bounds)[0]):
            z, value, skipped = _descend(z, problem, model, bounds, on_step)
            x = model.G(z[None, :])[0]
            pred = x[problem.h + 1:]
            return Scenario(pred, x[: problem.h + 1], z, value, bounds.contains(pred),
                            attempt, skipped)
    x = model.G(z[None, :])[0]
    return Scenario(x[problem.h + 1:], x[: problem.h + 1], z, math.inf, False,
                    problem.restarts + 1)


@dataclass
class ScenarioSet:
    scenarios: list
    problem: ForecastProblem | None
    model_id: str
    seed: int
    method: str = "gan"
    instance: str = "0"
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.scenarios)

    @property
    def values(self) -> np.ndarray:
        """``(N, k)`` array of scenario values."""
        if not self.scenarios:
            k = self.problem.k if self.problem is not None else 0
            return np.zeros((0, k))
        return np.stack([s.values for s in self.scenarios])

    def provenance(self) -> dict:
        return {
            "method": self.method,
            "instance": self.instance,
            "model_id": self.model_id,
            "seed": self.seed,
            "problem": None if self.problem is None else self.problem.to_json(),
            "attempts": [s.attempts for s in self.scenarios],
            "skipped_steps": [s.skipped_steps for s in self.scenarios],
            **self.extra,
        }

    def to_json(self) -> dict:
        return {
            "provenance": self.provenance(),
            "scenarios": [
                {
                    "values": s.values.tolist(),
                    "history": None if s.history is None else s.history.tolist(),
                    "z": None if s.z is None else s.z.tolist(),
                    "objective": s.objective if math.isfinite(s.objective) else None,
                    "feasible": s.feasible,
                }
                for s in self.scenarios
            ],
        }


def forecast_scenarios(problem: ForecastProblem, model: GanModel, seed=0,
                       workers: int = 1, on_step=None) -> ScenarioSet:
    """N independent scenarios, each with its own spawned random stream."""
    problem.check_model(model)
    streams = np.random.SeedSequence(seed).spawn(problem.n_scenarios)

    def run(ss):
        return solve_scenario(problem, model, np.random.default_rng(ss), on_step)

    if workers > 1 and len(streams) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scenarios = list(pool.map(run, streams))
    else:
        scenarios = [run(ss) for ss in streams]
    return ScenarioSet(scenarios, problem, model.model_id, seed)


def feasibility_report(scenario_set: ScenarioSet) -> dict:
    """Feasible fraction, per-scenario margins to each bound and history mismatch."""
    problem = scenario_set.problem
    n = len(scenario_set)
    out = {"n_scenarios": n, "feasible_fraction": None, "lower_margin": [],
           "upper_margin": [], "history_mismatch": []}
    if n == 0:
        return out
    out["feasible_fraction"] = sum(s.feasible for s in scenario_set.scenarios) / n
    if problem is None:
        return out
    bounds = problem.bounds()
    for s in scenario_set.scenarios:
        out["lower_margin"].append(float(np.min(s.values - bounds.lower)))
        out["upper_margin"].append(float(np.min(bounds.upper - s.values)))
        r = s.history - problem.p_hist
        out["history_mismatch"].append(float(np.sqrt(r @ r)))
    mism = np.array(out["history_mismatch"])
    out["history_mismatch_summary"] = {
        "min": float(mism.min()), "mean": float(mism.mean()), "max": float(mism.max()),
    }
    return out


# -- export ---------------------------------------------------------------------

SCENARIO_COLUMNS = ["instance", "scenario_id", "lead_index", "value", "feasible"]


def write_scenarios_csv(sets: list, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SCENARIO_COLUMNS)
        for sset in sets:
            for sid, s in enumerate(sset.scenarios):
                for lead, value in enumerate(s.values):
                    w.writerow([sset.instance, sid, lead + 1, repr(float(value)), int(s.feasible)])


def read_scenarios_csv(path) -> dict:
    """``{instance: (N, k) array}`` in file order."""
    rows: dict = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SCENARIO_COLUMNS:
            raise DataError(f"{path}: expected columns {SCENARIO_COLUMNS}, got {reader.fieldnames}")
        for rec in reader:
            inst = rows.setdefault(rec["instance"], {})
            inst.setdefault(int(rec["scenario_id"]), {})[int(rec["lead_index"])] = float(rec["value"])
    out = {}
    for inst, scen in rows.items():
        arr = [[leads[j] for j in sorted(leads)] for _, leads in sorted(scen.items())]
        if len({len(a) for a in arr}) != 1:
            raise DataError(f"{path}: instance {inst} has ragged scenarios")
        out[inst] = np.array(arr)
    return out


def write_scenarios_json(sets: list, path) -> None:
    with open(path, "w") as f:
        json.dump([s.to_json() for s in sets], f, sort_keys=True)
