"""Ground-truth trajectory generation.

Nine system families are supported: four chaotic ODEs integrated with
classical RK4 (Lorenz-63, Rössler, Chua, Lorenz-96), two SDEs integrated
with Euler-Maruyama (Ornstein-Uhlenbeck, double-well), and three
discrete-time processes (two-regime switching linear system, seasonal AR,
GARCH(1,1)).  All arithmetic is float64; the sampling interval equals the
solver step, and the state is recorded after every step.

A mid-run shock can replace parameters, perturb the state, or re-initialize
the state entirely.  The pre-shock prefix of a shocked run is bit-identical
to the unshocked run with the same seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rngs import stream

__all__ = [
    "SystemSpec",
    "ShockSpec",
    "Trajectory",
    "ConfigError",
    "BlowupError",
    "system_rhs",
    "rk4_step",
    "em_step",
    "discrete_step",
    "simulate",
    "save_trajectory",
    "load_trajectory",
]

RK4 = "rk4"
EULER_MARUYAMA = "euler_maruyama"
DISCRETE = "discrete"

# family -> (state dimension or None when parameter-driven, required params, method)
_FAMILIES = {
    "lorenz63": (3, ("sigma", "rho", "beta"), RK4),
    "rossler": (3, ("a", "b", "c"), RK4),
    "chua": (3, ("alpha", "beta", "m0", "m1"), RK4),
    "lorenz96": (None, ("forcing",), RK4),
    "ou": (1, ("theta", "mu", "sigma"), EULER_MARUYAMA),
    "double_well": (1, ("a", "sigma"), EULER_MARUYAMA),
    "slds": (1, ("A1", "Q1", "A2", "Q2", "p11", "p22"), DISCRETE),
    "seasonal_ar": (1, ("S", "phi", "sigma", "a0", "amp_drift_per_step"), DISCRETE),
    "garch": (1, ("omega", "alpha", "beta"), DISCRETE),
}


class ConfigError(ValueError):
    """A spec or shock is internally inconsistent."""


class BlowupError(RuntimeError):
    """Integration produced a non-finite state."""


def _require_params(family: str, params) -> None:
    missing = [p for p in _FAMILIES[family][1] if p not in params]
    if missing:
        raise ConfigError(f"{family}: missing parameter(s) {missing}")


@dataclass(frozen=True)
class SystemSpec:
    """Full description of one data-generating system."""

    family: str
    params: dict
    dim: int
    dt: float
    n_steps: int
    initial_cond: tuple
    method: str
    rng_seed: int = 1955

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; "
                              f"known: {sorted(_FAMILIES)}")
        fixed_dim, _, method = _FAMILIES[self.family]
        _require_params(self.family, self.params)
        if fixed_dim is not None and self.dim != fixed_dim:
            raise ConfigError(f"{self.family} is {fixed_dim}-dimensional, got dim={self.dim}")
        if self.method != method:
            raise ConfigError(f"{self.family} must use method {method!r}, got {self.method!r}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be positive, got {self.n_steps}")
        if len(self.initial_cond) != self.dim:
            raise ConfigError(f"initial_cond has length {len(self.initial_cond)}, "
                              f"expected dim={self.dim}")
        object.__setattr__(self, "initial_cond", tuple(float(v) for v in self.initial_cond))
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True)
class ShockSpec:
    """Mid-run intervention: parameter change, state kick, or re-initialization.

    ``shock_frac`` is the fraction of the full run after which the shock is
    applied (default 0.35, i.e. halfway through a 70% training segment).
    ``state_eps`` is added to every state coordinate ("additive" mode) or
    multiplies it ("scale" mode).
    """

    kind: str = "none"
    shock_frac: float = 0.35
    param_updates: dict = field(default_factory=dict)
    state_eps: float = 0.0
    state_eps_mode: str = "additive"
    switch_state: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("none", "param", "state_eps", "switch"):
            raise ConfigError(f"unknown shock kind {self.kind!r}")
        if not 0.0 <= self.shock_frac <= 1.0:
            raise ConfigError(f"shock_frac must be in [0, 1], got {self.shock_frac}")
        if self.kind == "param" and not self.param_updates:
            raise ConfigError("param shock requires non-empty param_updates")
        if self.state_eps_mode not in ("additive", "scale"):
            raise ConfigError(f"unknown state_eps_mode {self.state_eps_mode!r}")
        if self.switch_state is not None:
            object.__setattr__(self, "switch_state",
                               tuple(float(v) for v in self.switch_state))
        object.__setattr__(self, "param_updates", dict(self.param_updates))


@dataclass
class Trajectory:
    """Simulated series (n_steps x dim, float64) plus its generating recipe."""

    values: np.ndarray
    spec: SystemSpec
    shock: ShockSpec
    shock_step: Optional[int] = None


def system_rhs(family: str, params, state: np.ndarray) -> np.ndarray:
    """Time derivative (ODEs) or drift (SDEs) of the named family.

    Pure function of (params, state); raises ``ConfigError`` for missing
    parameter names and ``ValueError`` on dimension mismatch.
    """
    if family not in _FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    _require_params(family, params)
    x = np.asarray(state, dtype=float)
    fixed_dim = _FAMILIES[family][0]
    if fixed_dim is not None and x.shape != (fixed_dim,):
        raise ValueError(f"{family}: state has shape {x.shape}, expected ({fixed_dim},)")

    if family == "lorenz63":
        s, r, b = params["sigma"], params["rho"], params["beta"]
        return np.array([s * (x[1] - x[0]),
                         x[0] * (r - x[2]) - x[1],
                         x[0] * x[1] - b * x[2]])
    if family == "rossler":
        a, b, c = params["a"], params["b"], params["c"]
        return np.array([-x[1] - x[2],
                         x[0] + a * x[1],
                         b + x[2] * (x[0] - c)])
    if family == "chua":
        alpha, beta = params["alpha"], params["beta"]
        m0, m1 = params["m0"], params["m1"]
        h = m1 * x[0] + 0.5 * (m0 - m1) * (abs(x[0] + 1.0) - abs(x[0] - 1.0))
        return np.array([alpha * (x[1] - x[0] - h),
                         x[0] - x[1] + x[2],
                         -beta * x[1]])
    if family == "lorenz96":
        f = params["forcing"]
        return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + f
    if family == "ou":
        return np.array([params["theta"] * (params["mu"] - x[0])])
    if family == "double_well":
        return np.array([params["a"] * x[0] - x[0] ** 3])
    raise ConfigError(f"{family} has no continuous-time right-hand side")


def rk4_step(rhs, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta update in float64."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    y = np.asarray(state, dtype=float)
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise BlowupError("non-finite state after RK4 step")
    return out


def em_step(drift: np.ndarray, diffusion: float, state: np.ndarray,
            dt: float, rng: np.random.Generator) -> np.ndarray:
    """One Euler-Maruyama update: state + drift*dt + diffusion*sqrt(dt)*xi."""
    y = np.asarray(state, dtype=float)
    xi = rng.standard_normal(y.shape)
    return y + np.asarray(drift, dtype=float) * dt + diffusion * np.sqrt(dt) * xi


def discrete_step(family: str, params, state: np.ndarray, carry, t: int,
                  rng: np.random.Generator):
    """One update of a discrete-time family; returns ``(state, carry)``.

    ``carry`` is the per-family hidden state: the regime index (0 or 1) for
    the switching linear system, the conditional variance for GARCH, and
    unused otherwise.  The SLDS regime transition is sampled before the
    linear update, so the update uses the post-transition regime.
    """
    _require_params(family, params)
    x = np.asarray(state, dtype=float)

    if family == "slds":
        p11, p22 = params["p11"], params["p22"]
        if not (0.0 <= p11 <= 1.0 and 0.0 <= p22 <= 1.0):
            raise ConfigError(f"slds self-transition probabilities must be in [0, 1], "
                              f"got p11={p11}, p22={p22}")
        regime = int(carry)
        stay = p11 if regime == 0 else p22
        if rng.uniform() > stay:
            regime = 1 - regime
        a = params["A1"] if regime == 0 else params["A2"]
        q = params["Q1"] if regime == 0 else params["Q2"]
        new = a * x + np.sqrt(q) * rng.standard_normal(x.shape)
        return new, regime

    if family == "seasonal_ar":
        amp = params["a0"] + t * params["amp_drift_per_step"]
        seasonal = amp * np.cos(2.0 * np.pi * t / params["S"])
        new = seasonal + params["phi"] * x + params["sigma"] * rng.standard_normal(x.shape)
        return new, carry

    if family == "garch":
        sig2_prev = float(carry)
        sig2 = params["omega"] + params["alpha"] * x[0] ** 2 + params["beta"] * sig2_prev
        new = np.array([np.sqrt(sig2) * rng.standard_normal()])
        return new, sig2

    raise ConfigError(f"{family} is not a discrete-time family")


def _initial_carry(spec: SystemSpec):
    if spec.family == "slds":
        return 0
    if spec.family == "garch":
        p = spec.params
        persistence = p["alpha"] + p["beta"]
        if persistence >= 1.0:
            raise ConfigError("garch requires alpha + beta < 1 for a stationary start")
        return p["omega"] / (1.0 - persistence)  # stationary variance
    return None


def simulate(spec: SystemSpec, shock: ShockSpec = ShockSpec()) -> Trajectory:
    """Integrate ``spec`` for ``n_steps`` recorded points, applying ``shock``.

    Row 0 is the initial condition; row k is the state after k updates.  At
    the shock step the intervention mutates parameters and/or the current
    state, and integration continues, so rows before the shock step are
    bit-identical to the unshocked run.

    Raises
    ------
    BlowupError
        If any state goes non-finite; the message carries family and step.
    """
    params = dict(spec.params)
    state = np.array(spec.initial_cond, dtype=float)
    values = np.empty((spec.n_steps, spec.dim), dtype=float)
    values[0] = state
    shock_step = None
    if shock.kind != "none":
        shock_step = int(np.floor(shock.shock_frac * spec.n_steps))
    rng = stream(spec.rng_seed, "simulate")
    carry = _initial_carry(spec)

    for k in range(1, spec.n_steps):
        if shock_step == k:
            params.update(shock.param_updates)
            if shock.kind == "state_eps":
                if shock.state_eps_mode == "additive":
                    state = state + shock.state_eps
                else:
                    state = state * shock.state_eps
            elif shock.kind == "switch" and shock.switch_state is not None:
                state = np.array(shock.switch_state, dtype=float)
        try:
            if spec.method == RK4:
                state = rk4_step(lambda y: system_rhs(spec.family, params, y), state, spec.dt)
            elif spec.method == EULER_MARUYAMA:
                drift = system_rhs(spec.family, params, state)
                state = em_step(drift, params["sigma"], state, spec.dt, rng)
            else:
                state, carry = discrete_step(spec.family, params, state, carry, k - 1, rng)
        except BlowupError as err:
            raise BlowupError(f"{spec.family}: {err} at step {k}") from None
        if not np.all(np.isfinite(state)):
            raise BlowupError(f"{spec.family}: non-finite state at step {k}")
        values[k] = state

    return Trajectory(values=values, spec=spec, shock=shock, shock_step=shock_step)


def _header(traj: Trajectory) -> dict:
    return {
        "format": "noisebench.trajectory",
        "version": 1,
        "system": {
            "family": traj.spec.family,
            "params": traj.spec.params,
            "dim": traj.spec.dim,
            "dt": traj.spec.dt,
            "n_steps": traj.spec.n_steps,
            "initial_cond": list(traj.spec.initial_cond),
            "method": traj.spec.method,
            "rng_seed": traj.spec.rng_seed,
        },
        "shock": {
            "kind": traj.shock.kind,
            "shock_frac": traj.shock.shock_frac,
            "param_updates": traj.shock.param_updates,
            "state_eps": traj.shock.state_eps,
            "state_eps_mode": traj.shock.state_eps_mode,
            "switch_state": (list(traj.shock.switch_state)
                             if traj.shock.switch_state is not None else None),
        },
        "seed": traj.spec.rng_seed,
        "dt": traj.spec.dt,
        "shock_step": traj.shock_step,
    }


def save_trajectory(traj: Trajectory, path: str) -> None:
    """Write a trajectory to ``.npz`` (binary) or ``.csv``.

    Values are stored in single precision; the header carries system, shock,
    seed, dt and shock step so the run can be regenerated exactly.
    """
    header = _header(traj)
    values32 = traj.values.astype(np.float32)
    if str(path).endswith(".csv"):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            cols = ",".join(f"x{i}" for i in range(traj.spec.dim))
            fh.write(cols + "\n")
            for row in values32:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        np.savez(path, values=values32, header=json.dumps(header, sort_keys=True))


def load_trajectory(path: str) -> Trajectory:
    """Load a trajectory written by :func:`save_trajectory` (values float32)."""
    if str(path).endswith(".csv"):
        with open(path, "r", encoding="utf-8") as fh:
            header = json.loads(fh.readline().lstrip("# "))
            fh.readline()
            values = np.loadtxt(fh, delimiter=",", dtype=np.float32, ndmin=2)
    else:
        with np.load(path) as data:
            header = json.loads(str(data["header"]))
            values = data["values"]
    sys = header["system"]
    spec = SystemSpec(family=sys["family"], params=sys["params"], dim=sys["dim"],
                      dt=sys["dt"], n_steps=sys["n_steps"],
                      initial_cond=tuple(sys["initial_cond"]), method=sys["method"],
                      rng_seed=sys["rng_seed"])
    sh = header["shock"]
    shock = ShockSpec(kind=sh["kind"], shock_frac=sh["shock_frac"],
                      param_updates=sh["param_updates"], state_eps=sh["state_eps"],
                      state_eps_mode=sh["state_eps_mode"],
                      switch_state=(tuple(sh["switch_state"])
                                    if sh["switch_state"] is not None else None))
    return Trajectory(values=np.asarray(values, dtype=float), spec=spec, shock=shock,
                      shock_step=header["shock_step"])
