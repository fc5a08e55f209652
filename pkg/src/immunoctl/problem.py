"""Optimal control problem declarations: objectives, constraint regimes, scenarios.

Two objective families are supported.  The quadratic (L2) objective integrates
``x'Ax + u'Bu`` with diagonal weights and adds the quadratic terminal sum; the
linear (L1) objective integrates ``a.x + b.u`` and adds the linear terminal
sum.  Linear running costs produce bang-bang/singular dose profiles, quadratic
ones produce continuous profiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .params import PatientSpec, builtin_patient

__all__ = [
    "ObjectiveSpec",
    "ControlBounds",
    "ControlAndStateBounds",
    "MixedControlState",
    "ConstraintRegime",
    "ConstraintInfo",
    "OcpSpec",
    "running_cost",
    "terminal_cost",
    "constraint_residuals",
    "paper_scenario",
    "SCENARIO_IDS",
    "ocp_to_config",
    "ocp_from_config",
]

HEALTHY_STATE = np.array([0.0, 0.0, 0.0, 0.125])


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective weights: ``kind`` is "L1" or "L2".

    ``state_weights`` covers (P, N, D, Ca) and ``control_weights`` (up, ua).
    ``terminal`` is "linear-sum", "quadratic-sum" or "none"; by convention L1
    pairs with linear-sum and L2 with quadratic-sum.
    """

    kind: str
    state_weights: np.ndarray
    control_weights: np.ndarray
    terminal: str = "auto"

    def __post_init__(self):
        if self.kind not in ("L1", "L2"):
            raise ValueError("objective kind must be 'L1' or 'L2'")
        a = np.asarray(self.state_weights, dtype=float)
        b = np.asarray(self.control_weights, dtype=float)
        if a.shape != (4,) or b.shape != (2,):
            raise ValueError("need 4 state weights and 2 control weights")
        if np.any(a < 0) or np.any(b < 0):
            raise ValueError("weights must be nonnegative")
        terminal = self.terminal
        if terminal == "auto":
            terminal = "linear-sum" if self.kind == "L1" else "quadratic-sum"
        if terminal not in ("linear-sum", "quadratic-sum", "none"):
            raise ValueError(f"unknown terminal cost {terminal!r}")
        object.__setattr__(self, "state_weights", a)
        object.__setattr__(self, "control_weights", b)
        object.__setattr__(self, "terminal", terminal)


@dataclass(frozen=True)
class ControlBounds:
    """Box bounds on the dose rates only."""

    up_max: float
    ua_max: float

    def __post_init__(self):
        if self.up_max <= 0 or self.ua_max <= 0:
            raise ValueError("control caps must be positive")


@dataclass(frozen=True)
class ControlAndStateBounds:
    """Box bounds on the dose rates plus pure path caps on N and Ca."""

    up_max: float
    ua_max: float
    n_max: float
    ca_max: float

    def __post_init__(self):
        if min(self.up_max, self.ua_max, self.n_max, self.ca_max) <= 0:
            raise ValueError("all caps must be positive")


@dataclass(frozen=True)
class MixedControlState:
    """Mixed dose-state caps: up + N <= n_cap and ua + Ca <= ca_cap.

    The dose budget shrinks as the corresponding mediator rises, so only the
    headroom below the cap can ever be administered.
    """

    n_cap: float = 0.5
    ca_cap: float = 0.62

    def __post_init__(self):
        if self.n_cap <= 0 or self.ca_cap <= 0:
            raise ValueError("caps must be positive")


ConstraintRegime = Union[ControlBounds, ControlAndStateBounds, MixedControlState]


@dataclass(frozen=True)
class ConstraintInfo:
    """One constraint evaluation: residuals use the <= 0 sign convention."""

    name: str
    kind: str  # "bound" | "path" | "mixed"
    residual: float
    active: bool


@dataclass(frozen=True)
class OcpSpec:
    """A complete problem statement over a fixed horizon.

    ``terminal_state_mode`` is "free-with-terminal-cost" (default; the
    endpoint is penalized through the terminal term) or "pinned" (a hard
    equality on x(t_f) at the healthy state).
    """

    patient: PatientSpec
    objective: ObjectiveSpec
    regime: ConstraintRegime
    t_f: float = 168.0
    terminal_state_mode: str = "free-with-terminal-cost"

    def __post_init__(self):
        if self.t_f <= 0:
            raise ValueError("t_f must be positive")
        if self.terminal_state_mode not in ("free-with-terminal-cost", "pinned"):
            raise ValueError(f"unknown terminal_state_mode {self.terminal_state_mode!r}")

    @property
    def control_caps(self) -> tuple[float, float]:
        r = self.regime
        if isinstance(r, MixedControlState):
            # the mixed caps bound the doses too (states are nonnegative)
            return (r.n_cap, r.ca_cap)
        return (r.up_max, r.ua_max)


def running_cost(x, u, obj: ObjectiveSpec):
    """Integrand of the objective; broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    a, b = obj.state_weights, obj.control_weights
    if obj.kind == "L1":
        return x @ a + u @ b
    return (x * x) @ a + (u * u) @ b


def terminal_cost(x_f, obj: ObjectiveSpec):
    x_f = np.asarray(x_f, dtype=float)
    if obj.terminal == "none":
        return np.zeros(x_f.shape[:-1]) if x_f.ndim > 1 else 0.0
    if obj.terminal == "linear-sum":
        return x_f.sum(axis=-1)
    return (x_f * x_f).sum(axis=-1)


def terminal_cost_gradient(x_f, obj: ObjectiveSpec) -> np.ndarray:
    x_f = np.asarray(x_f, dtype=float)
    if obj.terminal == "none":
        return np.zeros(4)
    if obj.terminal == "linear-sum":
        return np.ones(4)
    return 2.0 * x_f


def constraint_residuals(
    x, u, regime: ConstraintRegime, tol: float = 1e-9
) -> list[ConstraintInfo]:
    """Evaluate every constraint of the regime at one (state, control) point.

    Path and mixed constraints are reported as <= 0 residuals; box bounds are
    reported as interval violations (positive residual only when violated).
    """
    P, N, D, Ca = np.asarray(x, dtype=float)
    up, ua = np.asarray(u, dtype=float)
    out: list[ConstraintInfo] = []

    def bound(name, value, lo, hi):
        viol = max(lo - value, value - hi, 0.0)
        out.append(ConstraintInfo(name, "bound", viol, viol > tol))

    if isinstance(regime, MixedControlState):
        c1 = up + N - regime.n_cap
        c2 = ua + Ca - regime.ca_cap
        out.append(ConstraintInfo("C1", "mixed", c1, abs(c1) <= tol))
        out.append(ConstraintInfo("C2", "mixed", c2, abs(c2) <= tol))
        bound("up", up, 0.0, regime.n_cap)
        bound("ua", ua, 0.0, regime.ca_cap)
        return out

    bound("up", up, 0.0, regime.up_max)
    bound("ua", ua, 0.0, regime.ua_max)
    if isinstance(regime, ControlAndStateBounds):
        s1 = N - regime.n_max
        s2 = Ca - regime.ca_max
        out.append(ConstraintInfo("S1", "path", s1, abs(s1) <= tol))
        out.append(ConstraintInfo("S2", "path", s2, abs(s2) <= tol))
    return out


# Weight sets used throughout the study: the heaviest weights sit on pathogen
# and damage since clearing both is the point of the intervention.
_L1_WEIGHTS = dict(state_weights=(100.0, 5.0, 30.0, 10.0), control_weights=(1.0, 50.0))
_L2_WEIGHTS = dict(state_weights=(10.0, 1.0, 10.0, 10.0), control_weights=(1.0, 20.0))

_SCENARIOS = {
    "L1-full": ("L1", ControlBounds(0.5, 0.62)),
    "L1-half": ("L1", ControlBounds(0.25, 0.31)),
    "L1-state": ("L1", ControlAndStateBounds(0.5, 0.62, 0.5, 0.62)),
    "L2-mixed": ("L2", MixedControlState(0.5, 0.62)),
    "L2-pure": ("L2", ControlAndStateBounds(0.5, 0.62, 0.5, 0.62)),
}

SCENARIO_IDS = tuple(_SCENARIOS)


def paper_scenario(id: str, params_path: str | None = None) -> OcpSpec:
    """The five study scenarios, all on the septic-outcome patient."""
    if id not in _SCENARIOS:
        raise KeyError(f"unknown scenario {id!r}; expected one of {SCENARIO_IDS}")
    kind, regime = _SCENARIOS[id]
    weights = _L1_WEIGHTS if kind == "L1" else _L2_WEIGHTS
    objective = ObjectiveSpec(kind=kind, **{k: np.array(v) for k, v in weights.items()})
    patient = builtin_patient("patient1", params_path)
    return OcpSpec(patient=patient, objective=objective, regime=regime)


# -- config (de)serialization -------------------------------------------------

_REGIME_TYPES = {
    "control-bounds": ControlBounds,
    "control-and-state-bounds": ControlAndStateBounds,
    "mixed-control-state": MixedControlState,
}


def _regime_to_dict(regime: ConstraintRegime) -> dict:
    for name, typ in _REGIME_TYPES.items():
        if isinstance(regime, typ):
            caps = {k: getattr(regime, k) for k in regime.__dataclass_fields__}
            return {"type": name, "caps": caps}
    raise TypeError(f"unknown regime {regime!r}")


def _regime_from_dict(d: dict) -> ConstraintRegime:
    if d.get("type") not in _REGIME_TYPES:
        raise ValueError(f"unknown regime type {d.get('type')!r}")
    return _REGIME_TYPES[d["type"]](**d.get("caps", {}))


def ocp_to_config(
    ocp: OcpSpec, grid_n: int = 1000, solver: dict | None = None
) -> dict:
    """Serialize to the JSON-compatible scenario-config layout."""
    return {
        "patient": ocp.patient.id,
        "objective": {
            "kind": ocp.objective.kind,
            "a": list(ocp.objective.state_weights),
            "b": list(ocp.objective.control_weights),
            "terminal": ocp.objective.terminal,
        },
        "regime": _regime_to_dict(ocp.regime),
        "t_f": ocp.t_f,
        "terminal_state_mode": ocp.terminal_state_mode,
        "grid_n": grid_n,
        "solver": dict(solver or {"tol": 1e-6, "max_iter": 500}),
    }


def ocp_from_config(config: dict, params_path: str | None = None) -> tuple[OcpSpec, dict]:
    """Build an OcpSpec from a config dict; returns (ocp, extras).

    ``extras`` carries grid_n and the solver options block untouched.
    """
    obj = config["objective"]
    objective = ObjectiveSpec(
        kind=obj["kind"],
        state_weights=np.asarray(obj["a"], dtype=float),
        control_weights=np.asarray(obj["b"], dtype=float),
        terminal=obj.get("terminal", "auto"),
    )
    ocp = OcpSpec(
        patient=builtin_patient(config["patient"], params_path),
        objective=objective,
        regime=_regime_from_dict(config["regime"]),
        t_f=float(config.get("t_f", 168.0)),
        terminal_state_mode=config.get("terminal_state_mode", "free-with-terminal-cost"),
    )
    extras = {
        "grid_n": int(config.get("grid_n", 1000)),
        "solver": dict(config.get("solver", {})),
    }
    return ocp, extras


def write_config(path, ocp: OcpSpec, grid_n: int = 1000, solver: dict | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ocp_to_config(ocp, grid_n, solver), fh, indent=2)
        fh.write("\n")


def read_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
