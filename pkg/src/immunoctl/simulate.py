"""Forward integration of the model under dose schedules, and outcome labels.

The integrator is an adaptive embedded Runge-Kutta 4(5) (scipy's RK45) with
4th-order dense output.  A schedule's breakpoints are hard segment boundaries:
integration restarts at every one, so piecewise-constant doses never smear
across a switch.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .model import rhs
from .params import PatientSpec, derive_params

__all__ = [
    "ControlSchedule",
    "Trajectory",
    "Outcome",
    "OutcomeThresholds",
    "StiffnessError",
    "integrate",
    "classify_outcome",
    "continue_to_equilibrium",
]

# Assumption: trajectories stay in the positive octant.  Undershoot beyond
# this is an integration failure, not a modeling effect.
NEGATIVITY_TOL = 1e-10


class StiffnessError(RuntimeError):
    """Raised when the step size underflows; carries the offending time."""

    def __init__(self, t: float, message: str):
        super().__init__(f"integration stalled at t={t:.6g}: {message}")
        self.t = t


class Outcome(enum.Enum):
    HEALTHY = "Healthy"
    ASEPTIC_DEATH = "AsepticDeath"
    SEPTIC_DEATH = "SepticDeath"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class OutcomeThresholds:
    """Numeric cutoffs for the qualitative outcome definitions.

    The outcomes are defined qualitatively ("elevated above background"), so
    the cutoffs are explicit artifact choices: ``eps_low`` separates "at
    background" from "elevated" for P, N, D; ``eps_sep`` is the pathogen level
    that marks a septic endpoint; ``eps_ca`` bounds |Ca - background| for a
    healthy endpoint.
    """

    eps_low: float = 1e-3
    eps_sep: float = 0.05
    eps_ca: float = 0.05
    ca_background: float = 0.125


@dataclass(frozen=True)
class ControlSchedule:
    """Dose rates on a time grid with a declared interpolation rule.

    ``times`` is strictly increasing and spans the horizon; ``values`` holds
    one ``(up, ua)`` pair per node.  Piecewise-constant schedules hold the
    left node value on each interval.
    """

    times: np.ndarray
    values: np.ndarray
    interpolation: str = "piecewise-linear"  # or "piecewise-constant"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("schedule needs at least two time nodes")
        if np.any(np.diff(times) <= 0):
            raise ValueError("schedule times must be strictly increasing")
        if values.shape != (times.size, 2):
            raise ValueError("values must have shape (len(times), 2)")
        if np.any(values < 0):
            raise ValueError("dose rates must be nonnegative")
        if self.interpolation not in ("piecewise-constant", "piecewise-linear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @classmethod
    def zero(cls, t_f: float, t0: float = 0.0) -> "ControlSchedule":
        return cls(np.array([t0, t_f]), np.zeros((2, 2)), "piecewise-constant")

    def __call__(self, t) -> np.ndarray:
        """Evaluate the schedule; clamps outside [t0, t_end]."""
        t = np.asarray(t, dtype=float)
        if self.interpolation == "piecewise-linear":
            up = np.interp(t, self.times, self.values[:, 0])
            ua = np.interp(t, self.times, self.values[:, 1])
            return np.stack([up, ua], axis=-1)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        return self.values[idx]

    def segment_control(self, k: int):
        """Control over segment k as a callable of t (used by the integrator)."""
        if self.interpolation == "piecewise-constant":
            const = self.values[k]
            return lambda t: const
        t0, t1 = self.times[k], self.times[k + 1]
        v0, v1 = self.values[k], self.values[k + 1]
        slope = (v1 - v0) / (t1 - t0)
        return lambda t: v0 + slope * (t - t0)


@dataclass
class Trajectory:
    """States and controls sampled on a reporting grid."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    negativity_flag: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.shape != (self.times.size, 4):
            raise ValueError("states must have shape (len(times), 4)")
        if self.controls.shape != (self.times.size, 2):
            raise ValueError("controls must have shape (len(times), 2)")

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        """Write `t,P,N,D,Ca,up,ua` rows at 12 significant digits."""
        data = np.column_stack([self.times, self.states, self.controls])
        header = "t,P,N,D,Ca,up,ua"
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.12g")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(times=data[:, 0], states=data[:, 1:5], controls=data[:, 5:7])


def integrate(
    patient: PatientSpec,
    schedule: ControlSchedule | None,
    t_f: float,
    tol: float = 1e-8,
    n_report: int = 1001,
    x0: np.ndarray | None = None,
) -> Trajectory:
    """Integrate the patient forward under the given dose schedule.

    The reporting grid is ``n_report`` uniform samples on [0, t_f] merged with
    every schedule breakpoint.  A ``None`` schedule means no dosing.  ``x0``
    overrides the patient's initial state (used when continuing a run).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if schedule is None:
        schedule = ControlSchedule.zero(t_f)
    if schedule.t0 > 0.0 or schedule.t_end < t_f - 1e-12:
        raise ValueError("schedule must span [0, t_f]")

    p = derive_params(patient.raw)
    x = np.array(patient.x0 if x0 is None else x0, dtype=float)

    report = np.union1d(
        np.linspace(0.0, t_f, n_report),
        schedule.times[(schedule.times >= 0.0) & (schedule.times <= t_f)],
    )

    times_out = [np.array([0.0])]
    states_out = [x[None, :].copy()]
    negativity = False

    seg_ends = np.clip(schedule.times, 0.0, t_f)
    for k in range(len(schedule.times) - 1):
        a, b = seg_ends[k], seg_ends[k + 1]
        if b <= a:
            continue
        u_of_t = schedule.segment_control(k)
        t_eval = report[(report > a) & (report <= b)]
        sol = solve_ivp(
            lambda t, y: rhs(y, u_of_t(t), p),
            (a, b),
            x,
            method="RK45",
            rtol=tol,
            atol=tol,
            t_eval=t_eval if t_eval.size else None,
            dense_output=False,
        )
        if not sol.success:
            raise StiffnessError(sol.t[-1] if sol.t.size else a, sol.message)
        x = sol.y[:, -1].copy() if sol.y.size else x
        if sol.t.size and abs(sol.t[-1] - b) > 1e-9:
            # t_eval may omit b itself; take one closing step
            tail = solve_ivp(
                lambda t, y: rhs(y, u_of_t(t), p), (sol.t[-1], b), x,
                method="RK45", rtol=tol, atol=tol,
            )
            if not tail.success:
                raise StiffnessError(tail.t[-1], tail.message)
            x = tail.y[:, -1].copy()
        if t_eval.size:
            ys = sol.y.T
            if ys.min() < -NEGATIVITY_TOL:
                negativity = True
            ys = np.maximum(ys, 0.0)
            times_out.append(t_eval)
            states_out.append(ys)
        if x.min() < -NEGATIVITY_TOL:
            negativity = True
        x = np.maximum(x, 0.0)

    times = np.concatenate(times_out)
    states = np.concatenate(states_out, axis=0)
    # dedupe: breakpoints can coincide with report nodes
    times, idx = np.unique(times, return_index=True)
    states = states[idx]
    controls = schedule(times)
    return Trajectory(times=times, states=states, controls=controls, negativity_flag=negativity)


def classify_outcome(
    traj: Trajectory, thresholds: OutcomeThresholds | None = None
) -> Outcome:
    """Label the endpoint of a trajectory.

    Healthy: P, N, D at background and Ca near its background level.
    SepticDeath: pathogen persists (with damage elevated).
    AsepticDeath: pathogen cleared but mediators/damage stay elevated.
    Anything else is Indeterminate (e.g. still in transient).
    """
    th = thresholds or OutcomeThresholds()
    if traj.times.size == 0:
        raise ValueError("empty trajectory")
    P, N, D, Ca = traj.final_state

    at_background = max(P, N, D) < th.eps_low and abs(Ca - th.ca_background) < th.eps_ca
    if at_background:
        return Outcome.HEALTHY
    elevated = (N > th.eps_low) or (D > th.eps_low) or (Ca - th.ca_background > th.eps_ca)
    if P > th.eps_sep and D > th.eps_low:
        return Outcome.SEPTIC_DEATH
    if P < th.eps_low and elevated:
        return Outcome.ASEPTIC_DEATH
    return Outcome.INDETERMINATE


def continue_to_equilibrium(
    traj: Trajectory,
    patient: PatientSpec,
    extra_hours: float = 500.0,
    tol: float = 1e-8,
    thresholds: OutcomeThresholds | None = None,
) -> tuple[Trajectory, Outcome]:
    """Extend a finished run with zero dosing and classify where it settles.

    Endpoints of treated runs often sit close to, but not at, the healthy
    equilibrium; integrating onward without control resolves which basin the
    patient is in.
    """
    extension = integrate(
        patient,
        ControlSchedule.zero(extra_hours),
        extra_hours,
        tol=tol,
        x0=traj.final_state,
        n_report=501,
    )
    shifted = Trajectory(
        times=np.concatenate([traj.times, traj.times[-1] + extension.times[1:]]),
        states=np.concatenate([traj.states, extension.states[1:]], axis=0),
        controls=np.concatenate([traj.controls, extension.controls[1:]], axis=0),
        negativity_flag=traj.negativity_flag or extension.negativity_flag,
    )
    return shifted, classify_outcome(shifted, thresholds)
