"""Direct collocation: transcribe a control problem into a sparse NLP.

Two local schemes are provided.  Trapezoidal collocation enforces

    x_{k+1} - x_k - (h/2) (f_k + f_{k+1}) = 0

on every interval and integrates the running cost with the trapezoid rule.
Hermite-Simpson collocation adds a free control at each interval midpoint,
forms the interpolated midpoint state

    x_m = (x_k + x_{k+1})/2 + (h/8) (f_k - f_{k+1}),

and enforces the Simpson defect

    x_{k+1} - x_k - (h/6) (f_k + 4 f_m + f_{k+1}) = 0

with Simpson-rule cost quadrature.  Path constraints are imposed at every
node, and additionally at every midpoint under Hermite-Simpson.

The variable layout interleaves node states, node controls and midpoint
controls in time order, which keeps the KKT system nearly banded.  All
sparsity patterns are computed structurally once; evaluations only refill
data vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import model as md
from .params import derive_params
from .problem import (
    ControlAndStateBounds,
    MixedControlState,
    ObjectiveSpec,
    OcpSpec,
    HEALTHY_STATE,
)
from .simulate import ControlSchedule, Trajectory, integrate

__all__ = [
    "Grid",
    "AffineDynamics",
    "QuadCost",
    "PathRow",
    "ContinuousProblem",
    "NlpProblem",
    "AdjointEstimate",
    "ExtractionError",
    "continuous_from_ocp",
    "transcribe",
    "initial_guess",
    "extract_solution",
]

SCHEMES = ("trapezoid", "hermite-simpson")

# State lower bounds are relaxed by this amount.  States that decay to zero
# (pathogen after clearance) otherwise ride the bound while the dynamics rows
# degenerate there (x = 0 is invariant), which destroys constraint
# qualification and lets bound duals diverge; with the relaxation the tail
# settles at a harmless, strictly interior level.  Trajectory extraction
# clamps reported states at zero.
BOUND_RELAX = 1e-6


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on [0, t_f]."""

    n_nodes: int = 1000
    t_f: float = 168.0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("need at least two grid nodes")
        if self.t_f <= 0:
            raise ValueError("t_f must be positive")

    @property
    def n_intervals(self) -> int:
        return self.n_nodes - 1

    @property
    def h(self) -> float:
        return self.t_f / (self.n_nodes - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_f, self.n_nodes)

    @property
    def mid_times(self) -> np.ndarray:
        t = self.times
        return 0.5 * (t[:-1] + t[1:])


@dataclass
class AffineDynamics:
    """Dynamics of the form xdot = f0(x) + B u with batched callbacks.

    ``f0``, ``f0_x`` and ``f0_xx`` accept ``(m, nx)`` state batches and return
    ``(m, nx)``, ``(m, nx, nx)`` and ``(m, nx, nx, nx)`` arrays.
    """

    nx: int
    nu: int
    f0: object
    f0_x: object
    f0_xx: object
    B: np.ndarray

    def f(self, X, U):
        return self.f0(X) + U @ self.B.T

    def fx(self, X):
        return self.f0_x(X)

    def fxx(self, X):
        return self.f0_xx(X)


@dataclass
class QuadCost:
    """Running cost x'Qx + u'Ru + q.x + r.u and terminal x'Qf x + qf.x."""

    Q: np.ndarray
    R: np.ndarray
    q: np.ndarray
    r: np.ndarray
    Qf: np.ndarray
    qf: np.ndarray

    def ell(self, X, U):
        return (
            np.einsum("...i,ij,...j->...", X, self.Q, X)
            + np.einsum("...i,ij,...j->...", U, self.R, U)
            + X @ self.q
            + U @ self.r
        )

    def ell_x(self, X):
        return 2.0 * X @ self.Q.T + self.q

    def ell_u(self, U):
        return 2.0 * U @ self.R.T + self.r

    @property
    def hxx(self):
        return 2.0 * self.Q

    @property
    def huu(self):
        return 2.0 * self.R

    def phi(self, x):
        return float(x @ self.Qf @ x + self.qf @ x)

    def phi_x(self, x):
        return 2.0 * self.Qf @ x + self.qf

    @property
    def phi_xx(self):
        return 2.0 * self.Qf


@dataclass(frozen=True)
class PathRow:
    """Linear path constraint cx.x + cu.u - bound <= 0."""

    name: str
    cx: np.ndarray
    cu: np.ndarray
    bound: float


@dataclass
class ContinuousProblem:
    """A control problem in continuous time, ready for transcription."""

    dynamics: AffineDynamics
    cost: QuadCost
    x0: np.ndarray
    x_lb: np.ndarray
    x_ub: np.ndarray
    u_lb: np.ndarray
    u_ub: np.ndarray
    path_rows: tuple[PathRow, ...] = ()
    x_pin: np.ndarray | None = None


def _objective_from_spec(obj: ObjectiveSpec) -> QuadCost:
    a = obj.state_weights
    b = obj.control_weights
    zero4, zero2 = np.zeros(4), np.zeros(2)
    if obj.kind == "L2":
        Q, R, q, r = np.diag(a), np.diag(b), zero4, zero2
    else:
        Q, R, q, r = np.zeros((4, 4)), np.zeros((2, 2)), a.copy(), b.copy()
    if obj.terminal == "quadratic-sum":
        Qf, qf = np.eye(4), zero4
    elif obj.terminal == "linear-sum":
        Qf, qf = np.zeros((4, 4)), np.ones(4)
    else:
        Qf, qf = np.zeros((4, 4)), zero4
    return QuadCost(Q=Q, R=R, q=q, r=r, Qf=Qf, qf=qf)


def continuous_from_ocp(ocp: OcpSpec) -> ContinuousProblem:
    """Map an OcpSpec onto the generic transcription form."""
    p = derive_params(ocp.patient.raw)
    dyn = AffineDynamics(
        nx=4,
        nu=2,
        f0=lambda X: md.rhs(X, np.zeros(np.shape(X)[:-1] + (2,)), p),
        f0_x=lambda X: md.jac_x(X, None, p),
        f0_xx=lambda X: md.hess_x(X, p),
        B=md.CONTROL_MATRIX.copy(),
    )
    cost = _objective_from_spec(ocp.objective)

    eN = np.array([0.0, 1.0, 0.0, 0.0])
    eCa = np.array([0.0, 0.0, 0.0, 1.0])
    eUp = np.array([1.0, 0.0])
    eUa = np.array([0.0, 1.0])
    zero4, zero2 = np.zeros(4), np.zeros(2)

    regime = ocp.regime
    rows: list[PathRow] = []
    if isinstance(regime, MixedControlState):
        rows.append(PathRow("C1", eN, eUp, regime.n_cap))
        rows.append(PathRow("C2", eCa, eUa, regime.ca_cap))
    elif isinstance(regime, ControlAndStateBounds):
        rows.append(PathRow("S1", eN, zero2, regime.n_max))
        rows.append(PathRow("S2", eCa, zero2, regime.ca_max))

    up_max, ua_max = ocp.control_caps
    return ContinuousProblem(
        dynamics=dyn,
        cost=cost,
        x0=ocp.patient.x0.copy(),
        x_lb=np.zeros(4),
        x_ub=np.full(4, np.inf),
        u_lb=np.zeros(2),
        u_ub=np.array([up_max, ua_max]),
        path_rows=tuple(rows),
        x_pin=HEALTHY_STATE.copy() if ocp.terminal_state_mode == "pinned" else None,
    )


class NlpProblem:
    """Finite-dimensional transcription with sparse callbacks.

    Exposes the interface the interior-point solver consumes: ``objective``,
    ``gradient``, ``eq_constraints`` / ``eq_jacobian``, ``ineq_constraints`` /
    ``ineq_jacobian`` (<= 0 convention), ``lagrangian_hessian`` and the
    variable bounds ``lb`` / ``ub``.
    """

    supports_convexify = True

    def __init__(self, cont: ContinuousProblem, grid: Grid, scheme: str):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        self.cont = cont
        self.grid = grid
        self.scheme = scheme
        self.nx = cont.dynamics.nx
        self.nu = cont.dynamics.nu
        self.h = grid.h

        n, nx, nu = grid.n_nodes, self.nx, self.nu
        self.n_nodes = n
        self.hs = scheme == "hermite-simpson"

        stride = nx + 2 * nu if self.hs else nx + nu
        base = stride * np.arange(n)
        self.x_idx = base[:, None] + np.arange(nx)
        self.u_idx = base[:, None] + nx + np.arange(nu)
        if self.hs:
            self.um_idx = base[:-1, None] + nx + nu + np.arange(nu)
            self.n_var = stride * (n - 1) + nx + nu
        else:
            self.um_idx = np.empty((0, nu), dtype=int)
            self.n_var = stride * n

        # variable bounds (lower bounds relaxed, see BOUND_RELAX)
        lb = np.full(self.n_var, -np.inf)
        ub = np.full(self.n_var, np.inf)
        lb[self.x_idx] = cont.x_lb - BOUND_RELAX * (1.0 + np.abs(cont.x_lb))
        ub[self.x_idx] = cont.x_ub
        lb[self.u_idx] = cont.u_lb
        ub[self.u_idx] = cont.u_ub
        if self.hs:
            lb[self.um_idx] = cont.u_lb
            ub[self.um_idx] = cont.u_ub
        self.lb, self.ub = lb, ub

        # equality rows: initial condition, then defects, then optional pin
        self.n_defects = nx * grid.n_intervals
        self.n_eq = nx + self.n_defects + (nx if cont.x_pin is not None else 0)
        self.ic_rows = np.arange(nx)
        self.defect_rows = nx + np.arange(self.n_defects).reshape(grid.n_intervals, nx)
        self.pin_rows = (
            nx + self.n_defects + np.arange(nx) if cont.x_pin is not None else None
        )

        # inequality rows: per node, then per midpoint (HS), in time order
        self.n_path = len(cont.path_rows)
        rows_per_node = self.n_path
        if self.hs and self.n_path:
            self.node_ineq_rows = np.empty((n, rows_per_node), dtype=int)
            self.mid_ineq_rows = np.empty((n - 1, rows_per_node), dtype=int)
            r = 0
            for k in range(n):
                self.node_ineq_rows[k] = r + np.arange(rows_per_node)
                r += rows_per_node
                if k < n - 1:
                    self.mid_ineq_rows[k] = r + np.arange(rows_per_node)
                    r += rows_per_node
            self.n_ineq = r
        else:
            self.node_ineq_rows = np.arange(n * rows_per_node).reshape(n, rows_per_node)
            self.mid_ineq_rows = np.empty((0, rows_per_node), dtype=int)
            self.n_ineq = n * rows_per_node

        # Simpson/trapezoid node weights for cost quadrature
        w = np.full(n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        if self.hs:
            w = np.full(n, self.h / 3.0)
            w[0] = w[-1] = self.h / 6.0
        self.node_weights = w
        self.mid_weight = 2.0 * self.h / 3.0  # HS midpoint quadrature weight

        self._build_structure()
        self._cache_key = None
        self._cache = None

    # -- structural sparsity -------------------------------------------------

    def _interval_cols(self) -> np.ndarray:
        """Column indices of the per-interval variable block, (n-1, width)."""
        pieces = [self.x_idx[:-1], self.u_idx[:-1]]
        if self.hs:
            pieces.append(self.um_idx)
        pieces += [self.x_idx[1:], self.u_idx[1:]]
        return np.concatenate(pieces, axis=1)

    def _build_structure(self):
        nx, nu = self.nx, self.nu
        ni = self.grid.n_intervals
        cols = self._interval_cols()
        self.block_width = cols.shape[1]
        self._icols = cols

        # equality Jacobian: IC block, defect blocks, optional pin block
        rows = [np.repeat(self.ic_rows, 1)]
        colsl = [self.x_idx[0]]
        drows = np.repeat(self.defect_rows[:, :, None], self.block_width, axis=2)
        dcols = np.repeat(cols[:, None, :], nx, axis=1)
        rows.append(drows.ravel())
        colsl.append(dcols.ravel())
        if self.pin_rows is not None:
            rows.append(self.pin_rows)
            colsl.append(self.x_idx[-1])
        self._eq_rows = np.concatenate(rows)
        self._eq_cols = np.concatenate(colsl)

        # inequality Jacobian structure
        irows, icols = [], []
        if self.n_path:
            node_cols = np.concatenate([self.x_idx, self.u_idx], axis=1)  # (n, nx+nu)
            r = np.repeat(self.node_ineq_rows[:, :, None], nx + nu, axis=2)
            c = np.repeat(node_cols[:, None, :], self.n_path, axis=1)
            irows.append(r.ravel())
            icols.append(c.ravel())
            if self.hs:
                r = np.repeat(self.mid_ineq_rows[:, :, None], self.block_width, axis=2)
                c = np.repeat(cols[:, None, :], self.n_path, axis=1)
                irows.append(r.ravel())
                icols.append(c.ravel())
        self._ineq_rows = np.concatenate(irows) if irows else np.empty(0, dtype=int)
        self._ineq_cols = np.concatenate(icols) if icols else np.empty(0, dtype=int)

        # Hessian structure: per-interval dense block plus terminal block
        w = self.block_width
        hrows = np.repeat(cols[:, :, None], w, axis=2).ravel()
        hcols = np.repeat(cols[:, None, :], w, axis=1).ravel()
        tr = np.repeat(self.x_idx[-1], nx)
        tc = np.tile(self.x_idx[-1], nx)
        self._hess_rows = np.concatenate([hrows, tr])
        self._hess_cols = np.concatenate([hcols, tc])

    # -- shared kinematics ---------------------------------------------------

    def split(self, z):
        z = np.asarray(z, dtype=float)
        X = z[self.x_idx]
        U = z[self.u_idx]
        UM = z[self.um_idx] if self.hs else None
        return X, U, UM

    def _common(self, z):
        key = z.tobytes()
        if self._cache_key == key:
            return self._cache
        dyn = self.cont.dynamics
        X, U, UM = self.split(z)
        F = dyn.f(X, U)
        Fx = dyn.fx(X)
        c = {"X": X, "U": U, "UM": UM, "F": F, "Fx": Fx}
        if self.hs:
            XM = 0.5 * (X[:-1] + X[1:]) + (self.h / 8.0) * (F[:-1] - F[1:])
            FM = dyn.f(XM, UM)
            FMx = dyn.fx(XM)
            c.update(XM=XM, FM=FM, FMx=FMx)
        self._cache_key, self._cache = key, c
        return c

    def _mid_sens(self, c):
        """d(x_m)/d(x_k) and d(x_m)/d(x_{k+1}), each (n-1, nx, nx)."""
        eye = np.eye(self.nx)
        A0 = 0.5 * eye + (self.h / 8.0) * c["Fx"][:-1]
        A1 = 0.5 * eye - (self.h / 8.0) * c["Fx"][1:]
        return A0, A1

    # -- NLP callbacks -------------------------------------------------------

    def objective(self, z) -> float:
        c = self._common(np.asarray(z, dtype=float))
        cost = self.cont.cost
        val = float(self.node_weights @ cost.ell(c["X"], c["U"]))
        if self.hs:
            val += self.mid_weight * float(np.sum(cost.ell(c["XM"], c["UM"])))
        return val + cost.phi(c["X"][-1])

    def gradient(self, z) -> np.ndarray:
        c = self._common(np.asarray(z, dtype=float))
        cost = self.cont.cost
        X, U = c["X"], c["U"]
        g = np.zeros(self.n_var)
        np.add.at(g, self.x_idx, self.node_weights[:, None] * cost.ell_x(X))
        np.add.at(g, self.u_idx, self.node_weights[:, None] * cost.ell_u(U))
        if self.hs:
            gm_x = self.mid_weight * cost.ell_x(c["XM"])
            gm_u = self.mid_weight * cost.ell_u(c["UM"])
            A0, A1 = self._mid_sens(c)
            B = self.cont.dynamics.B
            np.add.at(g, self.x_idx[:-1], np.einsum("kji,kj->ki", A0, gm_x))
            np.add.at(g, self.x_idx[1:], np.einsum("kji,kj->ki", A1, gm_x))
            np.add.at(g, self.u_idx[:-1], (self.h / 8.0) * gm_x @ B)
            np.add.at(g, self.u_idx[1:], -(self.h / 8.0) * gm_x @ B)
            np.add.at(g, self.um_idx, gm_u)
        g[self.x_idx[-1]] += cost.phi_x(X[-1])
        return g

    def eq_constraints(self, z) -> np.ndarray:
        c = self._common(np.asarray(z, dtype=float))
        X, F = c["X"], c["F"]
        out = np.empty(self.n_eq)
        out[self.ic_rows] = X[0] - self.cont.x0
        if self.hs:
            d = X[1:] - X[:-1] - (self.h / 6.0) * (F[:-1] + 4.0 * c["FM"] + F[1:])
        else:
            d = X[1:] - X[:-1] - (self.h / 2.0) * (F[:-1] + F[1:])
        out[self.defect_rows.ravel()] = d.ravel()
        if self.pin_rows is not None:
            out[self.pin_rows] = X[-1] - self.cont.x_pin
        return out

    def _defect_blocks(self, c):
        """Per-interval defect Jacobian block, (n-1, nx, block_width)."""
        nx, nu, h = self.nx, self.nu, self.h
        B = self.cont.dynamics.B
        eye = np.eye(nx)
        Fx0, Fx1 = c["Fx"][:-1], c["Fx"][1:]
        ni = self.grid.n_intervals
        blk = np.zeros((ni, nx, self.block_width))
        if self.hs:
            FMx = c["FMx"]
            A0, A1 = self._mid_sens(c)
            FMxA0 = np.einsum("kij,kjl->kil", FMx, A0)
            FMxA1 = np.einsum("kij,kjl->kil", FMx, A1)
            FMxB = FMx @ B
            blk[:, :, :nx] = -eye - (h / 6.0) * Fx0 - (2.0 * h / 3.0) * FMxA0
            blk[:, :, nx : nx + nu] = -(h / 6.0) * B - (h * h / 12.0) * FMxB
            blk[:, :, nx + nu : nx + 2 * nu] = -(2.0 * h / 3.0) * B
            o = nx + 2 * nu
            blk[:, :, o : o + nx] = eye - (h / 6.0) * Fx1 - (2.0 * h / 3.0) * FMxA1
            blk[:, :, o + nx :] = -(h / 6.0) * B + (h * h / 12.0) * FMxB
        else:
            blk[:, :, :nx] = -eye - (h / 2.0) * Fx0
            blk[:, :, nx : nx + nu] = -(h / 2.0) * B
            blk[:, :, nx + nu : 2 * nx + nu] = eye - (h / 2.0) * Fx1
            blk[:, :, 2 * nx + nu :] = -(h / 2.0) * B
        return blk

    def eq_jacobian(self, z) -> sp.csr_matrix:
        c = self._common(np.asarray(z, dtype=float))
        data = [np.ones(self.nx), self._defect_blocks(c).ravel()]
        if self.pin_rows is not None:
            data.append(np.ones(self.nx))
        data = np.concatenate(data)
        return sp.coo_matrix(
            (data, (self._eq_rows, self._eq_cols)), shape=(self.n_eq, self.n_var)
        ).tocsr()

    def ineq_constraints(self, z) -> np.ndarray:
        if self.n_ineq == 0:
            return np.empty(0)
        c = self._common(np.asarray(z, dtype=float))
        X, U = c["X"], c["U"]
        out = np.empty(self.n_ineq)
        for j, row in enumerate(self.cont.path_rows):
            out[self.node_ineq_rows[:, j]] = X @ row.cx + U @ row.cu - row.bound
            if self.hs:
                out[self.mid_ineq_rows[:, j]] = (
                    c["XM"] @ row.cx + c["UM"] @ row.cu - row.bound
                )
        return out

    def ineq_jacobian(self, z) -> sp.csr_matrix:
        if self.n_ineq == 0:
            return sp.csr_matrix((0, self.n_var))
        c = self._common(np.asarray(z, dtype=float))
        nx, nu = self.nx, self.nu
        n, ni = self.n_nodes, self.grid.n_intervals
        node_data = np.empty((n, self.n_path, nx + nu))
        for j, row in enumerate(self.cont.path_rows):
            node_data[:, j, :nx] = row.cx
            node_data[:, j, nx:] = row.cu
        chunks = [node_data.ravel()]
        if self.hs:
            A0, A1 = self._mid_sens(c)
            B = self.cont.dynamics.B
            mid_data = np.zeros((ni, self.n_path, self.block_width))
            for j, row in enumerate(self.cont.path_rows):
                mid_data[:, j, :nx] = np.einsum("kji,j->ki", A0, row.cx)
                mid_data[:, j, nx : nx + nu] = (self.h / 8.0) * (row.cx @ B)
                mid_data[:, j, nx + nu : nx + 2 * nu] = row.cu
                o = nx + 2 * nu
                mid_data[:, j, o : o + nx] = np.einsum("kji,j->ki", A1, row.cx)
                mid_data[:, j, o + nx :] = -(self.h / 8.0) * (row.cx @ B)
            chunks.append(mid_data.ravel())
        data = np.concatenate(chunks)
        return sp.coo_matrix(
            (data, (self._ineq_rows, self._ineq_cols)), shape=(self.n_ineq, self.n_var)
        ).tocsr()

    def lagrangian_hessian(self, z, sigma, y_eq, y_ineq, convexify=False) -> sp.csr_matrix:
        """Hessian of sigma*f + y_eq.c_eq + y_ineq.c_ineq (full symmetric).

        With ``convexify`` each per-interval block is projected onto the PSD
        cone (eigenvalue clipping).  A sum of PSD blocks is PSD, so the
        barrier-regularized KKT matrix becomes quasi-definite and Newton
        directions stay well scaled on nonconvex arcs; gradients and
        Jacobians are untouched, so converged KKT points are unaffected.
        """
        c = self._common(np.asarray(z, dtype=float))
        cost = self.cont.cost
        dyn = self.cont.dynamics
        nx, nu, h = self.nx, self.nu, self.h
        ni = self.grid.n_intervals
        w = self.block_width

        nu_def = np.asarray(y_eq, dtype=float)[self.defect_rows]  # (ni, nx)
        T0 = dyn.fxx(c["X"])  # (n, nx, nx, nx)

        H = np.zeros((ni, w, w))
        sl_x0 = slice(0, nx)
        sl_u0 = slice(nx, nx + nu)
        if self.hs:
            sl_um = slice(nx + nu, nx + 2 * nu)
            sl_x1 = slice(nx + 2 * nu, 2 * nx + 2 * nu)
            sl_u1 = slice(2 * nx + 2 * nu, w)
        else:
            sl_x1 = slice(nx + nu, 2 * nx + nu)
            sl_u1 = slice(2 * nx + nu, w)

        if self.hs:
            # weight on the composed midpoint terms: cost + defects + mid rows
            gm_x = sigma * self.mid_weight * cost.ell_x(c["XM"])
            gamma = gm_x - (2.0 * h / 3.0) * np.einsum("kij,ki->kj", c["FMx"], nu_def)
            TM = dyn.fxx(c["XM"])
            Gamma = sigma * self.mid_weight * cost.hxx - (2.0 * h / 3.0) * np.einsum(
                "ki,kiab->kab", nu_def, TM
            )
            if self.n_path:
                mu_mid = np.asarray(y_ineq, dtype=float)[self.mid_ineq_rows]
                for j, row in enumerate(self.cont.path_rows):
                    gamma += mu_mid[:, j : j + 1] * row.cx

            # chain through x_m: M' Gamma M + sum_j gamma_j d2(x_m)_j
            A0, A1 = self._mid_sens(c)
            B = dyn.B
            M = np.zeros((ni, nx, w))
            M[:, :, sl_x0] = A0
            M[:, :, sl_u0] = (h / 8.0) * np.broadcast_to(B, (ni, nx, nu))
            M[:, :, sl_x1] = A1
            M[:, :, sl_u1] = -(h / 8.0) * np.broadcast_to(B, (ni, nx, nu))
            H += np.einsum("kja,kjl,klb->kab", M, Gamma, M)
            gT0 = np.einsum("kj,kjab->kab", gamma, T0[:-1])
            gT1 = np.einsum("kj,kjab->kab", gamma, T0[1:])
            H[:, sl_x0, sl_x0] += (h / 8.0) * gT0
            H[:, sl_x1, sl_x1] -= (h / 8.0) * gT1
            H[:, sl_um, sl_um] += sigma * self.mid_weight * cost.huu
            node_share = h / 6.0
        else:
            node_share = h / 2.0

        # node-local curvature from defects and running cost
        nT0 = np.einsum("ki,kiab->kab", nu_def, T0[:-1])
        nT1 = np.einsum("ki,kiab->kab", nu_def, T0[1:])
        if self.hs:
            H[:, sl_x0, sl_x0] += -(h / 6.0) * nT0
            H[:, sl_x1, sl_x1] += -(h / 6.0) * nT1
        else:
            H[:, sl_x0, sl_x0] += -(h / 2.0) * nT0
            H[:, sl_x1, sl_x1] += -(h / 2.0) * nT1
        H[:, sl_x0, sl_x0] += sigma * node_share * cost.hxx
        H[:, sl_x1, sl_x1] += sigma * node_share * cost.hxx
        H[:, sl_u0, sl_u0] += sigma * node_share * cost.huu
        H[:, sl_u1, sl_u1] += sigma * node_share * cost.huu

        if convexify:
            H = 0.5 * (H + np.swapaxes(H, 1, 2))
            eigval, eigvec = np.linalg.eigh(H)
            floor = 1e-9 * np.maximum(1.0, np.abs(eigval).max(axis=1, keepdims=True))
            eigval = np.maximum(eigval, floor)
            H = np.einsum("kij,kj,klj->kil", eigvec, eigval, eigvec)

        data = np.concatenate([H.ravel(), (sigma * cost.phi_xx).ravel()])
        return sp.coo_matrix(
            (data, (self._hess_rows, self._hess_cols)), shape=(self.n_var, self.n_var)
        ).tocsr()

    # -- reporting -----------------------------------------------------------

    def manifest(self) -> str:
        """Plain-text problem summary for debugging."""
        jac_nnz = self._eq_cols.size + self._ineq_cols.size
        lines = [
            f"scheme: {self.scheme}",
            f"nodes: {self.n_nodes} (h = {self.h:.6g})",
            f"variables: {self.n_var}",
            f"equalities: {self.n_eq} ({self.n_defects} defects)",
            f"inequalities: {self.n_ineq} ({self.n_path} path rows per point)",
            f"finite lower bounds: {int(np.isfinite(self.lb).sum())}",
            f"finite upper bounds: {int(np.isfinite(self.ub).sum())}",
            f"jacobian nnz: {jac_nnz}",
            f"hessian nnz: {self._hess_rows.size}",
        ]
        return "\n".join(lines)


def transcribe(ocp: OcpSpec, grid: Grid, scheme: str = "hermite-simpson") -> NlpProblem:
    """Transcribe an immune-model OCP on the given grid."""
    return NlpProblem(continuous_from_ocp(ocp), grid, scheme)


def initial_guess(
    ocp: OcpSpec,
    grid: Grid,
    strategy: str = "open-loop",
    scheme: str = "hermite-simpson",
    problem: NlpProblem | None = None,
) -> np.ndarray:
    """Primal starting point for a transcription of ``ocp`` on ``grid``.

    open-loop: zero-dose simulation states with zero controls.
    constant: hold x0, controls at midpoint of bounds.
    linear-to-healthy: straight line from x0 to the healthy state.
    """
    if problem is None:
        problem = transcribe(ocp, grid, scheme)
    t = grid.times
    up_max, ua_max = ocp.control_caps
    if strategy == "open-loop":
        traj = integrate(ocp.patient, None, grid.t_f, tol=1e-8, n_report=grid.n_nodes)
        X = np.column_stack(
            [np.interp(t, traj.times, traj.states[:, i]) for i in range(4)]
        )
        U = np.zeros((grid.n_nodes, 2))
    elif strategy == "constant":
        X = np.tile(ocp.patient.x0, (grid.n_nodes, 1))
        U = np.tile([0.5 * up_max, 0.5 * ua_max], (grid.n_nodes, 1))
    elif strategy == "linear-to-healthy":
        frac = (t / grid.t_f)[:, None]
        X = (1.0 - frac) * ocp.patient.x0 + frac * HEALTHY_STATE
        U = np.tile([0.5 * up_max, 0.5 * ua_max], (grid.n_nodes, 1))
    else:
        raise ValueError(f"unknown guess strategy {strategy!r}")

    z = np.zeros(problem.n_var)
    z[problem.x_idx] = X
    z[problem.u_idx] = U
    if problem.hs:
        z[problem.um_idx] = 0.5 * (U[:-1] + U[1:])
    return z


class ExtractionError(RuntimeError):
    pass


@dataclass
class AdjointEstimate:
    """Costate estimate recovered from NLP multipliers.

    Defect multipliers live on interval midpoints; ``lam`` interpolates them
    to the node grid with the sign fixed so lam(t_f) matches the terminal-cost
    gradient (the transversality value).  ``path_multipliers`` maps each path
    constraint name to a (times, values) trace scaled back to continuous-time
    units (discrete multiplier / quadrature weight).
    """

    times: np.ndarray
    lam: np.ndarray
    mid_times: np.ndarray
    lam_mid: np.ndarray
    path_multipliers: dict
    transversality_gap: float


def _interp_linear_extrap(t, tp, yp):
    y = np.interp(t, tp, yp)
    if tp.size >= 2:
        left = t < tp[0]
        right = t > tp[-1]
        y[left] = yp[0] + (t[left] - tp[0]) * (yp[1] - yp[0]) / (tp[1] - tp[0])
        y[right] = yp[-1] + (t[right] - tp[-1]) * (yp[-1] - yp[-2]) / (tp[-1] - tp[-2])
    return y


def extract_solution(nlp_sol, problem: NlpProblem):
    """Turn a successful NLP solution into (Trajectory, AdjointEstimate)."""
    if not nlp_sol.success:
        raise ExtractionError(
            f"refusing to extract from a failed solve (status {nlp_sol.status!r})"
        )
    z = np.asarray(nlp_sol.z, dtype=float)
    X, U, UM = problem.split(z)
    t = problem.grid.times
    traj = Trajectory(times=t, states=np.maximum(X, 0.0), controls=U)

    lam_mid = -np.asarray(nlp_sol.y_eq)[problem.defect_rows]  # (ni, nx)
    tm = problem.grid.mid_times
    lam = np.column_stack(
        [_interp_linear_extrap(t, tm, lam_mid[:, i]) for i in range(problem.nx)]
    )
    phi_x = problem.cont.cost.phi_x(X[-1])
    gap = float(np.max(np.abs(lam[-1] - phi_x)) / (1.0 + np.max(np.abs(phi_x))))

    path_mult = {}
    if problem.n_path:
        y_in = np.asarray(nlp_sol.y_ineq, dtype=float)
        for j, row in enumerate(problem.cont.path_rows):
            times = [t]
            vals = [y_in[problem.node_ineq_rows[:, j]] / problem.node_weights]
            if problem.hs:
                times.append(tm)
                vals.append(y_in[problem.mid_ineq_rows[:, j]] / problem.mid_weight)
            tt = np.concatenate(times)
            vv = np.concatenate(vals)
            order = np.argsort(tt)
            path_mult[row.name] = (tt[order], vv[order])

    return traj, AdjointEstimate(
        times=t,
        lam=lam,
        mid_times=tm,
        lam_mid=lam_mid,
        path_multipliers=path_mult,
        transversality_gap=gap,
    )
