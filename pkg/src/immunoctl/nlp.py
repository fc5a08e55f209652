"""Sparse nonlinear programming by a primal-dual interior-point method.

Solves

    min f(z)  s.t.  c_E(z) = 0,  c_I(z) <= 0,  lb <= z <= ub

returning primal and dual solutions.  Inequalities get slacks (c_I + s = 0,
s > 0); slacks and variable bounds are handled by a log barrier with barrier
parameter mu driven down monotonically (factor ``kappa_mu`` whenever the
scaled barrier KKT error drops below ``kappa_eps * mu``).  Each step solves
one sparse symmetric indefinite KKT system (via scipy's sparse LU); lack of
positive curvature shows up as a non-descent direction and is repaired by
diagonal ("inertia") regularization of the Hessian block.  Steps respect a
fraction-to-the-boundary rule and are accepted by a backtracking line search
on an l1 merit function.

An augmented-Lagrangian fallback handles starts the barrier method cannot
digest: a few outer multiplier updates over a projected-gradient inner solver
move the iterate near feasibility, then the interior-point phase restarts.

The solver is deterministic: no randomness, fixed evaluation order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "SolverOptions",
    "KktReport",
    "NlpSolution",
    "solve",
    "kkt_check",
    "derivative_check",
    "DerivativeCheckReport",
]


@dataclass
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 500
    mu_init: float = 0.1
    mu_min: float | None = None  # defaults to tol/10
    kappa_mu: float = 0.2  # monotone barrier reduction factor
    theta_mu: float = 1.5  # superlinear reduction exponent
    kappa_eps: float = 10.0  # barrier subproblem tolerance: E_mu <= kappa_eps*mu
    tau_min: float = 0.99  # fraction-to-the-boundary floor
    kappa_sigma: float = 1e10  # dual clipping box around mu/x
    reg_eq: float = 1e-11  # constant dual regularization of equality rows
    reg_init: float = 1e-8  # first trial of primal (inertia) regularization
    reg_max: float = 1e12
    max_linesearch: int = 40
    armijo: float = 1e-4
    bound_push: float = 1e-2  # relative interior push for the initial point
    hessian: str = "auto"  # "auto" | "exact" | "block-psd"
    derivative_mode: str = "analytic"  # or "finite-difference-check"
    fd_check_h: float = 1e-6
    fd_check_tol: float = 1e-4
    fallback_auglag: bool = True
    enable_dual_refresh: bool = True
    enable_restoration: bool = True
    auglag_outer: int = 8
    auglag_inner: int = 300
    log_path: str | None = None
    verbose: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.mu_min is None:
            self.mu_min = self.tol / 10.0


@dataclass
class KktReport:
    stationarity: float
    primal_feasibility: float
    complementarity: float
    dual_feasibility_ok: bool

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.primal_feasibility, self.complementarity)


@dataclass
class NlpSolution:
    z: np.ndarray
    y_eq: np.ndarray
    y_ineq: np.ndarray
    z_lower: np.ndarray  # multipliers of z >= lb
    z_upper: np.ndarray  # multipliers of z <= ub
    slacks: np.ndarray
    obj: float
    status: str
    success: bool
    n_iter: int
    kkt: KktReport | None = None
    iterations: list = field(default_factory=list)
    mu_final: float = 0.0
    err_scaled: float = np.inf

    def iteration_log(self) -> str:
        """CSV iteration log: iter,obj,primal_inf,dual_inf,compl,mu,step."""
        buf = io.StringIO()
        buf.write("iter,obj,primal_inf,dual_inf,complementarity,barrier_mu,step\n")
        for row in self.iterations:
            buf.write(
                "%d,%.12g,%.6g,%.6g,%.6g,%.6g,%.6g\n"
                % (row[0], row[1], row[2], row[3], row[4], row[5], row[6])
            )
        return buf.getvalue()


# -- small helpers ------------------------------------------------------------


def _ineq(problem, z):
    if problem.n_ineq:
        return problem.ineq_constraints(z)
    return np.empty(0)


def _ineq_jac(problem, z):
    if problem.n_ineq:
        return problem.ineq_jacobian(z).tocsr()
    return sp.csr_matrix((0, problem.n_var))


def _max_step(x, dx, tau):
    """Largest alpha in (0, 1] with x + alpha dx >= (1 - tau) x elementwise."""
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * x[neg] / dx[neg])))


# filter line-search constants (Waechter-Biegler style)
GAMMA_THETA = 1e-5
GAMMA_PHI = 1e-5
S_THETA = 1.1
S_PHI = 2.3
DELTA_SW = 1.0
THETA_CAP = 1e4


def _in_filter(filt, theta, phi) -> bool:
    """True when (theta, phi) is dominated by (worse than) a filter entry."""
    for th_j, ph_j in filt:
        if theta >= th_j and phi >= ph_j:
            return True
    return False


def _restore_feasibility(problem, z0, opts: SolverOptions) -> np.ndarray:
    """Projected-gradient descent on the squared constraint violation.

    Minimizes 0.5 |c_E|^2 + 0.5 |max(c_I, 0)|^2 within the variable box,
    Barzilai-Borwein steps with a decrease guard.  Used as the restoration
    phase when the filter line search runs out of step sizes.
    """
    lb = np.asarray(problem.lb, dtype=float)
    ub = np.asarray(problem.ub, dtype=float)
    z = np.clip(z0, lb, ub)

    def viol_grad(z):
        v = 0.0
        g = np.zeros_like(z)
        if problem.n_eq:
            cE = problem.eq_constraints(z)
            v += 0.5 * float(cE @ cE)
            g += problem.eq_jacobian(z).T @ cE
        if problem.n_ineq:
            cI = np.maximum(problem.ineq_constraints(z), 0.0)
            v += 0.5 * float(cI @ cI)
            g += problem.ineq_jacobian(z).T @ cI
        return v, g

    v, g = viol_grad(z)
    step = 1.0 / max(1.0, float(np.max(np.abs(g))))
    z_prev, g_prev = None, None
    for _ in range(200):
        if z_prev is not None:
            dz_ = z - z_prev
            dg_ = g - g_prev
            denom = float(dz_ @ dg_)
            if denom > 1e-16:
                step = float(np.clip((dz_ @ dz_) / denom, 1e-10, 1e4))
        z_new = np.clip(z - step * g, lb, ub)
        v_new, g_new = viol_grad(z_new)
        tries = 0
        while v_new > v and tries < 25:
            step *= 0.25
            z_new = np.clip(z - step * g, lb, ub)
            v_new, g_new = viol_grad(z_new)
            tries += 1
        if v_new >= v * (1.0 - 1e-10):
            break
        z_prev, g_prev = z, g
        z, g, v = z_new, g_new, v_new
        if v < 1e-16:
            break
    return z


class _Workspace:
    """Per-solve state: current iterate, duals and bound bookkeeping."""

    def __init__(self, problem, guess, opts: SolverOptions):
        self.problem = problem
        self.opts = opts
        n = problem.n_var
        lb = np.asarray(problem.lb, dtype=float)
        ub = np.asarray(problem.ub, dtype=float)
        self.lb, self.ub = lb, ub
        self.hasL = np.isfinite(lb)
        self.hasU = np.isfinite(ub)

        z = np.array(guess, dtype=float)
        # push strictly inside the box (two-sided bounds get a relative push)
        lbf = np.where(self.hasL, lb, 0.0)
        ubf = np.where(self.hasU, ub, 0.0)
        width = np.where(self.hasL & self.hasU, ubf - lbf, np.inf)
        pushL = np.minimum(opts.bound_push * np.maximum(1.0, np.abs(lbf)), 1e-2 * width)
        pushU = np.minimum(opts.bound_push * np.maximum(1.0, np.abs(ubf)), 1e-2 * width)
        z = np.where(self.hasL, np.maximum(z, lbf + pushL), z)
        z = np.where(self.hasU, np.minimum(z, ubf - pushU), z)
        self.z = z

        mu = opts.mu_init
        cI = _ineq(problem, z)
        # floor slacks at the barrier scale: tiny slacks on violated rows blow
        # up the duals (y ~ mu/s) and strangle the fraction-to-the-boundary rule
        self.s = np.maximum(-cI, max(1e-2, mu)) if cI.size else np.empty(0)
        self.y_eq = np.zeros(problem.n_eq)
        self.y_in = np.clip(mu / self.s, 1e-6, 1e3) if cI.size else np.empty(0)
        self.zL = np.where(self.hasL, mu / np.maximum(z - lb, 1e-12), 0.0)
        self.zU = np.where(self.hasU, mu / np.maximum(ub - z, 1e-12), 0.0)
        self.mu = mu

    def slack_L(self):
        return np.where(self.hasL, self.z - self.lb, 1.0)

    def slack_U(self):
        return np.where(self.hasU, self.ub - self.z, 1.0)

    def barrier_phi(self, z, s):
        f = self.problem.objective(z)
        val = f
        if np.any(self.hasL):
            gap = (z - self.lb)[self.hasL]
            if np.any(gap <= 0.0):
                return np.inf
            val -= self.mu * np.sum(np.log(gap))
        if np.any(self.hasU):
            gap = (self.ub - z)[self.hasU]
            if np.any(gap <= 0.0):
                return np.inf
            val -= self.mu * np.sum(np.log(gap))
        if s.size:
            if np.any(s <= 0.0):
                return np.inf
            val -= self.mu * np.sum(np.log(s))
        return val

    def theta(self, z, s):
        t = 0.0
        if self.problem.n_eq:
            t += np.sum(np.abs(self.problem.eq_constraints(z)))
        if s.size:
            t += np.sum(np.abs(_ineq(self.problem, z) + s))
        return t


def _residuals(ws: _Workspace, g, JE, JI, cE, cI, mu):
    """(dual, primal, complementarity) infinity norms at barrier parameter mu."""
    r_d = g.copy()
    if ws.problem.n_eq:
        r_d += JE.T @ ws.y_eq
    if cI.size:
        r_d += JI.T @ ws.y_in
    r_d -= ws.zL
    r_d += ws.zU

    prim = 0.0
    if cE.size:
        prim = max(prim, np.max(np.abs(cE)))
    if cI.size:
        prim = max(prim, np.max(np.abs(cI + ws.s)))

    compl_parts = []
    if np.any(ws.hasL):
        compl_parts.append(np.max(np.abs((ws.slack_L() * ws.zL - mu)[ws.hasL])))
    if np.any(ws.hasU):
        compl_parts.append(np.max(np.abs((ws.slack_U() * ws.zU - mu)[ws.hasU])))
    if cI.size:
        compl_parts.append(np.max(np.abs(ws.s * ws.y_in - mu)))
    compl = max(compl_parts) if compl_parts else 0.0

    # IPOPT-style scaling guards against runaway multipliers inflating the test
    s_max = 100.0
    total = np.sum(np.abs(ws.y_eq)) + np.sum(np.abs(ws.y_in))
    total += np.sum(np.abs(ws.zL[ws.hasL])) + np.sum(np.abs(ws.zU[ws.hasU]))
    count = ws.problem.n_eq + ws.y_in.size + int(ws.hasL.sum()) + int(ws.hasU.sum())
    s_d = max(s_max, total / max(count, 1)) / s_max
    return float(np.max(np.abs(r_d)) / s_d), float(prim), float(compl / s_d)


def solve(problem, guess, opts: SolverOptions | None = None) -> NlpSolution:
    """Run the interior-point method; fall back to augmented-Lagrangian restart."""
    opts = opts or SolverOptions()
    if opts.derivative_mode == "finite-difference-check":
        rep = derivative_check(problem, np.asarray(guess, dtype=float), opts.fd_check_h)
        if rep.max_error > opts.fd_check_tol:
            raise RuntimeError(
                f"derivative check failed: {rep.worst_kind}[{rep.worst_index}] "
                f"rel err {rep.max_error:.3e}"
            )

    mode = opts.hessian
    if mode == "auto" and getattr(problem, "supports_convexify", False):
        # Alternate two phases on a shared iteration budget: convexified
        # (block-PSD) Hessians globalize through the nonconvex transient,
        # exact Hessians under a curvature test restore fast local
        # convergence that eigenvalue clipping destroys.  Each phase is
        # warm-started on the previous primal-dual point.
        budget = opts.max_iter
        phase = "block-psd"
        warm_sol = None
        sol = None
        all_iters: list = []
        while budget > 0:
            o = _replace_opts(
                opts,
                hessian=phase,
                max_iter=budget,
                mu_init=warm_sol.mu_final if warm_sol is not None else opts.mu_init,
            )
            cur = _solve_ip(
                problem,
                warm_sol.z if warm_sol is not None else guess,
                o,
                warm=warm_sol,
                detect_stall=True,
            )
            used = max(len(cur.iterations), 1)
            budget -= used
            base = all_iters[-1][0] + 1 if all_iters else 0
            all_iters.extend([[base + r[0]] + r[1:] for r in cur.iterations])
            if opts.verbose:
                print(
                    f"[phase {phase}] {cur.status} its={used} obj={cur.obj:.6g} "
                    f"kkt={cur.kkt.max_residual:.3e} mu={cur.mu_final:.1e}"
                )
            better = sol is None or cur.err_scaled < sol.err_scaled
            if better:
                sol = cur
            if cur.success:
                sol = cur
                break
            if warm_sol is not None and not better and phase == "exact":
                break  # neither phase improves any more
            # warm-start the next phase from the best point seen, not from a
            # phase that wandered off
            warm_sol = cur if better else sol
            phase = "exact" if phase == "block-psd" else "block-psd"
            if phase == "exact":
                # unconverged multipliers poison exact-Hessian steps; hand the
                # polish phase recentered duals instead
                import copy

                warm_sol = copy.copy(warm_sol)
                y_eq, yI, zL, zU = _recenter_duals(
                    problem,
                    warm_sol.z,
                    warm_sol.slacks,
                    warm_sol.mu_final,
                    np.isfinite(problem.lb),
                    np.isfinite(problem.ub),
                    np.asarray(problem.lb, dtype=float),
                    np.asarray(problem.ub, dtype=float),
                )
                warm_sol.y_eq = y_eq
                warm_sol.y_ineq = yI
                warm_sol.z_lower = zL
                warm_sol.z_upper = zU
        sol.iterations = all_iters
    else:
        sol = _solve_ip(problem, guess, opts)
    if sol.success or not opts.fallback_auglag:
        return sol
    z_al, y_al = _auglag_phase(problem, np.asarray(guess, dtype=float), opts)
    sol2 = _solve_ip(problem, z_al, _replace_opts(opts, hessian="block-psd"), y_eq0=y_al)
    if sol2.success or sol2.kkt.max_residual < sol.kkt.max_residual:
        return sol2
    return sol


def _recenter_duals(problem, z, s, mu, hasL, hasU, lb, ub):
    """Central-path bound/slack duals plus least-squares equality duals."""
    g = problem.gradient(z)
    sL = np.maximum(np.where(hasL, z - lb, 1.0), 1e-14)
    sU = np.maximum(np.where(hasU, ub - z, 1.0), 1e-14)
    zL = np.where(hasL, mu / sL, 0.0)
    zU = np.where(hasU, mu / sU, 0.0)
    yI = mu / np.maximum(s, 1e-14) if problem.n_ineq else np.empty(0)
    r0 = g - zL + zU
    if problem.n_ineq:
        r0 = r0 + problem.ineq_jacobian(z).T @ yI
    y_eq = np.zeros(problem.n_eq)
    if problem.n_eq:
        JE = problem.eq_jacobian(z).tocsr()
        A = (JE @ JE.T + 1e-10 * sp.identity(problem.n_eq)).tocsc()
        y_eq = splu(A).solve(-(JE @ r0))
    return y_eq, yI, zL, zU


def _replace_opts(opts: SolverOptions, **kw) -> SolverOptions:
    import dataclasses

    return dataclasses.replace(opts, **kw)


def _solve_ip(
    problem, guess, opts: SolverOptions, y_eq0=None, warm=None, detect_stall=False
) -> NlpSolution:
    ws = _Workspace(problem, guess, opts)
    if warm is not None:
        # continue exactly from a previous phase: no bound push, keep duals
        ws.z = np.array(warm.z, dtype=float)
        ws.s = np.array(warm.slacks, dtype=float)
        ws.y_eq = np.array(warm.y_eq, dtype=float)
        ws.y_in = np.maximum(np.array(warm.y_ineq, dtype=float), 1e-16)
        ws.zL = np.array(warm.z_lower, dtype=float)
        ws.zU = np.array(warm.z_upper, dtype=float)
    elif y_eq0 is not None and y_eq0.size == problem.n_eq:
        ws.y_eq = np.array(y_eq0, dtype=float)
    mE, mI, n = problem.n_eq, problem.n_ineq, problem.n_var
    eyeE = sp.identity(mE, format="csr") if mE else None

    delta_last = 0.0
    status = "max_iter"
    status_detail = ""
    fail_reason = "regularization_exhausted"
    log: list = []
    err_hist: list = []

    theta_init = ws.theta(ws.z, ws.s)
    theta_min = 1e-4 * max(1.0, theta_init)  # switching-condition threshold
    theta_feas = max(opts.tol, 1e-8 * max(1.0, theta_init))
    filt = [(THETA_CAP * max(1.0, theta_init), -np.inf)]
    restorations = 0

    it = 0
    for it in range(1, opts.max_iter + 1):
        z = ws.z
        g = problem.gradient(z)
        cE = problem.eq_constraints(z) if mE else np.empty(0)
        cI = _ineq(problem, z)
        JE = problem.eq_jacobian(z).tocsr() if mE else sp.csr_matrix((0, n))
        JI = _ineq_jac(problem, z)

        dual0, prim0, compl0 = _residuals(ws, g, JE, JI, cE, cI, 0.0)
        err0 = max(dual0, prim0, compl0)
        log.append([it - 1, problem.objective(z), prim0, dual0, compl0, ws.mu, 0.0])
        if opts.verbose:
            print(
                f"[ip] it={it - 1:4d} f={log[-1][1]:.8e} prim={prim0:.2e} "
                f"dual={dual0:.2e} compl={compl0:.2e} mu={ws.mu:.1e}"
            )
        if err0 <= opts.tol:
            status = "optimal"
            break
        err_hist.append((err0, ws.mu))
        if (
            detect_stall
            and len(err_hist) > 40
            and prim0 <= 10.0 * opts.tol
            and err_hist[-1][0] > 0.9 * err_hist[-21][0]
            and err_hist[-1][1] >= err_hist[-41][1]
        ):
            status = "slow_progress"
            break

        # barrier update on subproblem convergence (filter resets with mu)
        dual_mu, prim_mu, compl_mu = _residuals(ws, g, JE, JI, cE, cI, ws.mu)
        if (
            opts.enable_dual_refresh
            and mE
            and ws.mu <= opts.mu_min * 1.001
            and dual_mu > opts.kappa_eps * ws.mu
            and prim_mu <= opts.kappa_eps * ws.mu
            and compl_mu <= opts.kappa_eps * ws.mu
        ):
            # Primal side has converged for this barrier level but the duals
            # lag (convexified-Hessian steps damp them).  Recenter the bound
            # and slack duals exactly on the central path, then refresh y_eq
            # by least squares against the remaining stationarity residual.
            sL0, sU0 = ws.slack_L(), ws.slack_U()
            zL_c = np.where(ws.hasL, ws.mu / sL0, 0.0)
            zU_c = np.where(ws.hasU, ws.mu / sU0, 0.0)
            yI_c = ws.mu / ws.s if mI else ws.y_in
            r0 = g - zL_c + zU_c
            if mI:
                r0 = r0 + JI.T @ yI_c
            A = (JE @ JE.T + 1e-10 * sp.identity(mE)).tocsc()
            y_ls = splu(A).solve(-(JE @ r0))
            saved = (ws.y_eq, ws.y_in, ws.zL, ws.zU)
            ws.y_eq, ws.zL, ws.zU = y_ls, zL_c, zU_c
            if mI:
                ws.y_in = yI_c
            dual_new, prim_new, compl_new = _residuals(ws, g, JE, JI, cE, cI, ws.mu)
            if dual_new < dual_mu:
                dual_mu, prim_mu, compl_mu = dual_new, prim_new, compl_new
            else:
                ws.y_eq, ws.y_in, ws.zL, ws.zU = saved
        mu_dropped = False
        while (
            max(dual_mu, prim_mu, compl_mu) <= opts.kappa_eps * ws.mu
            and ws.mu > opts.mu_min
        ):
            ws.mu = max(
                opts.mu_min, min(opts.kappa_mu * ws.mu, ws.mu**opts.theta_mu)
            )
            mu_dropped = True
            dual_mu, prim_mu, compl_mu = _residuals(ws, g, JE, JI, cE, cI, ws.mu)
        if mu_dropped:
            filt = [(THETA_CAP * max(1.0, theta_init), -np.inf)]
        mu = ws.mu
        tau = max(opts.tau_min, 1.0 - mu)

        # true slacks drive the fraction-to-the-boundary rule; floored copies
        # keep sigma and the barrier gradient finite when an iterate hugs a
        # bound to machine precision
        sL = ws.slack_L()
        sU = ws.slack_U()
        sLf = np.maximum(sL, 1e-14)
        sUf = np.maximum(sU, 1e-14)
        sigma_z = np.where(ws.hasL, ws.zL / sLf, 0.0) + np.where(ws.hasU, ws.zU / sUf, 0.0)
        sigma_z = np.minimum(sigma_z, 1e14)

        # barrier gradient (bound duals eliminated primal-dually)
        r_z = g.copy()
        if mE:
            r_z += JE.T @ ws.y_eq
        if mI:
            r_z += JI.T @ ws.y_in
        r_z -= np.where(ws.hasL, mu / sLf, 0.0)
        r_z += np.where(ws.hasU, mu / sUf, 0.0)
        rhs = np.concatenate(
            [
                -r_z,
                -cE if mE else np.empty(0),
                (-cI - mu / ws.y_in) if mI else np.empty(0),
            ]
        )

        use_psd = opts.hessian == "block-psd" and getattr(
            problem, "supports_convexify", False
        )
        if use_psd:
            W = problem.lagrangian_hessian(z, 1.0, ws.y_eq, ws.y_in, convexify=True)
        else:
            W = problem.lagrangian_hessian(z, 1.0, ws.y_eq, ws.y_in)
        phi_now = ws.barrier_phi(z, ws.s)
        delta = 0.0 if delta_last == 0.0 else max(opts.reg_init, 0.33 * delta_last)
        step = None
        for _ in range(40):
            Hzz = (W + sp.diags(sigma_z + delta)).tocsc()
            if mE and mI:
                K = sp.bmat(
                    [
                        [Hzz, JE.T, JI.T],
                        [JE, -opts.reg_eq * eyeE, None],
                        [JI, None, -sp.diags(ws.s / ws.y_in)],
                    ],
                    format="csc",
                )
            elif mE:
                K = sp.bmat([[Hzz, JE.T], [JE, -opts.reg_eq * eyeE]], format="csc")
            elif mI:
                K = sp.bmat([[Hzz, JI.T], [JI, -sp.diags(ws.s / ws.y_in)]], format="csc")
            else:
                K = Hzz
            if not np.all(np.isfinite(K.data)):
                fail_reason = "kkt_nonfinite"
                break
            try:
                lu = splu(K)
                d = lu.solve(rhs)
            except RuntimeError:
                fail_reason = "splu_singular"
                delta = max(opts.reg_init, 10.0 * delta, 10.0 * delta_last)
                continue
            if not np.all(np.isfinite(d)):
                fail_reason = "solution_nonfinite"
                delta = max(opts.reg_init, 10.0 * delta)
                continue
            dz = d[:n]
            dy = d[n : n + mE]
            dyI = d[n + mE :]
            ds = (-(cI + ws.s) - JI @ dz) if mI else np.empty(0)

            # curvature test along the step plus a dual-explosion guard:
            # wrong KKT inertia shows up either as nonpositive curvature
            # dz'(W + Sigma + delta I)dz or as runaway multiplier steps, and
            # both are repaired by raising the primal regularization
            if not use_psd:
                curv = float(dz @ (Hzz @ dz))
                dy_norm = 0.0
                if mE and dy.size:
                    dy_norm = max(dy_norm, float(np.max(np.abs(dy))))
                if mI and dyI.size:
                    dy_norm = max(dy_norm, float(np.max(np.abs(dyI))))
                y_scale = 1.0 + max(
                    float(np.max(np.abs(ws.y_eq), initial=0.0)),
                    float(np.max(np.abs(ws.y_in), initial=0.0)),
                )
                if curv < 1e-10 * float(dz @ dz) or dy_norm > 1e3 * y_scale:
                    delta = max(opts.reg_init, 10.0 * delta) if delta else opts.reg_init
                    if delta > opts.reg_max:
                        break
                    continue

            # barrier directional derivative; regularize only when a
            # near-feasible direction fails to descend (curvature defect)
            dphi = float(
                (g - np.where(ws.hasL, mu / sLf, 0.0) + np.where(ws.hasU, mu / sUf, 0.0))
                @ dz
            )
            if mI:
                dphi += float(-(mu / ws.s) @ ds)
            theta0 = ws.theta(z, ws.s)
            if dphi < 1e-9 * (1.0 + abs(phi_now)) or theta0 > theta_feas:
                step = (dz, dy, dyI, ds, dphi, theta0)
                break
            delta = max(opts.reg_init, 10.0 * delta) if delta else opts.reg_init
            if delta > opts.reg_max:
                break
        if step is None:
            status = "linear_solver_failure"
            status_detail = fail_reason
            break
        delta_last = delta
        dz, dy, dyI, ds, dphi, theta0 = step

        # fraction-to-the-boundary limits
        a_pri = 1.0
        if np.any(ws.hasL):
            a_pri = min(a_pri, _max_step(sL[ws.hasL], dz[ws.hasL], tau))
        if np.any(ws.hasU):
            a_pri = min(a_pri, _max_step(sU[ws.hasU], -dz[ws.hasU], tau))
        if mI:
            a_pri = min(a_pri, _max_step(ws.s, ds, tau))
        a_dual = 1.0
        if np.any(ws.hasL):
            dzL = np.where(ws.hasL, mu / sLf - ws.zL - (ws.zL / sLf) * dz, 0.0)
            a_dual = min(a_dual, _max_step(ws.zL[ws.hasL], dzL[ws.hasL], tau))
        else:
            dzL = np.zeros(n)
        if np.any(ws.hasU):
            dzU = np.where(ws.hasU, mu / sUf - ws.zU + (ws.zU / sUf) * dz, 0.0)
            a_dual = min(a_dual, _max_step(ws.zU[ws.hasU], dzU[ws.hasU], tau))
        else:
            dzU = np.zeros(n)
        if mI:
            a_dual = min(a_dual, _max_step(ws.y_in, dyI, tau))

        # filter line search (sufficient progress in theta or phi, never
        # into the forbidden region), with one second-order correction try;
        # a full step that contracts the primal-dual residual norm is always
        # accepted (restores fast local convergence near the mu-solution)
        phi0 = phi_now
        res0 = max(dual_mu, prim_mu, compl_mu)
        alpha = a_pri
        accepted = False
        ftype_step = False
        soc_used = False
        dz_acc, ds_acc = dz, ds
        for ls in range(opts.max_linesearch):
            z_t = z + alpha * dz
            s_t = ws.s + alpha * ds if mI else ws.s
            theta_t = ws.theta(z_t, s_t)
            phi_t = ws.barrier_phi(z_t, s_t)
            ok = np.isfinite(theta_t) and np.isfinite(phi_t)
            if ls == 0 and ok:
                import copy as _copy

                ws_t = _copy.copy(ws)
                ws_t.z, ws_t.s = z_t, s_t
                ws_t.y_eq = ws.y_eq + alpha * dy if mE else ws.y_eq
                ws_t.y_in = np.maximum(ws.y_in + a_dual * dyI, 1e-16) if mI else ws.y_in
                ws_t.zL = ws.zL + a_dual * dzL
                ws_t.zU = ws.zU + a_dual * dzU
                g_t = problem.gradient(z_t)
                JE_t = problem.eq_jacobian(z_t).tocsr() if mE else JE
                JI_t = _ineq_jac(problem, z_t)
                cE_t = problem.eq_constraints(z_t) if mE else cE
                cI_t = _ineq(problem, z_t)
                trial = _residuals(ws_t, g_t, JE_t, JI_t, cE_t, cI_t, mu)
                if max(trial) <= (1.0 - 1e-4 * alpha) * res0:
                    accepted, ftype_step = True, True
                    break
            if ok and not _in_filter(filt, theta_t, phi_t):
                switching = (
                    theta0 <= theta_min
                    and dphi < 0.0
                    and alpha * (-dphi) ** S_PHI > DELTA_SW * theta0**S_THETA
                )
                if switching:
                    if phi_t <= phi0 + opts.armijo * alpha * dphi:
                        accepted, ftype_step = True, True
                        break
                elif (
                    theta_t <= (1.0 - GAMMA_THETA) * theta0
                    or phi_t <= phi0 - GAMMA_PHI * theta0
                ):
                    accepted, ftype_step = True, False
                    break
            if ls == 0 and mE and np.isfinite(theta_t) and theta_t >= theta0:
                # second-order correction: re-solve with the constraint
                # residual at the trial point, keeping the dual rhs
                c_soc_E = alpha * cE + problem.eq_constraints(z_t)
                if mI:
                    c_soc_I = alpha * (cI + ws.s) + _ineq(problem, z_t) + s_t
                rhs_soc = np.concatenate(
                    [
                        rhs[:n],
                        -c_soc_E,
                        (-c_soc_I - mu / ws.y_in + ws.s) if mI else np.empty(0),
                    ]
                )
                d_soc = lu.solve(rhs_soc)
                dz_s = d_soc[:n]
                ds_s = (-c_soc_I - JI @ dz_s) if mI else np.empty(0)
                a_soc = 1.0
                if np.any(ws.hasL):
                    a_soc = min(a_soc, _max_step(sL[ws.hasL], dz_s[ws.hasL], tau))
                if np.any(ws.hasU):
                    a_soc = min(a_soc, _max_step(sU[ws.hasU], -dz_s[ws.hasU], tau))
                if mI:
                    a_soc = min(a_soc, _max_step(ws.s, ds_s, tau))
                z_c = z + a_soc * dz_s
                s_c = ws.s + a_soc * ds_s if mI else ws.s
                theta_c = ws.theta(z_c, s_c)
                phi_c = ws.barrier_phi(z_c, s_c)
                if (
                    np.isfinite(theta_c)
                    and np.isfinite(phi_c)
                    and theta_c < 0.99 * theta0
                    and not _in_filter(filt, theta_c, phi_c)
                ):
                    dz_acc, ds_acc = dz_s, ds_s
                    alpha = a_soc
                    theta_t, phi_t = theta_c, phi_c
                    accepted, ftype_step, soc_used = True, False, True
                    break
            alpha *= 0.5
            if alpha < 1e-13:
                break
        if not accepted:
            # restoration: pull the iterate toward feasibility and restart
            if opts.enable_restoration and restorations < 3 and theta0 > opts.tol:
                z_r = _restore_feasibility(problem, z, opts)
                # strictly interior again (restoration projects onto the box)
                gapL = np.where(ws.hasL, 1e-8 * np.maximum(1.0, np.abs(ws.lb)), 0.0)
                gapU = np.where(ws.hasU, 1e-8 * np.maximum(1.0, np.abs(ws.ub)), 0.0)
                z_r = np.where(ws.hasL, np.maximum(z_r, ws.lb + gapL), z_r)
                z_r = np.where(ws.hasU, np.minimum(z_r, ws.ub - gapU), z_r)
                theta_r = ws.theta(z_r, np.maximum(-_ineq(problem, z_r), 1e-8) if mI else ws.s)
                if theta_r < 0.9 * theta0:
                    ws.z = z_r
                    if mI:
                        cI_r = _ineq(problem, z_r)
                        ws.s = np.maximum(-cI_r, max(1e-4, ws.mu))
                        ws.y_in = np.clip(ws.mu / ws.s, 1e-6, 1e3)
                    restorations += 1
                    filt = [(THETA_CAP * max(1.0, theta_r), -np.inf)]
                    continue
            if max(dual0, compl0) < 1e2 * opts.tol and prim0 < opts.tol:
                status = "acceptable"
                break
            status = "linesearch_failure"
            break

        if not ftype_step:
            # theta-type step: block the (theta, phi) region just left
            filt.append((max((1.0 - GAMMA_THETA) * theta0, 0.0), phi0 - GAMMA_PHI * theta0))

        ws.z = z + alpha * dz_acc
        if mI:
            ws.s = ws.s + alpha * ds_acc
            ws.y_in = np.maximum(ws.y_in + a_dual * dyI, 1e-16)
        if mE:
            ws.y_eq = ws.y_eq + alpha * dy
        ws.zL = ws.zL + a_dual * dzL
        ws.zU = ws.zU + a_dual * dzU
        # keep bound duals inside the sigma box around mu/slack
        sLf = np.maximum(ws.slack_L(), 1e-14)
        sUf = np.maximum(ws.slack_U(), 1e-14)
        ks = opts.kappa_sigma
        ws.zL = np.where(
            ws.hasL, np.clip(ws.zL, mu / (ks * sLf), ks * mu / sLf), 0.0
        )
        ws.zU = np.where(
            ws.hasU, np.clip(ws.zU, mu / (ks * sUf), ks * mu / sUf), 0.0
        )
        if mI:
            ws.y_in = np.clip(ws.y_in, mu / (ks * ws.s), ks * mu / ws.s)
        log[-1][6] = alpha

    if status_detail and opts.verbose:
        print(f"[ip] failure detail: {status_detail}")
    sol = NlpSolution(
        z=ws.z,
        y_eq=ws.y_eq,
        y_ineq=ws.y_in,
        z_lower=ws.zL,
        z_upper=ws.zU,
        slacks=ws.s,
        obj=float(problem.objective(ws.z)),
        status=status,
        success=status in ("optimal", "acceptable"),
        n_iter=it,
        iterations=log,
        mu_final=ws.mu,
    )
    sol.err_scaled = log[-1][2] + log[-1][3] + log[-1][4] if log else np.inf
    sol.kkt = kkt_check(problem, sol)
    if opts.log_path:
        with open(opts.log_path, "w", encoding="utf-8") as fh:
            fh.write(sol.iteration_log())
    return sol


def kkt_check(problem, solution: NlpSolution) -> KktReport:
    """Recompute all KKT residual norms from scratch (solver-independent)."""
    z = np.asarray(solution.z, dtype=float)
    g = problem.gradient(z)
    lb = np.asarray(problem.lb, dtype=float)
    ub = np.asarray(problem.ub, dtype=float)
    hasL, hasU = np.isfinite(lb), np.isfinite(ub)

    r = g.copy()
    prim = 0.0
    compl_parts = [0.0]
    if problem.n_eq:
        cE = problem.eq_constraints(z)
        r += problem.eq_jacobian(z).T @ solution.y_eq
        prim = max(prim, float(np.max(np.abs(cE))))
    if problem.n_ineq:
        cI = problem.ineq_constraints(z)
        r += problem.ineq_jacobian(z).T @ solution.y_ineq
        prim = max(prim, float(np.max(np.maximum(cI, 0.0))))
        compl_parts.append(float(np.max(np.abs(solution.y_ineq * cI))))
    r -= np.where(hasL, solution.z_lower, 0.0)
    r += np.where(hasU, solution.z_upper, 0.0)
    if np.any(hasL):
        prim = max(prim, float(np.max((lb - z)[hasL], initial=0.0)))
        compl_parts.append(
            float(np.max(np.abs(solution.z_lower[hasL] * (z - lb)[hasL])))
        )
    if np.any(hasU):
        prim = max(prim, float(np.max((z - ub)[hasU], initial=0.0)))
        compl_parts.append(
            float(np.max(np.abs(solution.z_upper[hasU] * (ub - z)[hasU])))
        )

    dual_ok = True
    if problem.n_ineq:
        dual_ok = dual_ok and bool(np.min(solution.y_ineq, initial=0.0) >= -1e-8)
    dual_ok = dual_ok and bool(np.min(solution.z_lower[hasL], initial=0.0) >= -1e-8)
    dual_ok = dual_ok and bool(np.min(solution.z_upper[hasU], initial=0.0) >= -1e-8)

    return KktReport(
        stationarity=float(np.max(np.abs(r))),
        primal_feasibility=prim,
        complementarity=float(max(compl_parts)),
        dual_feasibility_ok=dual_ok,
    )


@dataclass
class DerivativeCheckReport:
    grad_error: float
    eq_jac_error: float
    ineq_jac_error: float
    worst_kind: str
    worst_index: tuple

    @property
    def max_error(self) -> float:
        return max(self.grad_error, self.eq_jac_error, self.ineq_jac_error)


def derivative_check(problem, z, h: float = 1e-6, columns=None) -> DerivativeCheckReport:
    """Central-difference check of the gradient and constraint Jacobians.

    ``columns`` restricts the probe to a subset of variables (all by default);
    errors are relative to the column scale.  Returns the worst entry and its
    (row, col) index.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    cols = np.arange(n) if columns is None else np.asarray(columns, dtype=int)

    g = problem.gradient(z)
    JE = problem.eq_jacobian(z).tocsc() if problem.n_eq else None
    JI = problem.ineq_jacobian(z).tocsc() if problem.n_ineq else None

    worst = ("gradient", (0,))
    errs = {"gradient": 0.0, "eq": 0.0, "ineq": 0.0}
    for jcol in cols:
        e = np.zeros(n)
        e[jcol] = h
        fp, fm = problem.objective(z + e), problem.objective(z - e)
        gfd = (fp - fm) / (2.0 * h)
        scale = 1.0 + abs(g[jcol])
        err = abs(g[jcol] - gfd) / scale
        if err > errs["gradient"]:
            errs["gradient"] = err
            if err >= max(errs.values()):
                worst = ("gradient", (int(jcol),))
        if JE is not None:
            cfd = (problem.eq_constraints(z + e) - problem.eq_constraints(z - e)) / (2 * h)
            col = np.asarray(JE[:, jcol].todense()).ravel()
            d = np.abs(col - cfd) / (1.0 + np.abs(col))
            i = int(np.argmax(d))
            if d[i] > errs["eq"]:
                errs["eq"] = float(d[i])
                if d[i] >= max(errs.values()):
                    worst = ("eq_jacobian", (i, int(jcol)))
        if JI is not None:
            cfd = (problem.ineq_constraints(z + e) - problem.ineq_constraints(z - e)) / (
                2 * h
            )
            col = np.asarray(JI[:, jcol].todense()).ravel()
            d = np.abs(col - cfd) / (1.0 + np.abs(col))
            i = int(np.argmax(d))
            if d[i] > errs["ineq"]:
                errs["ineq"] = float(d[i])
                if d[i] >= max(errs.values()):
                    worst = ("ineq_jacobian", (i, int(jcol)))
    return DerivativeCheckReport(
        grad_error=errs["gradient"],
        eq_jac_error=errs["eq"],
        ineq_jac_error=errs["ineq"],
        worst_kind=worst[0],
        worst_index=worst[1],
    )


# -- augmented-Lagrangian fallback --------------------------------------------


def _auglag_phase(problem, z0, opts: SolverOptions):
    """Bound-constrained augmented-Lagrangian warm start.

    Runs a few outer multiplier updates with a projected-gradient inner solver
    (Barzilai-Borwein steps).  Inequalities use the standard clipped form
    max(0, y + rho*c).  Returns (z, y_eq) to seed the interior-point phase.
    """
    lb = np.asarray(problem.lb, dtype=float)
    ub = np.asarray(problem.ub, dtype=float)
    z = np.clip(z0, lb, ub)
    yE = np.zeros(problem.n_eq)
    yI = np.zeros(problem.n_ineq)
    rho = 10.0

    def al_grad(z):
        g = problem.gradient(z)
        if problem.n_eq:
            cE = problem.eq_constraints(z)
            g = g + problem.eq_jacobian(z).T @ (yE + rho * cE)
        if problem.n_ineq:
            cI = problem.ineq_constraints(z)
            g = g + problem.ineq_jacobian(z).T @ np.maximum(0.0, yI + rho * cI)
        return g

    for _ in range(opts.auglag_outer):
        step = 1e-3
        g_prev = None
        z_prev = None
        for _ in range(opts.auglag_inner):
            g = al_grad(z)
            if g_prev is not None:
                dz = z - z_prev
                dg = g - g_prev
                denom = float(dz @ dg)
                if denom > 1e-16:
                    step = float(dz @ dz) / denom
                step = float(np.clip(step, 1e-8, 1e2))
            z_prev, g_prev = z, g
            z = np.clip(z - step * g, lb, ub)
            if np.max(np.abs(z - z_prev)) < 1e-12:
                break
        if problem.n_eq:
            cE = problem.eq_constraints(z)
            yE = yE + rho * cE
            if np.max(np.abs(cE)) < 1e-6:
                break
        if problem.n_ineq:
            yI = np.maximum(0.0, yI + rho * problem.ineq_constraints(z))
        rho = min(rho * 10.0, 1e8)
    return z, yE
