"""Hamiltonians, normal and abnormal bi-extremals, and their residual checks.

Normal extremals use the normalisation p0 = -1 and the elimination
u_i = <p, X_i(x)> of the energy cost.  Abnormal extremals of rank-2 frames
(p0 = 0) are integrated with the characteristic control that keeps
<p, [X1, X2]> = 0 along the curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .control import ControlSignal, ControlSystem, _rk4
from .vecfield import DimensionError

__all__ = [
    "AbnormalPreconditionError",
    "BiExtremalArc",
    "CharacteristicDegenerate",
    "OptimalControlProblem",
    "ShootingFailed",
    "arc_signal",
    "classify_abnormal",
    "hamiltonian",
    "integrate_abnormal_rank2",
    "integrate_normal",
    "normal_hamiltonian",
    "ocp_hamiltonian",
    "pmp_residual",
    "shoot_normal",
]


class AbnormalPreconditionError(ValueError):
    def __init__(self, constraint: str, value: float):
        super().__init__(f"initial covector violates {constraint} = 0 (value {value:.3e})")
        self.constraint = constraint
        self.value = value


class CharacteristicDegenerate(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"characteristic control degenerate (h1 = h2 = 0) at t = {t:.6g}")
        self.t = t


class ShootingFailed(RuntimeError):
    def __init__(self, residual: float):
        super().__init__(f"shooting did not converge; best endpoint residual {residual:.3e}")
        self.residual = residual


@dataclass(frozen=True)
class OptimalControlProblem:
    """A system with the energy cost 1/2 sum_{i in S} u_i^2.

    ``cost_indices=None`` charges every frame coefficient.
    """

    system: ControlSystem
    cost_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.cost_indices is not None:
            S = tuple(sorted(set(self.cost_indices)))
            if not S:
                raise ValueError("cost index set must be nonempty")
            if S[0] < 0 or S[-1] >= self.system.control_dim:
                raise ValueError(f"cost indices {S} outside the controls")
            object.__setattr__(self, "cost_indices", S)

    @property
    def S(self) -> tuple[int, ...]:
        if self.cost_indices is None:
            return tuple(range(self.system.nframe))
        return self.cost_indices

    def cost(self, x, u) -> float:
        u = np.asarray(u, dtype=float)
        return 0.5 * float(np.sum(u[list(self.S)] ** 2))


@dataclass
class BiExtremalArc:
    """Sampled (x(t), p(t), u(t), p0) with per-sample residual records."""

    times: np.ndarray
    states: np.ndarray
    costates: np.ndarray
    controls: np.ndarray
    p0: float
    residuals: dict = field(default_factory=dict)
    kind: str = "normal"

    def __post_init__(self):
        if self.p0 > 0:
            raise ValueError("p0 must be nonpositive")
        norms = np.sqrt(np.sum(self.costates**2, axis=1) + self.p0**2)
        if np.any(norms < 1e-12):
            raise ValueError("(p, p0) vanishes on the arc")


def hamiltonian(sys: ControlSystem, x, p, u) -> float:
    """<p, F(x, u)>."""
    p = np.asarray(p, dtype=float)
    if p.shape != (sys.nstate,):
        raise DimensionError(f"covector of shape {p.shape}, expected ({sys.nstate},)")
    return float(p @ sys.velocity(x, u))


def ocp_hamiltonian(prob: OptimalControlProblem, x, p, u, p0: float) -> float:
    if p0 > 0:
        raise ValueError("p0 must be nonpositive")
    return hamiltonian(prob.system, x, p, u) + p0 * prob.cost(x, u)


def normal_hamiltonian(sys: ControlSystem, x, p, w=()) -> float:
    """1/2 sum_i <p, X_i(x)>^2."""
    g = sys.frame_fn(np.asarray(x, dtype=float), np.asarray(w, dtype=float)).T @ np.asarray(p, dtype=float)
    return 0.5 * float(g @ g)


# ---------------------------------------------------------------------------
# normal extremals


def _normal_parts(prob: OptimalControlProblem):
    """Control elimination and Hamiltonian vector field, batched over leading axes."""
    sys = prob.system
    if sys.nparams:
        raise ValueError("integrate_normal needs a system without control parameters")
    S = [i for i in prob.S if i < sys.nframe]
    free = [i for i in range(sys.nframe) if i not in S]
    n = sys.nstate
    mask = np.zeros(sys.nframe)
    mask[S] = 1.0
    empty = np.zeros(0)

    def controls(x, p):
        g = np.einsum("...ir,...i->...r", sys.frame_fn(x, empty), p)
        return g * mask, g

    def rhs(y):
        x, p = y[..., :n], y[..., n:]
        G = sys.frame_fn(x, empty)
        u = np.einsum("...ir,...i->...r", G, p) * mask
        J = np.einsum("...ijr,...r->...ij", sys.frame_jac(x, empty)[..., :n, :], u)
        return np.concatenate([np.einsum("...ir,...r->...i", G, u),
                               -np.einsum("...ij,...i->...j", J, p)], axis=-1)

    return S, free, controls, rhs


def integrate_normal(prob: OptimalControlProblem, x0, p0cov, T: float = 1.0,
                     step: float = 1e-3, inert_tol: float = 1e-9) -> BiExtremalArc:
    """RK4 flow of the normal Hamiltonian with p0 = -1.

    Controls outside the cost set must be inert (<p, X_i> = 0); their
    constraint values are recorded in the residuals.
    """
    sys = prob.system
    n = sys.nstate
    S, free, controls, rhs = _normal_parts(prob)
    steps = max(1, int(np.ceil(T / step - 1e-9)))
    h = T / steps
    y = np.concatenate([np.asarray(x0, dtype=float), np.asarray(p0cov, dtype=float)])
    if y.shape != (2 * n,):
        raise DimensionError("x0 and p0cov must both have the state dimension")
    Y = np.empty((steps + 1, 2 * n))
    Y[0] = y
    for k in range(steps):
        y = _rk4(rhs, y, h)
        if not np.all(np.isfinite(y)):
            from .control import IntegrationDiverged

            raise IntegrationDiverged(k * h)
        Y[k + 1] = y
    U = np.empty((steps + 1, sys.nframe))
    ham = np.empty(steps + 1)
    inert = np.zeros(steps + 1)
    for k in range(steps + 1):
        u, g = controls(Y[k, :n], Y[k, n:])
        U[k] = u
        ham[k] = 0.5 * float(np.sum(g[S] ** 2))
        if free:
            inert[k] = float(np.max(np.abs(g[free])))
    if free and inert.max() > inert_tol:
        raise ValueError(f"controls {free} are not inert along the arc (|<p,X>| = {inert.max():.2e})")
    residuals = {
        "hamiltonian": ham,
        "hamiltonian_drift": float(np.max(np.abs(ham - ham[0]))),
        # stationarity with p0 = -1: <p, X_i> - u_i for costed controls
        "elimination": np.zeros(steps + 1),
        "inert": inert,
    }
    return BiExtremalArc(np.linspace(0.0, T, steps + 1), Y[:, :n], Y[:, n:], U, -1.0,
                         residuals, kind="normal")


def _normal_endpoint(prob, x0, P, T, step):
    """Endpoints for a batch of initial covectors ``P`` (shape (B, n))."""
    _, _, _, rhs = _normal_parts(prob)
    n = prob.system.nstate
    steps = max(1, int(np.ceil(T / step - 1e-9)))
    h = T / steps
    P = np.atleast_2d(P)
    y = np.concatenate([np.broadcast_to(x0, P.shape), P], axis=1)
    with np.errstate(all="ignore"):
        for _ in range(steps):
            y = _rk4(rhs, y, h)
    return y[:, :n]


def shoot_normal(prob: OptimalControlProblem, x0, x1, T: float = 1.0, tol: float = 1e-8,
                 multistarts: int = 8, step: float = 2e-3, seed: int = 0, max_iter: int = 40,
                 fd_step: float = 1e-7, init_scale: float = 3.0) -> BiExtremalArc:
    """Two-point normal extremal by Newton iteration on the initial covector.

    The Jacobian of p -> x(T) comes from central differences, integrated as
    one batch with the base point.  Newton runs on a coarse grid first and is
    polished at ``step``.  Every converged start is kept and the one with
    least energy is returned.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    n = prob.system.nstate
    rng = np.random.default_rng(seed)
    offsets = np.vstack([np.zeros(n), fd_step * np.eye(n), -fd_step * np.eye(n)])
    lams = 0.5 ** np.arange(12)

    def newton(P, h, tol_, iters):
        def F(Q):
            return _normal_endpoint(prob, x0, Q, T, h) - x1

        P = P.copy()
        m = len(P)
        err = np.full(m, np.inf)
        active = np.ones(m, dtype=bool)
        for _ in range(iters):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            R = F((P[idx, None, :] + offsets).reshape(-1, n)).reshape(idx.size, 2 * n + 1, n)
            r = R[:, 0]
            err[idx] = np.linalg.norm(r, axis=1)
            J = (R[:, 1:n + 1] - R[:, n + 1:]).transpose(0, 2, 1) / (2 * fd_step)
            steps_ = np.zeros((idx.size, n))
            for j, i in enumerate(idx):
                if err[i] <= tol_ or not (np.isfinite(err[i]) and np.all(np.isfinite(J[j]))):
                    active[i] = False
                    continue
                steps_[j] = np.linalg.lstsq(J[j], -r[j], rcond=1e-12)[0]
            keep = active[idx]
            idx, steps_ = idx[keep], steps_[keep]
            if idx.size == 0:
                break
            trial = F((P[idx, None, :] + lams[None, :, None] * steps_[:, None, :]).reshape(-1, n))
            errs = np.linalg.norm(trial, axis=1).reshape(idx.size, lams.size)
            errs[~np.isfinite(errs)] = np.inf
            for j, i in enumerate(idx):
                k = int(np.argmax(errs[j] < err[i]))
                if errs[j, k] < err[i]:
                    P[i] = P[i] + lams[k] * steps_[j]
                    err[i] = errs[j, k]
                else:
                    active[i] = False
        return P, err

    # all starts advance together so every stage is one batched integration;
    # a coarse grid finds the basins, the requested step polishes them
    P = np.vstack([(x1 - x0) / T] + [init_scale * rng.standard_normal(n) for _ in range(multistarts - 1)])
    coarse = max(step, min(1e-2, T / 50))
    with np.errstate(all="ignore"):
        if coarse > step:
            P, err = newton(P, coarse, max(tol, 1e-6), max_iter)
            P = P[err <= 1e-4]
        P, err = newton(P, step, tol, max_iter if coarse == step else 10)
    solutions = []
    for i in np.flatnonzero(err <= tol):
        arc = integrate_normal(prob, x0, P[i], T, step)
        solutions.append((float(arc.residuals["hamiltonian"][0]) * T, arc))
    best_res = float(np.min(err)) if err.size and np.isfinite(err).any() else np.inf
    if not solutions:
        raise ShootingFailed(best_res)
    energy, arc = min(solutions, key=lambda s: s[0])
    arc.residuals["energy"] = energy
    arc.residuals["endpoint_error"] = float(np.linalg.norm(arc.states[-1] - x1))
    return arc


# ---------------------------------------------------------------------------
# abnormal extremals of rank-2 frames


def _numeric(f):
    return f.numeric()


class _Rank2Frame:
    """Numeric evaluators of X1, X2 and the brackets needed along abnormal curves."""

    def __init__(self, frame: Sequence, second_order: bool = False):
        if len(frame) != 2:
            raise ValueError("abnormal integration needs exactly two frame fields")
        X1, X2 = frame
        X3 = X1.bracket(X2)
        Y1, Y2 = X1.bracket(X3), X2.bracket(X3)
        self.fields = [X1, X2, X3, Y1, Y2]
        self.X = [_numeric(X1), _numeric(X2)]
        self.X3 = _numeric(X3)[0]
        self.Y = [_numeric(Y1)[0], _numeric(Y2)[0]]
        self.n = X1.nstate if hasattr(X1, "nstate") else X1.dim
        self.second = None
        if second_order:
            # M[i][j] = <p, [X_j, Y_i]>
            self.second = [[_numeric(Xj.bracket(Yi))[0] for Xj in (X1, X2)] for Yi in (Y1, Y2)]

    def h(self, x, p):
        return np.array([p @ self.Y[0](x), p @ self.Y[1](x)])

    def M(self, x, p):
        return np.array([[p @ f(x) for f in row] for row in self.second])

    def constraints(self, x, p):
        return np.array([p @ self.X[0][0](x), p @ self.X[1][0](x), p @ self.X3(x)])


def integrate_abnormal_rank2(frame: Sequence, x0, p0cov, T: float = 1.0, step: float = 1e-3,
                             tol: float = 1e-9, direction: float = 1.0, order: int = 1,
                             u0=None, degenerate_tol: float = 1e-10,
                             _frame_cache: _Rank2Frame | None = None) -> BiExtremalArc:
    """Abnormal bi-extremal of a rank-2 frame from (x0, p0cov).

    order=1 uses u = direction * (h2, -h1)/|(h1, h2)| with
    h_i = <p, [X_i, [X1, X2]]>.  order=2 is for covectors annihilating
    those brackets too: u spans the kernel of M_ij = <p, [X_j, [X_i, [X1, X2]]]>,
    continued from ``u0`` (required) where M vanishes.
    """
    F = _frame_cache or _Rank2Frame(frame, second_order=(order == 2))
    if order == 2 and F.second is None:
        F = _Rank2Frame(frame, second_order=True)
    n = F.n
    x0 = np.asarray(x0, dtype=float)
    p0 = np.asarray(p0cov, dtype=float)
    if x0.shape != (n,) or p0.shape != (n,):
        raise DimensionError(f"x0 and p0cov must have dimension {n}")
    pn = float(np.linalg.norm(p0))
    if pn == 0:
        raise AbnormalPreconditionError("|p|", 0.0)
    c = F.constraints(x0, p0)
    for name, val in zip(("<p,X1>", "<p,X2>", "<p,[X1,X2]>"), c):
        if abs(val) > tol * pn:
            raise AbnormalPreconditionError(name, float(val))

    state = {"u": None if u0 is None else np.asarray(u0, dtype=float) / np.linalg.norm(u0)}

    def control(x, p, t):
        pn = np.linalg.norm(p)
        if order == 1:
            h = F.h(x, p)
            hn = np.linalg.norm(h)
            if hn <= degenerate_tol * pn:
                raise CharacteristicDegenerate(t)
            return direction * np.array([h[1], -h[0]]) / hn
        M = F.M(x, p)
        prev = state["u"]
        if np.linalg.norm(M) <= degenerate_tol * pn:
            if prev is None:
                raise CharacteristicDegenerate(t)
            return prev
        _, s, vt = np.linalg.svd(M)
        u = vt[-1]
        if prev is not None and u @ prev < 0:
            u = -u
        elif prev is None:
            u = direction * u
        return u

    def rhs(y, t):
        x, p = y[:n], y[n:]
        u = control(x, p, t)
        v = u[0] * F.X[0][0](x) + u[1] * F.X[1][0](x)
        J = u[0] * F.X[0][1](x)[:, :n] + u[1] * F.X[1][1](x)[:, :n]
        return np.concatenate([v, -J.T @ p])

    steps = max(1, int(np.ceil(T / step - 1e-9)))
    h = T / steps
    Y = np.empty((steps + 1, 2 * n))
    U = np.empty((steps + 1, 2))
    Y[0] = np.concatenate([x0, p0])
    U[0] = control(x0, p0, 0.0)
    state["u"] = U[0]
    y = Y[0]
    for k in range(steps):
        t = k * h
        k1 = rhs(y, t)
        k2 = rhs(y + 0.5 * h * k1, t + h / 2)
        k3 = rhs(y + 0.5 * h * k2, t + h / 2)
        k4 = rhs(y + h * k3, t + h)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        Y[k + 1] = y
        U[k + 1] = control(y[:n], y[n:], t + h)
        state["u"] = U[k + 1]
    cons = np.array([F.constraints(Y[k, :n], Y[k, n:]) for k in range(steps + 1)])
    residuals = {"constraints": cons, "max_constraint": float(np.max(np.abs(cons)))}
    return BiExtremalArc(np.linspace(0.0, T, steps + 1), Y[:, :n], Y[:, n:], U, 0.0,
                         residuals, kind="abnormal")


def classify_abnormal(frame: Sequence, arc: BiExtremalArc, tol: float = 1e-8,
                      rank_tol: float = 1e-8) -> dict:
    """Regular / totally irregular verdict from annihilator membership of p(t).

    Membership residual of p in E(k)-perp is |Q_k p| / |p| with Q_k an
    orthonormal basis of E(k) at the sample point.
    """
    if len(frame) != 2:
        raise ValueError("classification is defined for rank-2 frames")
    X1, X2 = frame
    X3 = X1.bracket(X2)
    E2 = [X1, X2, X3]
    E3 = E2 + [X1.bracket(X3), X2.bracket(X3)]
    f2 = [_numeric(f)[0] for f in E2]
    f3 = f2 + [_numeric(f)[0] for f in E3[3:]]
    n = arc.states.shape[1]
    probe = f2[0](arc.states[0])
    if probe.shape != (n,):
        raise DimensionError("arc does not live on the frame's chart")

    def resid(fs, x, p):
        V = np.array([f(x) for f in fs])
        _, s, vt = np.linalg.svd(V, full_matrices=False)
        r = int(np.sum(s > rank_tol * s[0]))
        Q = vt[:r]
        return float(np.linalg.norm(Q @ p) / np.linalg.norm(p))

    r2 = np.array([resid(f2, x, p) for x, p in zip(arc.states, arc.costates)])
    r3 = np.array([resid(f3, x, p) for x, p in zip(arc.states, arc.costates)])
    if np.all(r2 <= tol) and np.all(r3 > tol):
        verdict = "regular"
    elif np.all(r3 <= tol):
        verdict = "totally_irregular"
    else:
        verdict = "other"
    return {"verdict": verdict, "e2_residual": r2, "e3_residual": r3}


# ---------------------------------------------------------------------------
# residuals


def _fd_derivative(Y: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central differences at interior samples (first/last two dropped)."""
    return (-Y[4:] + 8 * Y[3:-1] - 8 * Y[1:-3] + Y[:-4]) / (12 * h)


def pmp_residual(prob: OptimalControlProblem, arc: BiExtremalArc) -> dict:
    """Max residuals of the constrained Hamiltonian system along ``arc``.

    state: |x' - F(x, u)|; costate: |p' + dH/dx|; stationarity: |dH/du|;
    nontriviality: min |(p, p0)|.  Derivatives use fourth-order central
    differences, so the first and last two samples are skipped.
    """
    sys = prob.system
    X, P, U = arc.states, arc.costates, arc.controls
    if U.shape[1] != sys.control_dim:
        raise DimensionError(f"arc controls of dimension {U.shape[1]}, system needs {sys.control_dim}")
    p0 = arc.p0
    S = list(prob.S)
    h = float(arc.times[1] - arc.times[0])
    state_res = costate_res = 0.0
    if len(arc.times) >= 5:
        dX = _fd_derivative(X, h)
        dP = _fd_derivative(P, h)
        for k in range(2, len(arc.times) - 2):
            x, p, u = X[k], P[k], U[k]
            A, _ = sys.velocity_derivatives(x, u)
            state_res = max(state_res, float(np.max(np.abs(dX[k - 2] - sys.velocity(x, u)))))
            costate_res = max(costate_res, float(np.max(np.abs(dP[k - 2] + A.T @ p))))
    stat = 0.0
    for x, p, u in zip(X, P, U):
        _, B = sys.velocity_derivatives(x, u)
        g = B.T @ p
        g[S] += p0 * u[S]
        stat = max(stat, float(np.max(np.abs(g))))
    nontriv = float(np.min(np.sqrt(np.sum(P**2, axis=1) + p0**2)))
    return {"state": state_res, "costate": costate_res, "stationarity": stat,
            "nontriviality": nontriv}


def arc_signal(arc: BiExtremalArc, intervals: int) -> ControlSignal:
    """Piecewise-constant re-encoding of the arc's controls (midpoint samples)."""
    t = arc.times
    edges = np.linspace(t[0], t[-1], intervals + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    vals = np.column_stack([np.interp(mids, t, arc.controls[:, i]) for i in range(arc.controls.shape[1])])
    return ControlSignal(float(t[0]), float(t[-1]), vals)
