"""Sub-Riemannian metrics on pseudo-product structures E = L + K.

Metrics are presented by orthonormal frames.  For a Cartan prolongation the
frame of L is xi = d/dv (v is arclength on the projective fibres) and the
frame of K is eta, whose image under pi_Y is a unit vector of (D, g_D).

Optimal control problems are described by a control system whose frame
columns are the controls, an optional block of parameter controls (a fibre
coordinate that the quotient system does not see as a state) and the index
set of controls charged by the energy.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .cartan import (
    LocalLeafSpace,
    ProlongedChart,
    _arclength_window,
    curve_distance,
    k_leaf,
    leaf_space,
    prolong,
    symbolic_system,
)
from .control import ControlSystem, IntegrationDiverged, _rk4
from .extremals import BiExtremalArc
from .flags import float_nullspace, float_rank
from .vecfield import DimensionError

__all__ = [
    "EnergySelector",
    "FrameMismatchError",
    "NotLipschitzError",
    "PMPSystem",
    "PROBLEMS",
    "ProductMetricStructure",
    "SubRiemannianMetric",
    "UnsupportedProblemError",
    "build_srcartan",
    "extend_biextremal",
    "lift_abnormal",
    "pmp_system",
    "product_metric",
    "projective_fiber_distance",
    "reduce_biextremal",
    "to_prolonged_chart",
    "verify_cone_geodesics",
]

PROBLEMS = ("E_eE", "EmodN_eE", "EmodN_eL", "LmodN_eL", "EmodP_eE", "KmodP_eK")


class FrameMismatchError(ValueError):
    pass


class NotLipschitzError(ValueError):
    pass


class UnsupportedProblemError(ValueError):
    pass


# ---------------------------------------------------------------------------
# metrics


def _eval(f, x):
    return np.asarray(f(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class SubRiemannianMetric:
    """Metric on span(frame) declaring the frame orthonormal."""

    frame: tuple

    def __post_init__(self):
        object.__setattr__(self, "frame", tuple(self.frame))
        if not self.frame:
            raise ValueError("empty frame")

    def vectors(self, x) -> np.ndarray:
        """Frame values as columns, shape (n, r)."""
        return np.column_stack([_eval(f, x) for f in self.frame])

    def coefficients(self, x, v, tol: float = 1e-9) -> np.ndarray:
        G = self.vectors(x)
        v = np.asarray(v, dtype=float)
        c, *_ = np.linalg.lstsq(G, v, rcond=None)
        if np.linalg.norm(G @ c - v) > tol * max(1.0, np.linalg.norm(v)):
            raise ValueError("vector is not in the span of the frame")
        return c

    def norm2(self, x, v) -> float:
        c = self.coefficients(x, v)
        return float(c @ c)

    def inner(self, x, v, w) -> float:
        return float(self.coefficients(x, v) @ self.coefficients(x, w))

    def check_independent(self, points, tol: float = 1e-8) -> bool:
        return all(float_rank(self.vectors(x).T, tol) == len(self.frame) for x in points)


@dataclass(frozen=True)
class ProductMetricStructure:
    """g_E(v + w, v + w) = g_L(v, v) + g_K(w, w) with the concatenated frame."""

    gL: SubRiemannianMetric
    gK: SubRiemannianMetric
    gE: SubRiemannianMetric
    prolonged: ProlongedChart | None = None
    leafspace: LocalLeafSpace | None = None

    def split(self, x, v) -> tuple[np.ndarray, np.ndarray]:
        """Frame coefficients of the L and K components of v."""
        c = self.gE.coefficients(x, v)
        k = len(self.gL.frame)
        return c[:k], c[k:]

    def norm2(self, x, v) -> float:
        a, b = self.split(x, v)
        return float(a @ a + b @ b)

    def inner(self, x, v, w) -> float:
        return float(self.gE.coefficients(x, v) @ self.gE.coefficients(x, w))


def product_metric(gL: SubRiemannianMetric, gK: SubRiemannianMetric, samples: Sequence = (),
                   tol: float = 1e-8) -> ProductMetricStructure:
    """Product structure; frames must span complementary subspaces at every sample."""
    gE = SubRiemannianMetric(gL.frame + gK.frame)
    for x in samples:
        if float_rank(gE.vectors(x).T, tol) != len(gE.frame):
            raise FrameMismatchError(f"L and K frames are not complementary at {np.asarray(x).tolist()}")
    return ProductMetricStructure(gL, gK, gE)


@dataclass(frozen=True)
class EnergySelector:
    """Which energy is charged: e_L, e_K or e_E = e_L + e_K."""

    which: str
    S_L: tuple
    S_K: tuple

    def __post_init__(self):
        if self.which not in ("e_L", "e_K", "e_E"):
            raise ValueError(f"unknown energy {self.which!r}")
        object.__setattr__(self, "S_L", tuple(self.S_L))
        object.__setattr__(self, "S_K", tuple(self.S_K))
        if set(self.S_L) & set(self.S_K):
            raise ValueError("L and K index sets overlap")

    @property
    def indices(self) -> tuple:
        if self.which == "e_L":
            return self.S_L
        if self.which == "e_K":
            return self.S_K
        return tuple(sorted(self.S_L + self.S_K))

    def energy(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return 0.5 * float(np.sum(u[list(self.indices)] ** 2))


def projective_fiber_distance(angle1: float, angle2: float) -> float:
    """Distance between two lines of R^2 given by angles: min_k |a1 - a2 + k pi|."""
    d = np.mod(angle1 - angle2, np.pi)
    return float(min(d, np.pi - d))


def build_srcartan(model, gD: SubRiemannianMetric, z0=None) -> ProductMetricStructure:
    """g_L makes xi = d/dv unit (v is arclength on P(D_y)); g_K makes eta unit.

    ``model`` is a CartanModel or its ProlongedChart.  With ``z0`` a local
    leaf space through z0 is attached for the pi_X problems.
    """
    pc = model if isinstance(model, ProlongedChart) else prolong(model)
    base = pc.base
    if len(gD.frame) != 2 or any(not (a == b) for a, b in zip(gD.frame, base.frame)):
        raise FrameMismatchError("the metric frame on D must be the model frame")
    structure = ProductMetricStructure(SubRiemannianMetric((pc.xi,)), SubRiemannianMetric((pc.eta,)),
                                       SubRiemannianMetric(pc.frame), prolonged=pc)
    if z0 is not None:
        structure = replace(structure, leafspace=leaf_space(pc, z0))
    return structure


# ---------------------------------------------------------------------------
# (x, w)-chart systems from a leaf space


def _xw_points(X, W, h):
    """Base points and central-difference neighbours in all (x, w) directions."""
    B = len(X)
    Z = np.column_stack([X, W])
    E = h * np.eye(6)
    P = np.concatenate([Z[:, None, :], Z[:, None, :] + E, Z[:, None, :] - E], axis=1)
    return P.reshape(B * 13, 6)


def _xi_xw(ls: LocalLeafSpace, Z, fd_step=1e-6, jac=False):
    """xi in the (x, w) chart at rows of Z (x in the slice chart, w the fibre time)."""
    Z = np.atleast_2d(Z)
    if not jac:
        return ls.generator(Z[:, :5], Z[:, 5], full=True)[:, 0]
    P = _xw_points(Z[:, :5], Z[:, 5], fd_step)
    F = ls.generator(P[:, :5], P[:, 5], full=True)[:, 0].reshape(len(Z), 13, 6)
    D = (F[:, 1:7] - F[:, 7:]) / (2 * fd_step)  # (B, direction, component)
    return F[:, 0], np.swapaxes(D, 1, 2)


def _system_E_xw(ls: LocalLeafSpace) -> ControlSystem:
    e6 = np.eye(6)[5]

    def frame_fn(z, w):
        return np.column_stack([_xi_xw(ls, z)[0], e6])

    def frame_jac(z, w):
        _, J = _xi_xw(ls, z, jac=True)
        return np.stack([J[0], np.zeros((6, 6))], axis=-1)

    return ControlSystem(6, 2, 0, frame_fn, frame_jac, label="E",
                         names=tuple(f"x{i + 1}" for i in range(5)) + ("w",))


def _system_modN(ls: LocalLeafSpace, with_b: bool) -> ControlSystem:
    r = 2 if with_b else 1

    def frame_fn(x, w):
        V = _xi_xw(ls, np.concatenate([x, w]))[0, :5]
        G = np.zeros((5, r))
        G[:, 0] = V
        return G

    def frame_jac(x, w):
        _, J = _xi_xw(ls, np.concatenate([x, w]), jac=True)
        out = np.zeros((5, 6, r))
        out[:, :, 0] = J[0, :5]
        return out

    return ControlSystem(5, r, 1, frame_fn, frame_jac, label="E/piX" if with_b else "L/piX",
                         names=tuple(f"x{i + 1}" for i in range(5)))


def _system_modP(pc: ProlongedChart, with_lambda: bool) -> ControlSystem:
    eta, deta = pc.eta.numeric()
    r = 2 if with_lambda else 1

    def frame_fn(y, v):
        e = eta(np.concatenate([y, v]))[:5]
        G = np.zeros((5, r))
        G[:, -1] = e
        return G

    def frame_jac(y, v):
        J = deta(np.concatenate([y, v]))[:5]
        out = np.zeros((5, 6, r))
        out[:, :, -1] = J
        return out

    return ControlSystem(5, r, 1, frame_fn, frame_jac, label="E/piY" if with_lambda else "K/piY",
                         names=tuple(f"y{i + 1}" for i in range(5)))


# ---------------------------------------------------------------------------
# constrained Hamiltonian systems


@dataclass
class PMPSystem:
    """Constrained Hamiltonian system of one optimal control problem.

    H = <p, G(x, w) u> + 1/2 p0 sum_{i in S} u_i^2 with frame controls u and
    parameter controls w.  The three groups of equations are the Hamiltonian
    equations for (x, p), stationarity in the parameters and stationarity in
    the frame controls.
    """

    problem_id: str
    chart: str
    system: ControlSystem
    cost: tuple
    state_names: tuple
    control_names: tuple
    param_names: tuple
    param_solver: object = None

    @property
    def nstate(self) -> int:
        return self.system.nstate

    def _split(self, u):
        u = np.asarray(u, dtype=float)
        r = self.system.nframe
        return u[:r], u[r:]

    def hamiltonian(self, x, p, u, p0: float) -> float:
        if p0 > 0:
            raise ValueError("p0 must be nonpositive")
        a, w = self._split(u)
        G = self.system.frame_fn(np.asarray(x, dtype=float), w)
        return float(np.asarray(p) @ G @ a) + 0.5 * p0 * float(np.sum(a[list(self.cost)] ** 2))

    def eliminate(self, x, p, w=()) -> np.ndarray:
        """Normal controls (p0 = -1): u_i = <p, G_i> on the cost set, 0 elsewhere."""
        G = self.system.frame_fn(np.asarray(x, dtype=float), np.asarray(w, dtype=float))
        g = np.asarray(p) @ G
        u = np.zeros(self.system.nframe)
        u[list(self.cost)] = g[list(self.cost)]
        return u

    def normal_hamiltonian(self, x, p, w=()) -> float:
        G = self.system.frame_fn(np.asarray(x, dtype=float), np.asarray(w, dtype=float))
        g = (np.asarray(p) @ G)[list(self.cost)]
        return 0.5 * float(g @ g)

    def solve_parameters(self, x, p, w, h: float = 1e-5, tol: float = 1e-12, max_iter: int = 30) -> np.ndarray:
        """Stationary point of the normal Hamiltonian in the parameters, by
        Newton with central differences, continued from ``w``."""
        w = np.array(w, dtype=float)
        k = w.size
        if k == 0:
            return w
        if self.param_solver is not None:
            return np.asarray(self.param_solver(x, p, w, tol, max_iter), dtype=float)
        N = lambda ww: self.normal_hamiltonian(x, p, ww)
        E = h * np.eye(k)
        for _ in range(max_iter):
            f0 = N(w)
            g = np.array([(N(w + e) - N(w - e)) / (2 * h) for e in E])
            Hm = np.empty((k, k))
            for i in range(k):
                for j in range(k):
                    if i == j:
                        Hm[i, i] = (N(w + E[i]) - 2 * f0 + N(w - E[i])) / h**2
                    else:
                        Hm[i, j] = (N(w + E[i] + E[j]) - N(w + E[i] - E[j]) - N(w - E[i] + E[j])
                                    + N(w - E[i] - E[j])) / (4 * h * h)
            dw = np.linalg.lstsq(Hm, -g, rcond=None)[0]
            w = w + dw
            if np.max(np.abs(dw)) < tol:
                break
        return w

    def _rhs(self, y, w):
        n = self.nstate
        x, p = y[:n], y[n:]
        u = self.eliminate(x, p, w)
        G = self.system.frame_fn(x, w)
        J = np.einsum("ijr,r->ij", self.system.frame_jac(x, w)[:, :n, :], u)
        return np.concatenate([G @ u, -J.T @ p])

    def integrate_normal(self, x0, p0cov, T: float = 1.0, step: float = 1e-3, w0=()) -> BiExtremalArc:
        """RK4 normal extremal with p0 = -1; parameters re-solved at every stage."""
        n = self.nstate
        y = np.concatenate([np.asarray(x0, dtype=float), np.asarray(p0cov, dtype=float)])
        if y.shape != (2 * n,):
            raise DimensionError(f"x0 and p0cov must have dimension {n}")
        k = self.system.nparams
        w = np.asarray(w0, dtype=float).reshape(k)
        steps = max(1, int(np.ceil(T / step - 1e-9)))
        h = T / steps
        Y = np.empty((steps + 1, 2 * n))
        Wp = np.empty((steps + 1, k))
        Y[0] = y
        w = self.solve_parameters(y[:n], y[n:], w)
        Wp[0] = w

        def f(yy):
            nonlocal w
            w = self.solve_parameters(yy[:n], yy[n:], w)
            return self._rhs(yy, w)

        for i in range(steps):
            y = _rk4(f, y, h)
            if not np.all(np.isfinite(y)):
                raise IntegrationDiverged(i * h)
            w = self.solve_parameters(y[:n], y[n:], w)
            Y[i + 1], Wp[i + 1] = y, w
        U = np.array([self.eliminate(Y[i, :n], Y[i, n:], Wp[i]) for i in range(steps + 1)])
        ham = np.array([self.normal_hamiltonian(Y[i, :n], Y[i, n:], Wp[i]) for i in range(steps + 1)])
        res = {"hamiltonian": ham, "hamiltonian_drift": float(np.max(np.abs(ham - ham[0])))}
        return BiExtremalArc(np.linspace(0.0, T, steps + 1), Y[:, :n], Y[:, n:],
                             np.hstack([U, Wp]), -1.0, res, kind="normal")

    def residuals(self, arc: BiExtremalArc) -> dict:
        """Max residual of each equation group along a sampled arc.

        Derivatives use fourth-order differences, so the Hamiltonian-equation
        group skips the two samples at each end.
        """
        n = self.nstate
        r = self.system.nframe
        X, P, U = arc.states, arc.costates, arc.controls
        if X.shape[1] != n or U.shape[1] != self.system.control_dim:
            raise DimensionError("arc does not match the problem dimensions")
        p0 = arc.p0
        S = list(self.cost)
        dyn = 0.0
        if len(arc.times) >= 5:
            hstep = float(arc.times[1] - arc.times[0])
            dX = _derivative(X, hstep)
            dP = _derivative(P, hstep)
            for k in range(2, len(arc.times) - 2):
                A, _ = self.system.velocity_derivatives(X[k], U[k])
                dyn = max(dyn, float(np.max(np.abs(dX[k] - self.system.velocity(X[k], U[k])))),
                          float(np.max(np.abs(dP[k] + A.T @ P[k]))))
        par = ctl = 0.0
        for x, p, u in zip(X, P, U):
            _, B = self.system.velocity_derivatives(x, u)
            g = B.T @ p
            g[S] += p0 * u[S]
            ctl = max(ctl, float(np.max(np.abs(g[:r]))))
            if g.size > r:
                par = max(par, float(np.max(np.abs(g[r:]))))
        return {"hamiltonian_equations": dyn, "parameter_stationarity": par, "control_stationarity": ctl}


def _derivative(Y: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite differences; one-sided stencils at the two ends."""
    Y = np.asarray(Y, dtype=float)
    D = np.empty_like(Y)
    if len(Y) < 5:
        return np.gradient(Y, h, axis=0)
    D[2:-2] = (-Y[4:] + 8 * Y[3:-1] - 8 * Y[1:-3] + Y[:-4]) / (12 * h)
    f = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    D[0] = f @ Y[:5]
    D[1] = np.array([-3, -10, 18, -6, 1]) / (12 * h) @ Y[:5]
    D[-1] = -(f @ Y[::-1][:5])
    D[-2] = -(np.array([-3, -10, 18, -6, 1]) / (12 * h) @ Y[::-1][:5])
    return D


def _cone_param_solver(ls: LocalLeafSpace):
    """Newton on <p, dV/dw> = 0 with the exact w-derivatives of the generator."""

    def solve(x, p, w, tol, max_iter):
        w = float(np.asarray(w).reshape(-1)[0])
        for _ in range(max_iter):
            G = ls.generator(np.asarray(x, dtype=float), w, order=2)
            g1, g2 = p @ G[1], p @ G[2]
            if g2 == 0:
                break
            dw = -g1 / g2
            w += dw
            if abs(dw) < tol:
                break
        return np.array([w])

    return solve


def pmp_system(structure: ProductMetricStructure, problem_id: str, chart: str = "yv") -> PMPSystem:
    """Constrained Hamiltonian system of a problem on a Cartan instance.

    E_eE lives on Z and is available in both the (y, v) and the (x, w) chart.
    The pi_X problems (EmodN_*, LmodN_eL) use the (x, w) chart of the leaf
    space, the pi_Y problems (EmodP_eE, KmodP_eK) the (y, v) chart, with the
    fibre coordinate as parameter control.
    """
    if problem_id not in PROBLEMS:
        raise UnsupportedProblemError(f"unknown problem {problem_id!r}; expected one of {PROBLEMS}")
    if chart not in ("yv", "xw"):
        raise UnsupportedProblemError(f"unknown chart {chart!r}")
    pc = structure.prolonged
    if pc is None:
        raise UnsupportedProblemError("the structure is not a Cartan prolongation")
    ls = structure.leafspace
    needs_xw = problem_id.startswith(("EmodN", "LmodN"))
    if needs_xw and chart != "xw":
        raise UnsupportedProblemError(f"{problem_id} is posed on the leaf space; use chart='xw'")
    if problem_id.startswith(("EmodP", "KmodP")) and chart != "yv":
        raise UnsupportedProblemError(f"{problem_id} is posed on Y; use chart='yv'")
    if chart == "xw" and ls is None:
        raise UnsupportedProblemError("the (x, w) chart needs a leaf space (build_srcartan(..., z0=...))")
    ynames = tuple(f"y{i + 1}" for i in range(5))
    xnames = tuple(f"x{i + 1}" for i in range(5))
    if problem_id == "E_eE":
        if chart == "yv":
            sys = symbolic_system(pc.frame, label="E")
            return PMPSystem(problem_id, chart, sys, (0, 1), ynames + ("v",), ("lambda", "mu"), ())
        return PMPSystem(problem_id, chart, _system_E_xw(ls), (0, 1), xnames + ("w",), ("a", "b"), ())
    if problem_id in ("EmodN_eE", "EmodN_eL"):
        cost = (0, 1) if problem_id == "EmodN_eE" else (0,)
        return PMPSystem(problem_id, chart, _system_modN(ls, True), cost, xnames, ("a", "b"), ("w",),
                         _cone_param_solver(ls))
    if problem_id == "LmodN_eL":
        return PMPSystem(problem_id, chart, _system_modN(ls, False), (0,), xnames, ("a",), ("w",),
                         _cone_param_solver(ls))
    if problem_id == "EmodP_eE":
        return PMPSystem(problem_id, chart, _system_modP(pc, True), (0, 1), ynames, ("lambda", "mu"), ("v",))
    return PMPSystem(problem_id, chart, _system_modP(pc, False), (0,), ynames, ("mu",), ("v",))


# ---------------------------------------------------------------------------
# cone geodesics


def _stationary_covector(G, rng, normalise_row: int = 0):
    """Random p with <p, G[1]> = 0 (rows of G), scaled so that <p, G[0]> = 1."""
    N = float_nullspace(G[1:2], G.shape[1])
    p = rng.standard_normal(len(N)) @ N
    val = p @ G[normalise_row]
    if abs(val) < 1e-8 * np.linalg.norm(p) * np.linalg.norm(G[normalise_row]):
        raise ValueError("covector annihilates the generator")
    return p / val


def verify_cone_geodesics(structure: ProductMetricStructure, npoints: int = 5, tol: float = 1e-4,
                          window: float = 0.5, radius: float = 0.02, seed: int = 0,
                          step: float = 1e-2, dual: bool = False) -> dict:
    """Normal extremals of (E/pi_X, e_E) against pi_X-images of unit-speed fibre curves.

    Each extremal starts at x0 = chartmap(y, v) with w0 its fibre coordinate
    and a random covector with <p, dV/dw> = 0 and <p, V> = 1.  The report
    records curve distances over an arclength window, the eliminated control
    b and an injectivity spot check of the generators.  With ``dual`` the
    pi_Y statement is run as well (see ``_dual_report``).
    """
    ls = structure.leafspace
    pc = structure.prolonged
    if ls is None or pc is None:
        raise UnsupportedProblemError("cone geodesics need a Cartan structure with a leaf space")
    prob = pmp_system(structure, "EmodN_eE", chart="xw")
    rng = np.random.default_rng(seed)
    z0 = ls.z0
    points = []
    for _ in range(npoints):
        y = z0[:5] + radius * rng.uniform(-1, 1, 5)
        v_start = z0[5] - window / 2
        vs = v_start + np.linspace(0.0, 2 * window, 801)
        Zf = np.column_stack([np.tile(y, (len(vs), 1)), vs])
        cand = _arclength_window(ls.chartmap(Zf), window)
        x0 = ls.chartmap(Zf[0])
        w0 = float(ls.fibercoord(Zf[0]))
        G = ls.generator(x0, w0, order=1)
        p0 = _stationary_covector(G, rng)
        speed = np.linalg.norm(G[0])
        arc = prob.integrate_normal(x0, p0, T=1.6 * window / speed, step=step / speed, w0=[w0])
        curve = _arclength_window(arc.states, window)
        ws = w0 + np.linspace(-0.05, 0.05, 8)
        gens = ls.generator(np.tile(x0, (8, 1)), ws)[:, 0]
        injective = all(float_rank(np.vstack([gens[i], gens[j]]), 1e-6) == 2
                        for i in range(8) for j in range(i + 1, 8))
        points.append({"y": y.tolist(), "x0": x0.tolist(), "w0": w0,
                       "distance": curve_distance(cand, curve),
                       "b_max": float(np.max(np.abs(arc.controls[:, 1]))),
                       "hamiltonian_drift": arc.residuals["hamiltonian_drift"],
                       "generators_injective": bool(injective)})
    report = {"npoints": npoints, "window": window, "tol": tol, "points": points,
              "passed": all(p["distance"] <= tol and p["b_max"] <= 1e-10 for p in points)}
    if dual:
        report["dual"] = _dual_report(structure, npoints, tol, window, radius, seed, step)
    return report


def _dual_report(structure, npoints, tol, window, radius, seed, step) -> dict:
    """Normal extremals of (E/pi_Y, e_E) against pi_Y-images of K-leaves.

    Two covector families are compared.  'generic' covectors only satisfy
    the parameter stationarity; 'abnormal' ones in addition annihilate
    [X1, X2] and c Y1 + s Y2, which is what the lift with vanishing fibre
    covector needs to stay an extremal of E.
    """
    pc = structure.prolonged
    prob = pmp_system(structure, "EmodP_eE", chart="yv")
    X1, X2 = pc.base.frame
    X3 = X1.bracket(X2)
    Y1, Y2 = X1.bracket(X3), X2.bracket(X3)
    rng = np.random.default_rng(seed + 1)
    z0 = structure.leafspace.z0 if structure.leafspace is not None else np.zeros(6)
    out = {"generic": [], "abnormal": []}
    for _ in range(npoints):
        z = z0 + radius * rng.uniform(-1, 1, 6)
        y, v = z[:5], z[5]
        c, s = np.cos(v), np.sin(v)
        e = pc.eta(z)[:5]
        eperp = -s * X1(y) + c * X2(y)
        leaf = k_leaf(pc, z, 1.6 * window / np.linalg.norm(e), step=step / 4)
        target = _arclength_window(leaf.points[:, :5], window)
        for family in ("generic", "abnormal"):
            rows = [eperp] if family == "generic" else [eperp, X3(y), c * Y1(y) + s * Y2(y)]
            N = float_nullspace(np.array(rows), 5)
            q = rng.standard_normal(len(N)) @ N
            q = q / (q @ e)
            arc = prob.integrate_normal(y, q, T=1.6 * window / np.linalg.norm(e), step=step / 4, w0=[v])
            curve = _arclength_window(arc.states, window)
            out[family].append(curve_distance(target, curve))
    out["generic_max"] = float(max(out["generic"]))
    out["abnormal_max"] = float(max(out["abnormal"]))
    out["abnormal_passed"] = out["abnormal_max"] <= tol
    return out


# ---------------------------------------------------------------------------
# lifting and reduction of abnormal bi-extremals


def reduce_biextremal(arc: BiExtremalArc) -> BiExtremalArc:
    """(x, w; p; a, b) of E/pi_X -> (x, w; p; a) of L/pi_X by forgetting b.

    Controls are laid out as (a, b, w) and (a, w) respectively.
    """
    U = arc.controls
    if U.shape[1] != 3:
        raise DimensionError("expected controls (a, b, w)")
    return BiExtremalArc(arc.times, arc.states, arc.costates, U[:, [0, 2]], arc.p0,
                         dict(arc.residuals), kind=arc.kind)


def extend_biextremal(arc: BiExtremalArc, b=None) -> BiExtremalArc:
    """(x, w; p; a) -> (x, w; p; a, b); b defaults to 0 and may be any sampled function."""
    U = arc.controls
    if U.shape[1] != 2:
        raise DimensionError("expected controls (a, w)")
    bb = np.zeros(len(U)) if b is None else np.broadcast_to(np.asarray(b, dtype=float), (len(U),))
    return BiExtremalArc(arc.times, arc.states, arc.costates, np.column_stack([U[:, 0], bb, U[:, 1]]),
                         arc.p0, dict(arc.residuals), kind=arc.kind)


def lift_abnormal(quotient_arc: BiExtremalArc, ls: LocalLeafSpace, lipschitz_bound: float = 1e3) -> BiExtremalArc:
    """Abnormal arc of E in the (x, w) chart over an abnormal arc of L/pi_X or E/pi_X.

    The fibre covector is psi = 0 and w becomes a state; the eta control is
    b = w' - a f with f the d/dw component of xi, so that w' = a f + b holds.
    """
    if quotient_arc.p0 != 0:
        raise ValueError("lifting applies to abnormal arcs (p0 = 0)")
    U = quotient_arc.controls
    a, w = U[:, 0], U[:, -1]
    t = quotient_arc.times
    h = float(t[1] - t[0])
    dq = np.abs(np.diff(w)) / np.diff(t)
    if not np.all(np.isfinite(dq)) or dq.max(initial=0.0) > lipschitz_bound:
        raise NotLipschitzError(f"w has difference quotients up to {dq.max(initial=np.inf):.3g}")
    dw = _derivative(w, h)
    f = _xi_xw(ls, np.column_stack([quotient_arc.states, w]))[:, 5]
    b = dw - a * f
    states = np.column_stack([quotient_arc.states, w])
    costates = np.column_stack([quotient_arc.costates, np.zeros(len(t))])
    return BiExtremalArc(t, states, costates, np.column_stack([a, b]), 0.0,
                         {"lipschitz": float(dq.max(initial=0.0))}, kind="abnormal")


def to_prolonged_chart(ls: LocalLeafSpace, arc: BiExtremalArc) -> BiExtremalArc:
    """Transport an E-arc from the (x, w) chart to the (y, v) chart of Z.

    States map by z = Phi_w(sigma(x)); covectors by the inverse transpose of
    W = d z / d(x, w) = [DPhi_w basis | eta(z)].  The frames correspond
    (xi to xi, d/dw to eta), so the controls are unchanged.
    """
    X, Wt = arc.states[:, :5], arc.states[:, 5]
    Z, M = ls.flow_variational(ls.sigma(X), Wt, ls.basis)
    Wm = np.concatenate([M, ls.prolonged.eta(Z)[:, :, None]], axis=2)
    P = np.linalg.solve(np.swapaxes(Wm, 1, 2), arc.costates[..., None])[..., 0]
    return BiExtremalArc(arc.times, Z, P, arc.controls.copy(), arc.p0, dict(arc.residuals), kind=arc.kind)
