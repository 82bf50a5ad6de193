"""Cartan prolongation Z = PD, its splitting E = L + K, local leaf spaces of
abnormal geodesics and the cone structure they carry.

The prolongation is built symbolically: the fibre coordinate v parametrises
the line spanned by cos v X1 + sin v X2 and the v-component rho of eta is the
rate at which that line turns along the abnormal extremal it is tangent to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import sympy as sp

from .control import ControlSystem, quotient
from .extremals import (
    AbnormalPreconditionError,
    BiExtremalArc,
    CharacteristicDegenerate,
    classify_abnormal,
    integrate_abnormal_rank2,
)
from .flags import DistributionFlag, derived_flag, float_nullspace
from .vecfield import Chart, DimensionError, PolyVectorField

__all__ = [
    "CartanModel",
    "ChartTooLargeError",
    "DegeneratePointError",
    "LeafCurve",
    "LocalLeafSpace",
    "NotCartanError",
    "ProlongedChart",
    "SymbolicVectorField",
    "cone_abnormal",
    "cone_system",
    "curve_distance",
    "five_systems",
    "is_trivial",
    "k_leaf",
    "leaf_space",
    "prolong",
    "symbolic_system",
    "verify_asymmetry",
    "verify_duality",
]


class NotCartanError(ValueError):
    pass


class DegeneratePointError(ValueError):
    pass


class ChartTooLargeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# symbolic fields


def _lambdify(exprs, symbols):
    """Vectorised evaluator: points (..., nvars) -> values (..., len(exprs))."""
    exprs = list(exprs)
    fn = sp.lambdify(symbols, exprs, modules="numpy", cse=True)

    m = len(exprs)

    def f(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return np.array(fn(*X), dtype=float)
        out = np.empty(X.shape[:-1] + (m,))
        for i, c in enumerate(fn(*np.moveaxis(X, -1, 0))):
            out[..., i] = c
        return out

    return f


class SymbolicVectorField:
    """Vector field with sympy components, for frames involving trigonometric
    or rational terms.  Offers the same interface as PolyVectorField for
    brackets and float evaluation."""

    nparams = 0

    def __init__(self, exprs: Sequence, symbols: Sequence[sp.Symbol]):
        self.exprs = tuple(sp.sympify(e) for e in exprs)
        self.symbols = tuple(symbols)
        if len(self.exprs) != len(self.symbols):
            raise DimensionError("a vector field needs one component per coordinate")
        self._f = None
        self._df = None

    @property
    def nstate(self) -> int:
        return len(self.exprs)

    nvars = nstate

    def bracket(self, other: "SymbolicVectorField") -> "SymbolicVectorField":
        if other.symbols != self.symbols:
            raise DimensionError("fields live on different charts")
        s = sp.Matrix(self.symbols)
        X, Y = sp.Matrix(self.exprs), sp.Matrix(other.exprs)
        B = Y.jacobian(s) * X - X.jacobian(s) * Y
        return SymbolicVectorField(list(B), self.symbols)

    def _build(self):
        if self._f is None:
            n = self.nstate
            self._f = _lambdify(self.exprs, self.symbols)
            J = sp.Matrix(self.exprs).jacobian(sp.Matrix(self.symbols))
            flat = _lambdify(list(J), self.symbols)
            self._df = lambda X: flat(X).reshape(np.shape(X)[:-1] + (n, n))

    def numeric(self):
        """Float evaluators ``(f, df)``, both batched over leading axes."""
        self._build()
        return self._f, self._df

    def __call__(self, x) -> np.ndarray:
        self._build()
        return self._f(x)

    def at(self, x):
        return list(self(x))

    def __repr__(self):
        return f"SymbolicVectorField({list(self.exprs)})"


def symbolic_system(fields: Sequence[SymbolicVectorField], label: str = "base",
                    names: Sequence[str] = ()) -> ControlSystem:
    """Control system whose frame columns are the given symbolic fields."""
    evals = [f.numeric() for f in fields]
    n = fields[0].nstate

    def frame_fn(x, w):
        return np.stack([f(x) for f, _ in evals], axis=-1)

    def frame_jac(x, w):
        return np.stack([df(x) for _, df in evals], axis=-1)

    return ControlSystem(n, len(fields), 0, frame_fn, frame_jac, label=label,
                         names=tuple(names) or tuple(str(s) for s in fields[0].symbols))


def _poly_to_sympy(poly, syms):
    return sp.Add(*[sp.Rational(c.numerator, c.denominator) * sp.Mul(*[s**e for s, e in zip(syms, ex)])
                    for ex, c in poly.terms.items()])


# ---------------------------------------------------------------------------
# models and prolongation


@dataclass(frozen=True)
class CartanModel:
    """A rank-2 polynomial frame certified to have growth (2, 3, 5) at ``base``."""

    chart: Chart
    frame: tuple
    certified: DistributionFlag
    base: tuple

    @classmethod
    def from_frame(cls, chart: Chart, frame: Sequence[PolyVectorField], base=None) -> "CartanModel":
        frame = tuple(frame)
        if len(frame) != 2:
            raise NotCartanError(f"a Cartan frame has two fields, got {len(frame)}")
        if chart.dim != 5 or any(f.nstate != 5 or f.nparams for f in frame):
            raise NotCartanError("a Cartan frame lives on a 5-dimensional chart")
        base = tuple(base) if base is not None else (0,) * 5
        flag = derived_flag(frame, base, maxdepth=3)
        if flag.growth != (2, 3, 5):
            raise NotCartanError(f"growth {flag.growth} at {base}, expected (2, 3, 5)")
        return cls(chart, frame, flag, base)


@dataclass
class ProlongedChart:
    """Chart (y1..y5, v) on Z with xi = d/dv and eta = cos v X1 + sin v X2 + rho d/dv.

    v is a line angle: (y, v) and (y, v + pi) are the same point of Z, where
    eta changes sign.
    """

    base: CartanModel
    ysyms: tuple
    vsym: sp.Symbol
    xi: SymbolicVectorField
    eta: SymbolicVectorField
    rho_expr: sp.Expr
    costate_exprs: tuple
    kappa_expr: sp.Expr
    _num: dict = field(default_factory=dict, repr=False)

    @property
    def symbols(self):
        return self.ysyms + (self.vsym,)

    @property
    def frame(self) -> tuple:
        return (self.xi, self.eta)

    def _fn(self, key, exprs):
        if key not in self._num:
            self._num[key] = _lambdify(exprs, self.symbols)
        return self._num[key]

    def rho(self, z) -> np.ndarray:
        return self._fn("rho", [self.rho_expr])(z)[..., 0]

    def costate(self, z) -> np.ndarray:
        """Covector on Y annihilating D(2) whose characteristic direction is the line v."""
        return self._fn("p", self.costate_exprs)(z)

    def kappa(self, z) -> np.ndarray:
        """Signed length of (h2, -h1) along (cos v, sin v); zero means degenerate."""
        return self._fn("kappa", [self.kappa_expr])(z)[..., 0]

    def check_point(self, z, tol: float = 1e-10):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        k = np.abs(self.kappa(z))
        p = np.linalg.norm(self.costate(z), axis=-1)
        if np.any(~np.isfinite(k)) or np.any(k <= tol * np.maximum(p, 1.0)):
            raise DegeneratePointError("characteristic control degenerates at a sampled point")

    def base_direction(self, z) -> np.ndarray:
        """pi_Y-image of eta at z."""
        return self.eta(z)[..., :5]


def prolong(model: CartanModel) -> ProlongedChart:
    """Cartan prolongation of a certified model.

    With c = cos v, s = sin v, Y_i = [X_i, [X1, X2]], the covector p(y, v) is
    the generalised cross product of X1, X2, X3 and c Y1 + s Y2, so it
    annihilates D(2) and satisfies c h1 + s h2 = 0 for h_i = <p, Y_i>.  Along
    the abnormal curve through (y, p) the control is (c, s) and
    h_i' = c <p, [X1, Y_i]> + s <p, [X2, Y_i]>; rho is the turning rate of
    the line spanned by (h2, -h1).
    """
    X1, X2 = model.frame
    X3 = X1.bracket(X2)
    Y = [X1.bracket(X3), X2.bracket(X3)]
    W = [[Xj.bracket(Yi) for Xj in (X1, X2)] for Yi in Y]
    ys = sp.symbols("y1:6", real=True)
    v = sp.Symbol("v", real=True)
    c, s = sp.cos(v), sp.sin(v)

    def vec(f):
        return sp.Matrix([_poly_to_sympy(comp, ys) for comp in f.components])

    X1s, X2s, X3s = vec(X1), vec(X2), vec(X3)
    Ys = [vec(f) for f in Y]
    Ws = [[vec(f) for f in row] for row in W]
    R = sp.Matrix.vstack(X1s.T, X2s.T, X3s.T, (c * Ys[0] + s * Ys[1]).T)
    p = sp.Matrix([(-1) ** k * R[:, [j for j in range(5) if j != k]].det() for k in range(5)])
    p = p.applyfunc(sp.expand)
    h = [sp.expand(p.dot(Yi)) for Yi in Ys]
    hd = [sp.expand(c * p.dot(Ws[i][0]) + s * p.dot(Ws[i][1])) for i in range(2)]
    kappa = sp.expand(c * h[1] - s * h[0])
    num = sp.expand(c * hd[0] + s * hd[1])
    rho = sp.Integer(0) if num == 0 else -num / kappa
    eta = SymbolicVectorField(list(c * X1s + s * X2s) + [rho], ys + (v,))
    xi = SymbolicVectorField([0] * 5 + [1], ys + (v,))
    pc = ProlongedChart(model, ys, v, xi, eta, rho, tuple(p), kappa)
    y0 = np.array([float(b) for b in model.base])
    grid = np.column_stack([np.tile(y0, (12, 1)), np.linspace(0, np.pi, 12, endpoint=False)])
    pc.check_point(grid)
    return pc


# ---------------------------------------------------------------------------
# K-leaves


@dataclass
class LeafCurve:
    times: np.ndarray
    points: np.ndarray


def _rk4_batch(f, Z, h):
    k1 = f(Z)
    k2 = f(Z + 0.5 * h * k1)
    k3 = f(Z + 0.5 * h * k2)
    k4 = f(Z + h * k3)
    return Z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def k_leaf(prolonged: ProlongedChart, z0, T: float, step: float = 1e-3,
           check_tol: float = 1e-10) -> LeafCurve:
    """Integral curve of eta from z0 over [0, T] (T may be negative)."""
    eta, _ = prolonged.eta.numeric()
    z = np.asarray(z0, dtype=float)
    if z.shape != (6,):
        raise DimensionError("points of Z have six coordinates")
    steps = max(1, int(np.ceil(abs(T) / step - 1e-9)))
    h = T / steps
    out = np.empty((steps + 1, 6))
    out[0] = z
    for k in range(steps):
        z = _rk4_batch(eta, z, h)
        out[k + 1] = z
    prolonged.check_point(out, check_tol)
    return LeafCurve(np.linspace(0.0, T, steps + 1), out)


# ---------------------------------------------------------------------------
# local leaf space


@dataclass(frozen=True)
class LocalLeafSpace:
    """Chart on the space X of K-leaves near z0.

    A leaf is represented by its intersection with the affine slice
    z0 + span(basis) orthogonal to eta(z0); chart coordinates are the
    coefficients in ``basis``.  The fibre coordinate of a point is the eta-flow
    time from the slice.
    """

    prolonged: ProlongedChart
    z0: np.ndarray
    normal: np.ndarray
    basis: np.ndarray
    step: float = 5e-3
    tau_max: float = 1.0

    def sigma(self, x) -> np.ndarray:
        return self.z0 + np.asarray(x, dtype=float) @ self.basis.T

    def flow(self, Z, t) -> np.ndarray:
        """eta-flow of the rows of Z for per-row times t."""
        eta, _ = self.prolonged.eta.numeric()
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), Z.shape[:1])
        n = max(1, int(np.ceil(np.max(np.abs(t)) / self.step - 1e-9))) if t.size else 1
        h = (t / n)[:, None]
        for _ in range(n):
            Z = _rk4_batch(eta, Z, h)
        return Z

    def flow_variational(self, Z, t, M):
        """Flow rows of Z with tangent frames M (B, 6, m) transported by the linearisation."""
        eta, deta = self.prolonged.eta.numeric()
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        B, m = Z.shape[0], M.shape[-1]
        t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
        n = max(1, int(np.ceil(np.max(np.abs(t)) / self.step - 1e-9)))
        h = (t / n)[:, None]

        def f(Y):
            z = Y[:, :6]
            Mz = Y[:, 6:].reshape(B, 6, m)
            return np.concatenate([eta(z), (deta(z) @ Mz).reshape(B, -1)], axis=1)

        Y = np.concatenate([Z, np.broadcast_to(M, (B, 6, m)).reshape(B, -1)], axis=1)
        for _ in range(n):
            Y = _rk4_batch(f, Y, h)
        return Y[:, :6], Y[:, 6:].reshape(B, 6, m)

    def hitting_time(self, Z, tol: float = 1e-14, max_iter: int = 60) -> np.ndarray:
        """Flow time taking each row of Z to the slice (Newton on the signed gap)."""
        eta, _ = self.prolonged.eta.numeric()
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        W = Z.copy()
        tau = np.zeros(len(Z))
        speed0 = float(np.linalg.norm(eta(self.z0)))
        for _ in range(max_iter):
            g = (W - self.z0) @ self.normal
            if np.all(np.abs(g) <= tol * (1.0 + np.abs(W).max(axis=1))):
                return tau
            d = eta(W) @ self.normal
            if np.any(np.abs(d) < 1e-3 * speed0):
                raise ChartTooLargeError("leaf runs parallel to the slice; shrink the neighbourhood")
            delta = -g / d
            W = self.flow(W, delta)
            tau = tau + delta
            if np.any(np.abs(tau) > self.tau_max):
                raise ChartTooLargeError(f"leaf does not reach the slice within flow time {self.tau_max}")
        raise ChartTooLargeError("hitting time did not converge")

    def chartmap(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Zb = np.atleast_2d(Z)
        tau = self.hitting_time(Zb)
        X = (self.flow(Zb, tau) - self.z0) @ self.basis
        return X[0] if single else X

    def fibercoord(self, Z) -> np.ndarray:
        """s with Z = Phi_s(sigma(chartmap(Z)))."""
        Z = np.asarray(Z, dtype=float)
        s = -self.hitting_time(np.atleast_2d(Z))
        return s[0] if Z.ndim == 1 else s

    def lift(self, x, s) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        Z = self.flow(self.sigma(np.atleast_2d(x)), np.atleast_1d(s))
        return Z[0] if single else Z

    def generator(self, x, s, order: int = 0, full: bool = False):
        """Cone generator V(x, s) = d chartmap (xi) at z = Phi_s(sigma(x)).

        With W = [DPhi_s basis | eta(z)] one has d chartmap(z) W = [I | 0],
        so V is the leading block of W^-1 xi.  The s-derivatives follow from
        (Phi_-s)_* and are W^-1 [eta, xi] and W^-1 [eta, [eta, xi]].
        Returns an array (B, order + 1, 5) (or (order + 1, 5) for one point).
        With ``full`` the sixth entry, the d/ds component of xi in the (x, s)
        chart, is kept as well.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        S = np.broadcast_to(np.asarray(s, dtype=float), X.shape[:1])
        Z, M = self.flow_variational(self.sigma(X), S, self.basis)
        eta = self.prolonged.eta(Z)
        Wm = np.concatenate([M, eta[:, :, None]], axis=2)
        rhs = [self.prolonged.xi(Z)]
        fields = self._s_fields()
        for k in range(order):
            rhs.append(fields[k](Z))
        sol = np.linalg.solve(Wm, np.stack(rhs, axis=2))
        out = np.moveaxis(sol[:, :6 if full else 5, :], 2, 1)
        return out[0] if single else out

    def _s_fields(self):
        cache = self.prolonged._num
        if "s_fields" not in cache:
            xi, eta = self.prolonged.xi, self.prolonged.eta
            e1 = eta.bracket(xi)
            cache["s_fields"] = (e1, eta.bracket(e1))
        return cache["s_fields"]

    def chart_differential(self, z, vec, h: float = 1e-5) -> np.ndarray:
        """d chartmap(z) vec by central differences with one Richardson step."""
        z, vec = np.asarray(z, dtype=float), np.asarray(vec, dtype=float)
        P = np.array([z + h * vec, z - h * vec, z + 2 * h * vec, z - 2 * h * vec])
        C = self.chartmap(P)
        d1 = (C[0] - C[1]) / (2 * h)
        d2 = (C[2] - C[3]) / (4 * h)
        return (4 * d1 - d2) / 3


def leaf_space(prolonged: ProlongedChart, z0, step: float = 5e-3, tau_max: float = 1.0) -> LocalLeafSpace:
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (6,):
        raise DimensionError("points of Z have six coordinates")
    prolonged.check_point(z0)
    e = prolonged.eta(z0)
    n = e / np.linalg.norm(e)
    basis = float_nullspace(n[None, :], 6).T  # (6, 5) orthonormal
    return LocalLeafSpace(prolonged, z0, n, basis, step, tau_max)


def cone_system(ls: LocalLeafSpace) -> ControlSystem:
    """The cone structure as a control system x' = a V(x, s) with parameter s."""

    def frame_fn(x, w):
        return ls.generator(np.asarray(x, dtype=float), w[0])[0][:, None]

    return ControlSystem.from_callable(5, 1, frame_fn, nparams=1, label="cone",
                                       names=tuple(f"x{i + 1}" for i in range(5)))


# ---------------------------------------------------------------------------
# abnormal extremals of the cone system


def cone_abnormal(ls: LocalLeafSpace, x0, s0: float, p0, T: float, step: float = 1e-2,
                  fd_step: float = 1e-6, tol: float = 1e-9) -> BiExtremalArc:
    """Abnormal extremal of x' = a V(x, s) with unit chart speed a = 1/|V|.

    The constrained system is <p, V> = 0, <p, dV/ds> = 0 and
    p' = -a d<p, V>/dx; s is recovered at every stage by Newton on the
    second constraint, starting from the previous value.
    """
    x0 = np.asarray(x0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    G0 = ls.generator(x0, s0, order=1)
    pn = np.linalg.norm(p0)
    for name, vec in (("<p,V>", G0[0]), ("<p,dV/ds>", G0[1])):
        val = float(p0 @ vec)
        if abs(val) > tol * pn * np.linalg.norm(vec):
            raise AbnormalPreconditionError(name, val)
    state = {"s": float(s0)}
    E = np.eye(5) * fd_step

    def solve_s(x, p):
        s = state["s"]
        for _ in range(30):
            G = ls.generator(x, s, order=2)
            f, fp = p @ G[1], p @ G[2]
            if fp == 0:
                raise CharacteristicDegenerate(0.0)
            ds = -f / fp
            s += ds
            if abs(ds) < 1e-14:
                break
        return s

    def rhs(y):
        x, p = y[:5], y[5:]
        s = solve_s(x, p)
        state["s"] = s
        pts = np.vstack([x, x + E, x - E])
        V = ls.generator(pts, np.full(len(pts), s))[:, 0]
        a = 1.0 / np.linalg.norm(V[0])
        grad = (V[1:6] @ p - V[6:] @ p) / (2 * fd_step)
        return np.concatenate([a * V[0], -a * grad]), s, a

    steps = max(1, int(np.ceil(T / step - 1e-9)))
    h = T / steps
    Y = np.empty((steps + 1, 10))
    U = np.empty((steps + 1, 2))
    Y[0] = np.concatenate([x0, p0])
    y = Y[0]
    for k in range(steps):
        k1, s, a = rhs(y)
        U[k] = (a, s)
        k2 = rhs(y + 0.5 * h * k1)[0]
        k3 = rhs(y + 0.5 * h * k2)[0]
        k4 = rhs(y + h * k3)[0]
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        Y[k + 1] = y
    _, s, a = rhs(y)
    U[-1] = (a, s)
    G = ls.generator(Y[:, :5], U[:, 1], order=1)
    cons = np.column_stack([np.einsum("ki,ki->k", Y[:, 5:], G[:, 0]),
                            np.einsum("ki,ki->k", Y[:, 5:], G[:, 1])])
    residuals = {"constraints": cons, "max_constraint": float(np.max(np.abs(cons)))}
    return BiExtremalArc(np.linspace(0.0, T, steps + 1), Y[:, :5], Y[:, 5:], U, 0.0,
                         residuals, kind="abnormal")


# ---------------------------------------------------------------------------
# curve comparison


def _point_polyline(P, Q):
    """Distance from each row of P to the polyline through the rows of Q."""
    A, B = Q[:-1], Q[1:]
    D = B - A
    L2 = np.einsum("ij,ij->i", D, D)
    L2[L2 == 0] = 1.0
    t = np.clip(np.einsum("kij,ij->ki", P[:, None, :] - A[None], D) / L2, 0.0, 1.0)
    proj = A[None] + t[..., None] * D[None]
    return np.sqrt(np.min(np.sum((P[:, None, :] - proj) ** 2, axis=-1), axis=1))


def curve_distance(P, Q) -> float:
    """Symmetric max of nearest-point distances between two sampled curves."""
    P, Q = np.asarray(P, dtype=float), np.asarray(Q, dtype=float)
    if len(Q) < 2 or len(P) < 2:
        raise ValueError("curves need at least two samples")
    return float(max(_point_polyline(P, Q).max(), _point_polyline(Q, P).max()))


def _arclength_window(points, length):
    """Prefix of a polyline with the given arclength (last point interpolated)."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] < length:
        raise ChartTooLargeError("sampled curve shorter than the comparison window")
    k = int(np.searchsorted(cum, length))
    t = (length - cum[k - 1]) / seg[k - 1]
    end = points[k - 1] + t * (points[k] - points[k - 1])
    return np.vstack([points[:k], end])


# ---------------------------------------------------------------------------
# five systems


def five_systems(prolonged: ProlongedChart, ls: LocalLeafSpace | None = None) -> dict:
    """Systems of the pseudo-product structure on Z.

    Keys: "E", "E/piY", "K/piY", "E/piX", "L/piX" for the five systems and
    "L/piY", "K/piX" for the two that reduce to the zero system.  The pi_X
    systems need a leaf-space chart and are omitted without one.
    """
    xi, eta = prolonged.frame
    E = symbolic_system([xi, eta], label="E")
    keep = list(range(5))
    out = {
        "E": E,
        "E/piY": _relabel(quotient(E, keep), "E/piY"),
        "K/piY": _relabel(quotient(symbolic_system([eta], label="K"), keep), "K/piY"),
        "L/piY": _zero_system(1, "L/piY"),
    }
    if ls is not None:
        def frame_E(x, w):
            V = ls.generator(np.asarray(x, dtype=float), w[0])[0]
            return np.column_stack([V, np.zeros(5)])

        out["E/piX"] = ControlSystem.from_callable(5, 2, frame_E, nparams=1, label="E/piX",
                                                   names=tuple(f"x{i + 1}" for i in range(5)))
        out["L/piX"] = _relabel(cone_system(ls), "L/piX")
        out["K/piX"] = _zero_system(1, "K/piX")
    return out


def _relabel(sys: ControlSystem, label: str) -> ControlSystem:
    from dataclasses import replace

    return replace(sys, label=label)


def _zero_system(nframe: int, label: str) -> ControlSystem:
    def frame_fn(x, w):
        return np.zeros((5, nframe))

    def frame_jac(x, w):
        return np.zeros((5, 6, nframe))

    return ControlSystem(5, nframe, 1, frame_fn, frame_jac, label=label,
                         names=tuple(f"x{i + 1}" for i in range(5)))


def is_trivial(sys: ControlSystem, samples) -> bool:
    """True if the frame vanishes at every sample (x, w)."""
    return all(np.all(sys.frame_fn(np.asarray(x, float), np.asarray(w, float)) == 0) for x, w in samples)


# ---------------------------------------------------------------------------
# verification harnesses


def _sin_angle(a, b):
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    cross = np.sqrt(np.maximum(na**2 * nb**2 - np.einsum("...i,...i->...", a, b) ** 2, 0.0))
    return cross / (na * nb)


def _as_prolonged(obj) -> ProlongedChart:
    return obj if isinstance(obj, ProlongedChart) else prolong(obj)


def _regular_costate(frame, z, rng, rank_tol=1e-8):
    """Random p annihilating E(2) = span{xi, eta, [xi, eta]} at z."""
    xi, eta = frame
    rows = [xi(z), eta(z), xi.bracket(eta)(z)]
    N = float_nullspace(np.array(rows), 6, rank_tol)
    return rng.standard_normal(len(N)) @ N


def _irregular_costate(frame, z, cache, rank_tol=1e-8):
    """p annihilating E(3) with <p, [eta, Y_i]> = 0, the K-direction kernel."""
    if "irr" not in cache:
        xi, eta = frame
        X3 = xi.bracket(eta)
        Y1, Y2 = xi.bracket(X3), eta.bracket(X3)
        cache["irr"] = [xi, eta, X3, Y1, Y2, eta.bracket(Y1), eta.bracket(Y2)]
    A = np.array([f(z) for f in cache["irr"]])
    _, s, vt = np.linalg.svd(A)
    if s[4] <= rank_tol * s[0] or s[-1] > rank_tol * s[0]:
        raise DegeneratePointError("K-direction covector is not unique at this point")
    return vt[-1]


def verify_asymmetry(model, z0, nsamples: int = 20, tol: float = 1e-6, T: float = 0.5,
                     step: float = 1e-3, radius: float = 0.05, seed: int = 0,
                     class_tol: float = 1e-8) -> dict:
    """Abnormal arcs of E on Z are L- or K-tangent; L-arcs regular, K-arcs totally irregular.

    Even samples start from p in E(2)-perp minus E(3)-perp (first-order
    characteristic); odd samples from the covector of E(3)-perp whose
    second-order characteristic is eta, continued from u0 = (0, 1).
    """
    pc = _as_prolonged(model)
    frame = pc.frame
    xi, eta = frame
    rng = np.random.default_rng(seed)
    z0 = np.asarray(z0, dtype=float)
    cache: dict = {}
    arcs = []
    for i in range(nsamples):
        z = z0 + radius * rng.uniform(-1, 1, 6)
        if i % 2 == 0:
            p = _regular_costate(frame, z, rng)
            arc = integrate_abnormal_rank2(frame, z, p, T=T, step=step, order=1)
            sample_type = "E2-perp"
        else:
            p = _irregular_costate(frame, z, cache)
            arc = integrate_abnormal_rank2(frame, z, p, T=T, step=step, order=2, u0=(0.0, 1.0))
            sample_type = "E3-perp"
        vel = arc.controls[:, :1] * xi(arc.states) + arc.controls[:, 1:] * eta(arc.states)
        rL = float(np.max(_sin_angle(vel, xi(arc.states))))
        rK = float(np.max(_sin_angle(vel, eta(arc.states))))
        cls = classify_abnormal(frame, arc, tol=class_tol)
        tangent = "L" if rL <= tol else ("K" if rK <= tol else None)
        expected = {"L": "regular", "K": "totally_irregular"}.get(tangent)
        arcs.append({
            "start": z.tolist(),
            "sample": sample_type,
            "residual_L": rL,
            "residual_K": rK,
            "tangent": tangent,
            "verdict": cls["verdict"],
            "e2_residual": float(np.max(cls["e2_residual"])),
            "e3_residual": float(np.max(cls["e3_residual"])),
            "constraint": arc.residuals["max_constraint"],
            "ok": tangent is not None and cls["verdict"] == expected,
        })
    return {"nsamples": nsamples, "tol": tol, "arcs": arcs,
            "passed": all(a["ok"] for a in arcs)}


def verify_duality(model, z0, nfibers: int = 5, tol: float = 1e-4, window: float = 0.5,
                   radius: float = 0.02, seed: int = 0, ncostates: int = 2,
                   step: float = 1e-2, ls: LocalLeafSpace | None = None) -> dict:
    """pi_X-images of pi_Y-fibres against abnormal extremals of the cone system.

    For fibres over points y near pi_Y(z0), the candidate is the chartmap
    image of v -> (y, v) starting half a window before v(z0).  Each cone
    abnormal starts at the same point and fibre coordinate from ``ncostates``
    admissible initial covectors, all of which should trace one curve.
    """
    pc = _as_prolonged(model)
    z0 = np.asarray(z0, dtype=float)
    ls = ls or leaf_space(pc, z0)
    rng = np.random.default_rng(seed)
    fibers = []
    candidates, computed = [], []
    for i in range(nfibers):
        y = z0[:5] + radius * rng.uniform(-1, 1, 5)
        v_start = z0[5] - window / 2
        vs = v_start + np.linspace(0.0, 2 * window, 801)
        Zf = np.column_stack([np.tile(y, (len(vs), 1)), vs])
        cand = _arclength_window(ls.chartmap(Zf), window)
        x0 = ls.chartmap(Zf[0])
        s0 = float(ls.fibercoord(Zf[0]))
        G = ls.generator(x0, s0, order=1)
        N = float_nullspace(G, 5)
        arcs = []
        for j in range(ncostates):
            p0 = rng.standard_normal(len(N)) @ N
            arc = cone_abnormal(ls, x0, s0, p0, T=window, step=step)
            arcs.append(arc)
        dists = [curve_distance(cand, a.states) for a in arcs]
        spread = max((curve_distance(arcs[0].states, a.states) for a in arcs[1:]), default=0.0)
        fibers.append({"y": y.tolist(), "x0": x0.tolist(), "s0": s0, "distance": max(dists),
                       "costate_spread": spread,
                       "constraint": max(a.residuals["max_constraint"] for a in arcs)})
        candidates.append(cand)
        computed.append(arcs[0].states)
    D = np.array([[curve_distance(c, a) for a in computed] for c in candidates])
    unique = all(int(np.argmin(D[i])) == i and np.sum(D[i] <= tol) == 1 for i in range(nfibers))
    return {"nfibers": nfibers, "window": window, "tol": tol, "fibers": fibers,
            "distance_matrix": D.tolist(), "unique_match": bool(unique),
            "passed": bool(unique and all(f["distance"] <= tol and f["costate_spread"] <= tol
                                          for f in fibers))}
