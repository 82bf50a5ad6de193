"""Frame-presented control systems, their trajectories and endpoint maps.

A system is ``x' = sum_i a_i X_i(x, w)`` where ``a`` are the frame
coefficients and ``w`` are extra control parameters (coordinates dropped by a
quotient).  The control vector is ``u = (a_1..a_r, w_1..w_k)``.

Controls are piecewise constant on a uniform grid; trajectories are integrated
with fixed-step classical RK4.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .vecfield import Chart, DimensionError, PolyVectorField, compile_polys, pushforward_projection

logger = logging.getLogger(__name__)

__all__ = [
    "ControlSignal",
    "ControlSystem",
    "DomainExitError",
    "EquivalenceError",
    "IntegrationDiverged",
    "Trajectory",
    "check_equivalence",
    "endpoint",
    "endpoint_jacobian",
    "integrate",
    "is_singular_control",
    "quotient",
    "restrict",
    "steer",
    "verify_quotient_controllability",
]

DEFAULT_STEP = 1e-3
RANK_TOL = 1e-8


class IntegrationDiverged(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"integration produced a non-finite state after t = {t:.6g}")
        self.t = t


class DomainExitError(RuntimeError):
    def __init__(self, t: float, x):
        super().__init__(f"trajectory left the restriction box at t = {t:.6g}")
        self.t = t
        self.x = np.asarray(x)


class EquivalenceError(ValueError):
    pass


FrameFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ControlSystem:
    """x' = G(x, w) a with G the (n, r) matrix of frame columns.

    ``frame_jac(x, w)`` returns the (n, n + k, r) array of partial derivatives
    of the frame columns with respect to the state and the parameters.
    """

    nstate: int
    nframe: int
    nparams: int
    frame_fn: FrameFn
    frame_jac: FrameFn
    label: str = "base"
    names: tuple[str, ...] = ()
    fields: tuple[PolyVectorField, ...] | None = None
    box: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.nframe + self.nparams < 1:
            raise ValueError("a control system needs at least one control")
        if not self.names:
            object.__setattr__(self, "names", Chart.standard(self.nstate).names)

    @property
    def control_dim(self) -> int:
        return self.nframe + self.nparams

    @classmethod
    def from_fields(cls, fields: Sequence[PolyVectorField], chart: Chart | None = None,
                    label: str = "base") -> "ControlSystem":
        fields = tuple(fields)
        if not fields:
            raise ValueError("empty frame")
        n, nv = fields[0].nstate, fields[0].nvars
        for f in fields:
            if f.nstate != n or f.nvars != nv:
                raise DimensionError("frame fields live on different charts")
        r, k = len(fields), nv - n
        if chart is not None and chart.dim != n:
            raise DimensionError(f"chart of dimension {chart.dim} for fields on {n} states")
        vals = compile_polys([c for f in fields for c in f.components])
        jac = compile_polys([c.diff(j) for f in fields for c in f.components for j in range(nv)])

        # both evaluators broadcast over leading batch axes of x (and w)
        def frame_fn(x, w):
            x = np.asarray(x, dtype=float)
            z = np.concatenate([x, np.broadcast_to(w, x.shape[:-1] + (k,))], axis=-1) if k else x
            return np.swapaxes(vals(z).reshape(z.shape[:-1] + (r, n)), -1, -2)

        def frame_jac(x, w):
            x = np.asarray(x, dtype=float)
            z = np.concatenate([x, np.broadcast_to(w, x.shape[:-1] + (k,))], axis=-1) if k else x
            return np.moveaxis(jac(z).reshape(z.shape[:-1] + (r, n, nv)), -3, -1)

        names = chart.names if chart is not None else ()
        return cls(n, r, k, frame_fn, frame_jac, label=label, names=tuple(names), fields=fields)

    @classmethod
    def from_callable(cls, nstate: int, nframe: int, frame_fn: FrameFn, nparams: int = 0,
                      frame_jac: FrameFn | None = None, label: str = "base",
                      names: Sequence[str] = (), fd_step: float = 1e-6) -> "ControlSystem":
        """System from a numeric frame; missing Jacobians use central differences."""
        if frame_jac is None:
            def frame_jac(x, w):
                z = np.concatenate([x, w])
                out = np.empty((nstate, nstate + nparams, nframe))
                for j in range(nstate + nparams):
                    dz = np.zeros_like(z)
                    dz[j] = fd_step
                    zp, zm = z + dz, z - dz
                    out[:, j, :] = (frame_fn(zp[:nstate], zp[nstate:]) -
                                    frame_fn(zm[:nstate], zm[nstate:])) / (2 * fd_step)
                return out
        return cls(nstate, nframe, nparams, frame_fn, frame_jac, label=label, names=tuple(names))

    def split(self, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.control_dim:
            raise DimensionError(f"control of dimension {u.shape[-1]}, expected {self.control_dim}")
        return u[: self.nframe], u[self.nframe:]

    def velocity(self, x, u) -> np.ndarray:
        a, w = self.split(u)
        return self.frame_fn(np.asarray(x, dtype=float), w) @ a

    def velocity_derivatives(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        """(dF/dx, dF/du) at (x, u)."""
        a, w = self.split(u)
        x = np.asarray(x, dtype=float)
        J = self.frame_jac(x, w) @ a  # (n, n + k)
        G = self.frame_fn(x, w)
        return J[:, : self.nstate], np.hstack([G, J[:, self.nstate:]])

    def inside(self, x) -> bool:
        if self.box is None:
            return True
        lo, hi = self.box
        return bool(np.all(x > lo) and np.all(x < hi))


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control on ``N`` equal intervals of [t0, t1]."""

    t0: float
    t1: float
    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)
        if not self.t0 < self.t1:
            raise ValueError("t0 must be smaller than t1")
        if v.shape[0] < 1:
            raise ValueError("need at least one control interval")

    @classmethod
    def constant(cls, u, t1: float = 1.0, t0: float = 0.0, n: int = 1) -> "ControlSignal":
        return cls(t0, t1, np.tile(np.asarray(u, dtype=float), (n, 1)))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> float:
        return (self.t1 - self.t0) / self.n

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def breakpoints(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n + 1)

    def __call__(self, t: float) -> np.ndarray:
        k = min(int((t - self.t0) / self.width), self.n - 1)
        return self.values[max(k, 0)]


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    signal: ControlSignal

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _substeps(sig: ControlSignal, step: float) -> int:
    if step <= 0:
        raise ValueError("step must be positive")
    return max(1, math.ceil(sig.width / step - 1e-9))


def integrate(sys: ControlSystem, sig: ControlSignal, x0, step: float = DEFAULT_STEP) -> Trajectory:
    """Fixed-step RK4 trajectory of x' = F(x, u(t)) starting at ``x0``."""
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (sys.nstate,):
        raise DimensionError(f"initial point of shape {x.shape}, expected ({sys.nstate},)")
    if sig.dim != sys.control_dim:
        raise DimensionError(f"signal of dimension {sig.dim}, system needs {sys.control_dim}")
    if not sys.inside(x):
        raise DomainExitError(sig.t0, x)
    m = _substeps(sig, step)
    h = sig.width / m
    times = [sig.t0]
    states = [x.copy()]
    for j, u in enumerate(sig.values):
        f = lambda y, u=u: sys.velocity(y, u)
        for i in range(m):
            xn = _rk4(f, x, h)
            t = sig.t0 + j * sig.width + (i + 1) * h
            if not np.all(np.isfinite(xn)):
                raise IntegrationDiverged(times[-1])
            if not sys.inside(xn):
                raise DomainExitError(t, xn)
            x = xn
            times.append(t)
            states.append(x.copy())
    return Trajectory(np.array(times), np.array(states), sig)


def endpoint(sys: ControlSystem, sig: ControlSignal, x0, step: float = DEFAULT_STEP) -> np.ndarray:
    return integrate(sys, sig, x0, step).end


def endpoint_jacobian(sys: ControlSystem, sig: ControlSignal, x0, step: float = DEFAULT_STEP,
                      return_endpoint: bool = False):
    """Derivative of the endpoint with respect to every piecewise-constant value.

    The variational equation S' = A S + B E_j is integrated with the state;
    columns are interval-major: column ``j * control_dim + i`` is the
    derivative with respect to component ``i`` on interval ``j``.
    """
    n, cd, N = sys.nstate, sys.control_dim, sig.n
    x = np.asarray(x0, dtype=float).copy()
    if sig.dim != cd:
        raise DimensionError(f"signal of dimension {sig.dim}, system needs {cd}")
    S = np.zeros((n, cd * N))
    m = _substeps(sig, step)
    h = sig.width / m
    t = sig.t0
    for j, u in enumerate(sig.values):
        cols = slice(j * cd, (j + 1) * cd)

        def f(y, u=u, cols=cols):
            xs = y[:n]
            Sy = y[n:].reshape(n, cd * N)
            A, B = sys.velocity_derivatives(xs, u)
            dS = A @ Sy
            dS[:, cols] += B
            return np.concatenate([sys.velocity(xs, u), dS.ravel()])

        y = np.concatenate([x, S.ravel()])
        for _ in range(m):
            y = _rk4(f, y, h)
            t += h
            if not np.all(np.isfinite(y[:n])):
                raise IntegrationDiverged(t - h)
            if not sys.inside(y[:n]):
                raise DomainExitError(t, y[:n])
        x, S = y[:n], y[n:].reshape(n, cd * N)
    return (S, x) if return_endpoint else S


def is_singular_control(sys: ControlSystem, sig: ControlSignal, x0, tol: float = RANK_TOL,
                        step: float = DEFAULT_STEP) -> dict:
    """Rank test of the endpoint differential.

    Singular iff fewer than ``nstate`` singular values exceed ``tol`` times
    the largest one.
    """
    J = endpoint_jacobian(sys, sig, x0, step)
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        rank = 0
    else:
        rank = int(np.sum(s > tol * s[0]))
    smallest = float(s[sys.nstate - 1]) if s.size >= sys.nstate else 0.0
    return {"singular": rank < sys.nstate, "rank": rank, "smallest_sv": smallest}


def restrict(sys: ControlSystem, lo, hi) -> ControlSystem:
    """Restriction to the open box lo < x < hi; nested boxes intersect."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (sys.nstate,) or hi.shape != (sys.nstate,):
        raise DimensionError("box bounds must match the state dimension")
    if not np.all(lo < hi):
        raise ValueError("empty box")
    if sys.box is not None:
        lo, hi = np.maximum(lo, sys.box[0]), np.minimum(hi, sys.box[1])
        if not np.all(lo < hi):
            raise ValueError("restriction boxes do not intersect")
    return replace(sys, box=(lo, hi), label="restriction")


def quotient(sys: ControlSystem, keep: Sequence[int]) -> ControlSystem:
    """Quotient by the projection onto the ``keep`` coordinates.

    The dropped coordinates become control parameters, appended before any
    parameters the system already had.
    """
    keep = sorted(set(int(i) for i in keep))
    n = sys.nstate
    if not keep or len(keep) == n or keep[0] < 0 or keep[-1] >= n:
        raise ValueError(f"keep must be a proper nonempty subset of 0..{n - 1}, got {keep}")
    dropped = [i for i in range(n) if i not in keep]
    names = tuple(sys.names[i] for i in keep)
    if sys.fields is not None:
        fields = [pushforward_projection(f, keep) for f in sys.fields]
        q = ControlSystem.from_fields(fields, Chart(names), label="quotient")
        return q
    nk, nd = len(keep), len(dropped)

    def lift(x, w):
        z = np.empty(n)
        z[keep] = x
        z[dropped] = w[:nd]
        return z, w[nd:]

    def frame_fn(x, w):
        z, w0 = lift(x, w)
        return sys.frame_fn(z, w0)[keep]

    order = keep + dropped + list(range(n, n + sys.nparams))

    def frame_jac(x, w):
        z, w0 = lift(x, w)
        J = sys.frame_jac(z, w0)[keep]
        return J[:, order, :]

    return ControlSystem(nk, sys.nframe, sys.nparams + nd, frame_fn, frame_jac,
                         label="quotient", names=names)


# ---------------------------------------------------------------------------
# equivalence


def _map_and_jacobian(phi, z, fd_step=1e-6):
    """Value and Jacobian of a map given as polynomials or as a callable."""
    z = np.asarray(z, dtype=float)
    if isinstance(phi, (list, tuple)) and phi and hasattr(phi[0], "diff"):
        val = np.array([p(z) for p in phi], dtype=float)
        jac = np.array([[p.diff(j)(z) for j in range(len(z))] for p in phi], dtype=float)
        return val, jac
    val = np.asarray(phi(z), dtype=float)
    jac = np.empty((val.size, z.size))
    for j in range(z.size):
        dz = np.zeros_like(z)
        dz[j] = fd_step
        jac[:, j] = (np.asarray(phi(z + dz)) - np.asarray(phi(z - dz))) / (2 * fd_step)
    return val, jac


def check_equivalence(sys: ControlSystem, sys2: ControlSystem, psi, phi, samples,
                      covectors=None, phi_inv=None, tol: float = 1e-9, cond_max: float = 1e12) -> dict:
    """Check that (psi, phi) intertwines the two systems on sample (x, u) pairs.

    ``phi`` maps states, ``psi`` maps (x, u) to the control of ``sys2``; either
    may be a list of polynomials (in x, resp. in (x, u)) or a callable.
    Reports the max of |F'(phi(x), psi(x, u)) - phi_* F(x, u)| and of the
    Hamiltonian identity H(x, p, u) = H'(phi(x), phi^{-1*} p, psi(x, u)).
    """
    dyn_res, ham_res, inv_res = 0.0, 0.0, 0.0
    rng = np.random.default_rng(0)
    for idx, (x, u) in enumerate(samples):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        xu = np.concatenate([x, u])
        y, Dphi = _map_and_jacobian(phi, x)
        if np.linalg.cond(Dphi) > cond_max:
            raise EquivalenceError(f"state map is not invertible at sample {idx}")
        if phi_inv is not None:
            back, _ = _map_and_jacobian(phi_inv, y)
            inv_res = max(inv_res, float(np.max(np.abs(back - x))))
        if isinstance(psi, (list, tuple)) and psi and hasattr(psi[0], "diff"):
            u2 = np.array([p(xu) for p in psi], dtype=float)
        else:
            u2 = np.asarray(psi(x, u), dtype=float)
        F = sys.velocity(x, u)
        F2 = sys2.velocity(y, u2)
        dyn_res = max(dyn_res, float(np.max(np.abs(F2 - Dphi @ F))))
        ps = [rng.standard_normal(sys.nstate)] if covectors is None else [covectors[idx]]
        for p in ps:
            p = np.asarray(p, dtype=float)
            p2 = np.linalg.solve(Dphi.T, p)
            ham_res = max(ham_res, abs(float(p @ F) - float(p2 @ F2)))
    ok = dyn_res <= tol and ham_res <= tol and inv_res <= tol
    return {"equivalent": ok, "dynamics_residual": dyn_res,
            "hamiltonian_residual": ham_res, "inverse_residual": inv_res, "tol": tol}


# ---------------------------------------------------------------------------
# steering and quotient controllability


def steer(sys: ControlSystem, x0, target, keep: Sequence[int] | None = None, *, T: float = 1.0,
          intervals: int = 6, step: float = 1e-2, tol: float = 1e-10, max_iter: int = 60,
          restarts: int = 6, scale: float = 0.5, rng=None) -> dict:
    """Find a piecewise-constant control whose endpoint hits ``target`` on ``keep``.

    Random multi-arc initial guesses refined by damped Gauss-Newton on the
    endpoint map (minimum-norm steps through the endpoint Jacobian).
    """
    rng = np.random.default_rng(rng)
    keep = list(range(sys.nstate)) if keep is None else list(keep)
    target = np.asarray(target, dtype=float)
    cd = sys.control_dim
    best = {"reached": False, "error": np.inf, "signal": None}
    for _ in range(restarts):
        vals = scale * rng.standard_normal((intervals, cd))
        sig = ControlSignal(0.0, T, vals)
        err = np.inf
        for _ in range(max_iter):
            try:
                J, xe = endpoint_jacobian(sys, sig, x0, step, return_endpoint=True)
            except (IntegrationDiverged, DomainExitError):
                break
            r = xe[keep] - target
            err = float(np.linalg.norm(r))
            if err < best["error"]:
                best = {"reached": err <= tol, "error": err, "signal": sig}
            if err <= tol:
                return best
            dv, *_ = np.linalg.lstsq(J[keep], -r, rcond=1e-10)
            # backtracking keeps the residual decreasing
            lam = 1.0
            while lam > 1e-4:
                trial = ControlSignal(0.0, T, sig.values + lam * dv.reshape(intervals, cd))
                try:
                    e2 = float(np.linalg.norm(endpoint(sys, trial, x0, step)[keep] - target))
                except (IntegrationDiverged, DomainExitError):
                    e2 = np.inf
                if e2 < err:
                    sig = trial
                    break
                lam /= 2
            else:
                break
    return best


def verify_quotient_controllability(sys: ControlSystem, keep: Sequence[int], x0, radius: float = 0.1,
                                    trials: int = 10, tol: float = 1e-4, seed: int = 0,
                                    step: float = 1e-2) -> dict:
    """Steer ``sys`` so that its projection reaches random nearby quotient targets.

    For each target the control found for ``sys`` is re-run on the quotient
    system (with the dropped coordinates as parameters along the lifted
    trajectory) and the quotient endpoint error is reported.
    """
    from .flags import is_bracket_generating

    keep = sorted(set(keep))
    x0 = np.asarray(x0, dtype=float)
    generating = None
    if sys.fields is not None:
        generating = bool(is_bracket_generating(list(sys.fields), tuple(float(v) for v in x0)))
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(trials):
        d = rng.standard_normal(len(keep))
        d *= radius * rng.uniform(0.2, 1.0) / np.linalg.norm(d)
        target = x0[keep] + d
        res = steer(sys, x0, target, keep, step=step, rng=rng)
        entry = {"target": target.tolist(), "reached": False, "error": float(res["error"])}
        if res["signal"] is not None and res["error"] <= tol:
            # replay on the quotient system driven by the lifted trajectory
            qerr = _quotient_replay_error(sys, keep, res["signal"], x0, target, step)
            entry["quotient_error"] = qerr
            entry["reached"] = qerr <= tol
            entry["error"] = max(entry["error"], qerr)
        results.append(entry)
    reached = sum(r["reached"] for r in results)
    return {
        "bracket_generating": generating,
        "trials": trials,
        "reached": reached,
        "max_error": max(r["error"] for r in results) if results else 0.0,
        "tol": tol,
        "targets": results,
    }


def _quotient_replay_error(sys, keep, sig, x0, target, step):
    """Quotient endpoint error when driven by the lifted trajectory's dropped coordinates.

    The full system and the quotient system are integrated as one coupled
    ODE so that both see the dropped coordinates at the same RK stages.
    """
    if len(keep) == sys.nstate:
        return float(np.linalg.norm(endpoint(sys, sig, x0, step) - target))
    q = quotient(sys, keep)
    dropped = [i for i in range(sys.nstate) if i not in keep]
    nk = len(keep)
    y = np.concatenate([np.asarray(x0, dtype=float)[keep], x0])
    m = _substeps(sig, step)
    h = sig.width / m
    for u in sig.values:
        a, tail = u[: sys.nframe], u[sys.nframe:]

        def f(y, u=u, a=a, tail=tail):
            z = y[nk:]
            return np.concatenate([q.velocity(y[:nk], np.concatenate([a, z[dropped], tail])),
                                   sys.velocity(z, u)])

        for _ in range(m):
            y = _rk4(f, y, h)
    return float(np.linalg.norm(y[:nk] - target))
