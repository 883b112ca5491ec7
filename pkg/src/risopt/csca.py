"""Constrained successive convex approximation with feasibility alternation.

The solver follows a sequence of strongly convex approximations of a smooth
nonconvex problem.  Surrogates must match the value and gradient of the
function they model at the current point and carry a proximal curvature
floor; no global upper or lower bound is required.  Iterations combine the
surrogate minimizer with a diminishing stepsize, switching to a pure
feasibility update whenever the surrogate-constrained subproblem has no
solution.  Phase-shift variables live inside the real decision vector as
re/im pairs of a raw complex point in the unit disk (or, after discrete
relaxation, the convex hull of the phase grid).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from risopt.phase import project_hull


class SubproblemInfeasible(RuntimeError):
    """The surrogate-constrained subproblem admits no feasible point."""

    def __init__(self, message: str, x_best: np.ndarray, violation: float):
        super().__init__(message)
        self.x_best = x_best
        self.violation = violation


class NumericError(RuntimeError):
    """An oracle returned a non-finite value; carries the partial trace."""

    def __init__(self, message: str, trace: "SolveTrace"):
        super().__init__(message)
        self.trace = trace


def pack_complex(z: np.ndarray) -> np.ndarray:
    """Real parameterization [Re z; Im z] of a complex vector."""
    z = np.asarray(z, dtype=complex).reshape(-1)
    return np.concatenate([z.real, z.imag])


def unpack_complex(x: np.ndarray) -> np.ndarray:
    half = x.size // 2
    return x[:half] + 1j * x[half:]


# ---------------------------------------------------------------------------
# oracles and surrogate construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleTerm:
    """One addend of an oracle with a curvature tag steering convexification.

    ``fun(x)`` returns (values (m,), jacobian (m, dim)).  Tags: "convex"
    terms are kept as they are, "blockconvex" terms (convex in each
    variable block with the other fixed) are decoupled across the problem's
    block split, anything "general" is linearized at the anchor.
    """

    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    curvature: str = "general"

    def __post_init__(self):
        if self.curvature not in ("convex", "blockconvex", "general"):
            raise ValueError(f"unknown curvature tag {self.curvature!r}")


@dataclass(frozen=True)
class Oracle:
    """Smooth vector-valued function given as a sum of tagged terms."""

    terms: tuple
    m: int = 1

    def value_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vals = np.zeros(self.m)
        jac = np.zeros((self.m, x.size))
        for term in self.terms:
            v, j = term.fun(x)
            vals = vals + v
            jac = jac + j
        return vals, jac

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.value_grad(x)[0]


def scalar_oracle(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], curvature="general") -> Oracle:
    """Wrap a scalar (value, gradient) callable as a one-component Oracle."""

    def vector_fun(x):
        v, g = fun(x)
        return np.array([v]), g.reshape(1, -1)

    return Oracle(terms=(OracleTerm(vector_fun, curvature),), m=1)


@dataclass(frozen=True)
class SurrogateModel:
    """Strongly convex model of an oracle around an anchor point.

    Matches the modeled function's value and jacobian at the anchor and has
    curvature at least ``tau`` in every component (the proximal term).
    """

    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    anchor: np.ndarray
    tau: float
    m: int

    def value_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.fun(x)


def default_surrogate(
    oracle: Oracle,
    anchor: np.ndarray,
    tau: float,
    decouple_blocks: tuple[np.ndarray, np.ndarray] | None = None,
) -> SurrogateModel:
    """Build the standard strongly convex surrogate of an oracle.

    Convex terms survive untouched; block-convex terms are decoupled into
    t(x_1, a_2) + t(a_1, x_2) - t(a) when a block split is available;
    everything else is linearized at the anchor.  A proximal term
    (tau/2)||x - a||^2 supplies the curvature floor.
    """
    anchor = np.asarray(anchor, dtype=float).copy()
    kept: list[Callable] = []
    lin_val = np.zeros(oracle.m)
    lin_jac = None

    for term in oracle.terms:
        if term.curvature == "convex":
            kept.append(term.fun)
        elif term.curvature == "blockconvex" and decouple_blocks is not None:
            kept.append(_decoupled_term(term.fun, anchor, decouple_blocks))
        else:
            v0, j0 = term.fun(anchor)
            lin_val = lin_val + v0
            lin_jac = j0.copy() if lin_jac is None else lin_jac + j0

    def fun(x):
        vals = np.zeros(oracle.m)
        jac = np.zeros((oracle.m, anchor.size))
        for kf in kept:
            v, j = kf(x)
            vals = vals + v
            jac = jac + j
        d = x - anchor
        if lin_jac is not None:
            vals = vals + lin_val + lin_jac @ d
            jac = jac + lin_jac
        prox = 0.5 * tau * float(d @ d)
        vals = vals + prox
        jac = jac + tau * d[None, :]
        return vals, jac

    return SurrogateModel(fun=fun, anchor=anchor, tau=tau, m=oracle.m)


def _decoupled_term(fun, anchor, blocks):
    idx1, idx2 = blocks
    base_v, base_j = fun(anchor)

    def decoupled(x):
        x1 = anchor.copy()
        x1[idx1] = x[idx1]
        v1, j1 = fun(x1)
        x2 = anchor.copy()
        x2[idx2] = x[idx2]
        v2, j2 = fun(x2)
        jac = np.zeros_like(j1)
        jac[:, idx1] = j1[:, idx1]
        jac[:, idx2] = j2[:, idx2]
        return v1 + v2 - base_v, jac

    return decoupled


@dataclass(frozen=True)
class SurrogateBuilder:
    """Surrogate construction rule: curvature floor plus optional decoupling.

    ``tau=None`` resolves to 1e-2 relative to the objective gradient scale
    at the start point when the solver kicks off.
    """

    tau: float | None = None
    decouple: bool = True

    def build(self, oracle: Oracle, anchor: np.ndarray, blocks=None, tau=None) -> SurrogateModel:
        eff_tau = tau if tau is not None else self.tau
        if eff_tau is None:
            raise ValueError("tau unresolved; pass a value or resolve against a problem")
        return default_surrogate(
            oracle, anchor, eff_tau, blocks if self.decouple else None
        )

    def resolve_tau(self, problem: "SmoothProblem", x0: np.ndarray) -> float:
        if self.tau is not None:
            return self.tau
        _, jac = problem.objective.value_grad(x0)
        return 1e-2 * (1.0 + float(np.linalg.norm(jac)))


# ---------------------------------------------------------------------------
# problem container
# ---------------------------------------------------------------------------


def _identity(x: np.ndarray) -> np.ndarray:
    return x


@dataclass(frozen=True)
class SmoothProblem:
    """Smooth objective and inequality constraints over a simple domain.

    ``constraints`` hold the structural inequalities f_i(x) <= 0.  When a
    phase block is declared, ``modulus="unit"`` appends the per-element
    feasibility 1 - |z_n|^2 <= 0 and clips the block to the unit disk;
    ``modulus="hull"`` clips to the convex hull of the ``hull_bits`` grid
    and leaves any relaxed constraint to the caller.  ``blocks`` is the
    optional two-block split used by decoupling surrogates.
    """

    dim: int
    objective: Oracle
    constraints: tuple = ()
    base_project: Callable[[np.ndarray], np.ndarray] = _identity
    phase_block: tuple[int, int] | None = None
    modulus: str | None = None
    hull_bits: int | None = None
    blocks: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.modulus not in (None, "unit", "hull"):
            raise ValueError("modulus must be None, 'unit', or 'hull'")
        if self.modulus is not None and self.phase_block is None:
            raise ValueError("modulus handling requires a phase block")

    def phase_slices(self) -> tuple[slice, slice]:
        off, n = self.phase_block
        return slice(off, off + n), slice(off + n, off + 2 * n)

    def get_phase(self, x: np.ndarray) -> np.ndarray:
        sr, si = self.phase_slices()
        return x[sr] + 1j * x[si]

    def set_phase(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        out = x.copy()
        sr, si = self.phase_slices()
        out[sr] = z.real
        out[si] = z.imag
        return out

    def all_constraints(self) -> tuple:
        if self.modulus == "unit":
            return self.constraints + (self._modulus_oracle(),)
        return self.constraints

    def _modulus_oracle(self) -> Oracle:
        off, n = self.phase_block
        dim = self.dim

        def fun(x):
            sr, si = self.phase_slices()
            zr, zi = x[sr], x[si]
            vals = 1.0 - zr**2 - zi**2
            jac = np.zeros((n, dim))
            jac[np.arange(n), off + np.arange(n)] = -2.0 * zr
            jac[np.arange(n), off + n + np.arange(n)] = -2.0 * zi
            return vals, jac

        return Oracle(terms=(OracleTerm(fun, "general"),), m=n)

    def project(self, x: np.ndarray) -> np.ndarray:
        out = self.base_project(np.asarray(x, dtype=float))
        if self.phase_block is not None and self.modulus is not None:
            z = self.get_phase(out)
            bits = None if self.modulus == "unit" else self.hull_bits
            out = self.set_phase(out, project_hull(z, bits))
        return out

    def objective_value(self, x: np.ndarray) -> float:
        return float(np.sum(self.objective.value(x)))

    def max_violation(self, x: np.ndarray) -> float:
        worst = -np.inf
        for con in self.all_constraints():
            worst = max(worst, float(np.max(con.value(x))))
        return worst if np.isfinite(worst) else 0.0

    def check_gradients(self, x: np.ndarray, h: float = 1e-6, tol: float = 1e-4) -> float:
        """Max abs mismatch between oracle jacobians and central differences."""
        worst = 0.0
        for oracle in (self.objective, *self.all_constraints()):
            _, jac = oracle.value_grad(x)
            for i in range(x.size):
                e = np.zeros(x.size)
                e[i] = h
                fd = (oracle.value(x + e) - oracle.value(x - e)) / (2 * h)
                worst = max(worst, float(np.max(np.abs(fd - jac[:, i]))))
        if worst > tol:
            raise ValueError(f"gradient check failed: max mismatch {worst:.3e}")
        return worst


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


@dataclass
class SolveTrace:
    """Per-iteration record: objective, worst violation, stepsize, mode."""

    iterations: list = field(default_factory=list)
    converged: bool = False

    def append(self, iteration: int, objective: float, max_violation: float, stepsize: float, mode: str):
        self.iterations.append(
            {
                "iteration": iteration,
                "objective": objective,
                "max_violation": max_violation,
                "stepsize": stepsize,
                "mode": mode,
            }
        )

    @property
    def objectives(self) -> np.ndarray:
        return np.array([e["objective"] for e in self.iterations])

    @property
    def violations(self) -> np.ndarray:
        return np.array([e["max_violation"] for e in self.iterations])

    @property
    def stepsizes(self) -> np.ndarray:
        return np.array([e["stepsize"] for e in self.iterations])

    @property
    def modes(self) -> list:
        return [e["mode"] for e in self.iterations]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(
                f, fieldnames=["iteration", "objective", "max_violation", "stepsize", "mode"]
            )
            writer.writeheader()
            writer.writerows(self.iterations)


# ---------------------------------------------------------------------------
# subproblem solvers
# ---------------------------------------------------------------------------


def _stack_models(models: Sequence[SurrogateModel]):
    sizes = [m.m for m in models]

    def evaluate(x):
        vals = np.empty(sum(sizes))
        jacs = np.empty((sum(sizes), x.size))
        pos = 0
        for model, sz in zip(models, sizes):
            v, j = model.value_grad(x)
            vals[pos : pos + sz] = v
            jacs[pos : pos + sz] = j
            pos += sz
        return vals, jacs

    return evaluate, sum(sizes)


def _pg_minimize(fun_grad, project, x0, max_iter, gtol, lip_guess=1.0):
    """Projected gradient with spectral steps and an Armijo safeguard."""
    x = project(np.asarray(x0, dtype=float).copy())
    val, grad = fun_grad(x)
    step = 1.0 / max(lip_guess, 1e-12)
    for _ in range(max_iter):
        res = x - project(x - grad)
        if float(np.linalg.norm(res)) < gtol:
            break
        improved = False
        for _ in range(60):
            cand = project(x - step * grad)
            d = cand - x
            dn = float(d @ d)
            if dn == 0.0:
                break
            cval, cgrad = fun_grad(cand)
            if cval <= val + float(grad @ d) + 0.5 * dn / step + 1e-12 * (1 + abs(val)):
                # spectral (BB) step for the next round
                y = cgrad - grad
                sy = float(d @ y)
                step_next = dn / sy if sy > 1e-18 else step * 2.0
                x, val, grad = cand, cval, cgrad
                step = float(np.clip(step_next, 1e-14, 1e14))
                improved = True
                break
            step *= 0.25
        if not improved:
            break
    return x, val, grad


@dataclass
class SubproblemSolution:
    x: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float


def solve_surrogate_subproblem(
    objective_model: SurrogateModel,
    constraint_models: Sequence[SurrogateModel],
    project: Callable[[np.ndarray], np.ndarray] = _identity,
    x0: np.ndarray | None = None,
    kkt_tol: float = 1e-6,
    max_rounds: int = 30,
    max_inner: int = 2000,
    warm_multipliers: np.ndarray | None = None,
) -> SubproblemSolution:
    """Minimize a strongly convex model under strongly convex constraints.

    Augmented-Lagrangian outer loop with projected-gradient inner solves.
    Returns the minimizer with multipliers once the stationarity,
    feasibility, and complementarity residuals all drop below ``kkt_tol``.
    Raises :class:`SubproblemInfeasible` when the constraint set is empty.
    """
    x = objective_model.anchor.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    x = project(x)
    cons_eval, m_total = _stack_models(constraint_models) if constraint_models else (None, 0)
    if m_total == 0:
        def plain(xx):
            v, j = objective_model.value_grad(xx)
            return float(v[0]), j[0]

        x, _, grad = _pg_minimize(plain, project, x, max_inner, kkt_tol, objective_model.tau)
        res = float(np.linalg.norm(x - project(x - grad)))
        return SubproblemSolution(x=x, multipliers=np.zeros(0), kkt_residual=res)

    mu = (
        np.zeros(m_total)
        if warm_multipliers is None or warm_multipliers.size != m_total
        else np.maximum(warm_multipliers.copy(), 0.0)
    )
    rho = 1.0 + float(np.linalg.norm(mu))
    prev_viol = np.inf
    best_viol = np.inf
    best_x = x.copy()
    for _ in range(max_rounds):
        def al_fun(xx):
            fv, fj = objective_model.value_grad(xx)
            cv, cj = cons_eval(xx)
            shifted = np.maximum(0.0, mu + rho * cv)
            val = float(fv[0]) + (float(shifted @ shifted) - float(mu @ mu)) / (2.0 * rho)
            grad = fj[0] + shifted @ cj
            return val, grad

        x, _, _ = _pg_minimize(al_fun, project, x, max_inner, 0.1 * kkt_tol, objective_model.tau + rho)
        cv, cj = cons_eval(x)
        viol = float(np.max(cv))
        if viol < best_viol:
            best_viol, best_x = viol, x.copy()
        mu = np.maximum(0.0, mu + rho * cv)
        fv, fj = objective_model.value_grad(x)
        lag_grad = fj[0] + mu @ cj
        stat = float(np.linalg.norm(x - project(x - lag_grad))) / (1.0 + float(np.linalg.norm(fj[0])))
        comp = float(np.max(np.abs(mu * cv))) / (1.0 + float(np.max(mu))) if m_total else 0.0
        if stat < kkt_tol and viol < kkt_tol and comp < kkt_tol:
            return SubproblemSolution(x=x, multipliers=mu, kkt_residual=max(stat, viol, comp))
        if viol > 0.25 * prev_viol and viol > kkt_tol:
            rho *= 5.0
            if rho > 1e12:
                raise SubproblemInfeasible(
                    "constraint violation stalled under growing penalty",
                    x_best=best_x,
                    violation=best_viol,
                )
        prev_viol = viol
    if best_viol > np.sqrt(kkt_tol):
        raise SubproblemInfeasible(
            "augmented Lagrangian rounds exhausted while infeasible",
            x_best=best_x,
            violation=best_viol,
        )
    return SubproblemSolution(x=x, multipliers=mu, kkt_residual=max(stat, viol, comp))


def feasibility_update(
    constraint_models: Sequence[SurrogateModel],
    anchor: np.ndarray,
    project: Callable[[np.ndarray], np.ndarray] = _identity,
    tol: float = 1e-8,
    max_rounds: int = 30,
    max_inner: int = 2000,
) -> np.ndarray:
    """Reduce the worst surrogate constraint via the slack reformulation.

    Minimizes s subject to model_i(x) <= s over the domain (min-max of the
    strongly convex models).  Returns the anchor untouched when it is
    already feasible; otherwise the result has strictly smaller surrogate
    max-violation unless the anchor is a stationary point of the violation.
    """
    anchor = np.asarray(anchor, dtype=float)
    cons_eval, m_total = _stack_models(constraint_models)
    v0, _ = cons_eval(anchor)
    s0 = float(np.max(v0))
    if s0 <= 0.0:
        return anchor.copy()

    eps = 1e-6 * (1.0 + abs(s0))
    tau = min(model.tau for model in constraint_models)
    y = np.concatenate([anchor, [s0 + 0.1 * abs(s0) + 1e-12]])
    mu = np.zeros(m_total)
    rho = 1.0

    def project_y(yy):
        out = yy.copy()
        out[:-1] = project(out[:-1])
        return out

    y_prev = None
    for _ in range(max_rounds):
        def al_fun(yy):
            xx, s = yy[:-1], yy[-1]
            cv, cj = cons_eval(xx)
            g = cv - s
            shifted = np.maximum(0.0, mu + rho * g)
            val = s + 0.5 * eps * (s - s0) ** 2
            val += (float(shifted @ shifted) - float(mu @ mu)) / (2.0 * rho)
            grad = np.zeros(yy.size)
            grad[:-1] = shifted @ cj
            grad[-1] = 1.0 + eps * (s - s0) - float(np.sum(shifted))
            return val, grad

        y, _, _ = _pg_minimize(al_fun, project_y, y, max_inner, 0.1 * tol, tau + rho)
        cv, _ = cons_eval(y[:-1])
        g = cv - y[-1]
        mu = np.maximum(0.0, mu + rho * g)
        settled = y_prev is not None and float(np.linalg.norm(y - y_prev)) < tol
        if float(np.max(g)) < tol and settled:
            break
        if float(np.max(g)) >= tol:
            rho = min(rho * 5.0, 1e10)
        y_prev = y.copy()
    return y[:-1]


# ---------------------------------------------------------------------------
# the driver
# ---------------------------------------------------------------------------


def default_stepsize(a: float = 15.0) -> Callable[[int], float]:
    """Diminishing rule gamma_t = a / (a + t): non-summable, square-summable."""

    def rule(t: int) -> float:
        return a / (a + t)

    return rule


def csca_solve(
    problem: SmoothProblem,
    builder: SurrogateBuilder,
    x0: np.ndarray,
    stepsize_rule: Callable[[int], float] | None = None,
    max_iter: int = 300,
    tol: float = 1e-5,
    feasibility_gate: float = 1e-3,
    subproblem_tol: float = 1e-6,
) -> tuple[np.ndarray, SolveTrace]:
    """Run the constrained successive convex approximation loop.

    Builds surrogates of the objective and all constraints at the current
    point, solves the strongly convex subproblem (or a feasibility update
    when the subproblem is infeasible or the iterate violates constraints
    beyond ``feasibility_gate``), and blends iterates with the diminishing
    stepsize.  Stops when the subproblem fixed-point residual and the true
    violation both fall below ``tol``.
    """
    rule = stepsize_rule or default_stepsize()
    x = problem.project(np.asarray(x0, dtype=float).copy())
    tau = builder.resolve_tau(problem, x)
    trace = SolveTrace()
    constraints = problem.all_constraints()
    warm_mu: np.ndarray | None = None
    warm_x: np.ndarray | None = None

    for t in range(max_iter):
        gamma = float(rule(t))
        if not (0.0 < gamma <= 1.0):
            raise ValueError("stepsize must lie in (0, 1]")
        try:
            viol = problem.max_violation(x)
            obj = problem.objective_value(x)
        except FloatingPointError:
            raise NumericError("oracle evaluation failed", trace)
        if not np.isfinite(viol) or not np.isfinite(obj):
            raise NumericError("oracle returned a non-finite value", trace)

        con_models = [
            builder.build(c, x, blocks=problem.blocks, tau=tau) for c in constraints
        ]
        if viol > feasibility_gate:
            xhat = feasibility_update(con_models, x, problem.project)
            mode = "feasibility"
        else:
            obj_model = builder.build(problem.objective, x, blocks=problem.blocks, tau=tau)
            try:
                sol = solve_surrogate_subproblem(
                    obj_model,
                    con_models,
                    problem.project,
                    x0=warm_x,
                    kkt_tol=subproblem_tol,
                    warm_multipliers=warm_mu,
                )
                xhat, warm_mu = sol.x, sol.multipliers
                mode = "objective"
            except SubproblemInfeasible:
                xhat = feasibility_update(con_models, x, problem.project)
                mode = "feasibility"
        step_norm = float(np.linalg.norm(xhat - x))
        x = x + gamma * (xhat - x)
        warm_x = xhat
        trace.append(t, problem.objective_value(x), problem.max_violation(x), gamma, mode)
        if step_norm < tol and problem.max_violation(x) < tol:
            trace.converged = True
            break
    return x, trace


def kkt_residual(problem: SmoothProblem, x: np.ndarray, active_tol: float = 1e-5) -> float:
    """KKT residual of the original problem at x with estimated multipliers.

    Multipliers for near-active constraints come from a nonnegative
    least-squares fit of the stationarity condition; the reported residual
    is the worst of projected stationarity, feasibility, and
    complementarity.
    """
    x = np.asarray(x, dtype=float)
    _, jac0 = problem.objective.value_grad(x)
    g0 = jac0[0] if jac0.ndim == 2 else jac0
    rows = []
    vals = []
    for con in problem.all_constraints():
        cv, cj = con.value_grad(x)
        for i in range(con.m):
            vals.append(float(cv[i]))
            rows.append(cj[i])
    vals = np.array(vals) if vals else np.zeros(0)
    feas = float(np.max(vals)) if vals.size else 0.0
    active = vals > -active_tol if vals.size else np.zeros(0, dtype=bool)
    mu_full = np.zeros(vals.size)
    if np.any(active):
        a_mat = np.stack([rows[i] for i in np.where(active)[0]], axis=1)
        mu_act, _ = nnls(a_mat, -g0)
        mu_full[active] = mu_act
    lag = g0 + (mu_full @ np.stack(rows) if vals.size else 0.0)
    stat = float(np.linalg.norm(x - problem.project(x - lag))) / (1.0 + float(np.linalg.norm(g0)))
    comp = float(np.max(np.abs(mu_full * vals))) / (1.0 + float(np.max(mu_full))) if vals.size else 0.0
    return max(stat, max(feas, 0.0), comp)


# ---------------------------------------------------------------------------
# discrete relaxation
# ---------------------------------------------------------------------------


def discrete_relax(
    problem: SmoothProblem,
    b: int,
    mode: str = "constraint",
    c_slack: float = 0.0,
    rho: float | None = None,
) -> SmoothProblem:
    """Continuous relaxation of b-bit phases over the grid's convex hull.

    mode="constraint": swaps the per-element modulus constraints for the
    aggregate N - ||z||^2 <= c_slack (c_slack=0 forces unit modulus on the
    hull; c_slack=N makes it vacuous).  mode="penalty": appends
    rho * sum max(0, 1 - |z_n|^2)^2 to the objective instead.  Downstream
    results must be snapped to the grid and re-checked for feasibility.
    """
    if problem.phase_block is None:
        raise ValueError("discrete relaxation requires a phase block")
    off, n = problem.phase_block
    dim = problem.dim

    if mode == "constraint":
        def aggregate(x):
            zr = x[off : off + n]
            zi = x[off + n : off + 2 * n]
            val = float(n - np.sum(zr**2) - np.sum(zi**2) - c_slack)
            jac = np.zeros((1, dim))
            jac[0, off : off + n] = -2.0 * zr
            jac[0, off + n : off + 2 * n] = -2.0 * zi
            return np.array([val]), jac

        extra = Oracle(terms=(OracleTerm(aggregate, "general"),), m=1)
        return replace(
            problem,
            constraints=problem.constraints + (extra,),
            modulus="hull",
            hull_bits=b,
        )
    if mode == "penalty":
        if rho is None:
            raise ValueError("penalty mode needs a rho value")

        def penalty(x):
            zr = x[off : off + n]
            zi = x[off + n : off + 2 * n]
            short = np.maximum(0.0, 1.0 - zr**2 - zi**2)
            val = rho * float(np.sum(short**2))
            jac = np.zeros((1, dim))
            jac[0, off : off + n] = rho * short * (-4.0 * zr)
            jac[0, off + n : off + 2 * n] = rho * short * (-4.0 * zi)
            return np.array([val]), jac

        new_obj = Oracle(
            terms=problem.objective.terms + (OracleTerm(penalty, "general"),),
            m=problem.objective.m,
        )
        return replace(problem, objective=new_obj, modulus="hull", hull_bits=b)
    raise ValueError(f"unknown relaxation mode {mode!r}")
