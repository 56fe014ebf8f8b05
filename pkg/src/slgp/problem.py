"""Discrete path problems, mode skeletons, and feature stacking.

A path is x_{1:N} in R^{N x d} with a fixed two-configuration prefix
x_{-1:0} supplying initial position and velocity (x_{-1} = x_0 encodes a
resting start).  A skeleton decorates the horizon with an ordered list of
modes whose windows partition [1, N] and with switches between
consecutive modes; modes and switches contribute equality and inequality
features on windows of at most three consecutive configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .features import EFFORT, Array


class SkeletonError(ValueError):
    """Raised by assemble when the skeleton structure is invalid."""


class FeatureEvalError(RuntimeError):
    """A feature failed to evaluate or produced nonfinite values."""

    def __init__(self, step: int, label: str, reason: str):
        super().__init__(f"feature '{label}' at step {step}: {reason}")
        self.step = step
        self.label = label


@dataclass(frozen=True)
class Mode:
    """A phase of the plan: symbol, inclusive step window, constraint features."""

    symbol: str
    window: tuple[int, int]
    eq: tuple = ()
    ineq: tuple = ()


@dataclass(frozen=True)
class Switch:
    """Transition marker between consecutive modes, applied at one step."""

    symbol: str
    at_step: int
    eq: tuple = ()
    ineq: tuple = ()


@dataclass(frozen=True)
class Skeleton:
    id: str
    modes: tuple[Mode, ...]
    switches: tuple[Switch, ...] = ()


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


def skeleton_structure_violations(skeleton: Skeleton, n_steps: int) -> list[Violation]:
    """Window partition and switch-count checks, no successor table needed."""
    out: list[Violation] = []
    prev_end = 0
    for mode in skeleton.modes:
        start, end = mode.window
        if start > end:
            out.append(Violation("window", f"mode '{mode.symbol}' has empty window {mode.window}"))
            continue
        if start < 1 or end > n_steps:
            out.append(Violation("window", f"mode '{mode.symbol}' window {mode.window} leaves [1, {n_steps}]"))
        if start > prev_end + 1:
            out.append(Violation("gap", f"steps {prev_end + 1}..{start - 1} covered by no mode"))
        elif start <= prev_end:
            out.append(Violation("overlap", f"mode '{mode.symbol}' starts at {start} inside the previous window"))
        prev_end = max(prev_end, end)
    if prev_end < n_steps:
        out.append(Violation("gap", f"steps {prev_end + 1}..{n_steps} covered by no mode"))
    if len(skeleton.switches) != max(len(skeleton.modes) - 1, 0):
        out.append(Violation("switches", f"expected {max(len(skeleton.modes) - 1, 0)} switches, "
                                         f"got {len(skeleton.switches)}"))
    for sw in skeleton.switches:
        if not 1 <= sw.at_step <= n_steps:
            out.append(Violation("switches", f"switch '{sw.symbol}' at step {sw.at_step} leaves [1, {n_steps}]"))
    return out


def validate_skeleton(skeleton: Skeleton, successors, n_steps: int) -> list[Violation]:
    """Full skeleton validation against a successor table.

    successors maps (mode symbol, switch symbol) to a collection of legal
    next-mode symbols.  Returns a list of violations; empty means valid.
    Never raises.
    """
    out = skeleton_structure_violations(skeleton, n_steps)
    if len(skeleton.switches) == max(len(skeleton.modes) - 1, 0):
        for i, sw in enumerate(skeleton.switches):
            prev = skeleton.modes[i].symbol
            nxt = skeleton.modes[i + 1].symbol
            allowed = successors.get((prev, sw.symbol), ())
            if nxt not in allowed:
                out.append(Violation("transition",
                                     f"'{prev}' --{sw.symbol}--> '{nxt}' not in successor table"))
    return out


def free_skeleton(n_steps: int, symbol: str = "free", skeleton_id: str = "free") -> Skeleton:
    return Skeleton(id=skeleton_id, modes=(Mode(symbol, (1, n_steps)),))


@dataclass(frozen=True)
class PathProblem:
    """Problem data: horizon, step scale, prefix, and cost features.

    step_costs[n-1] lists the cost features evaluated at step n; terminal
    costs are additional features evaluated at step N.  `actuated` marks
    the coordinates that receive control noise during execution.
    """

    N: int
    d: int
    dt: float
    sigma: float
    prefix: Array
    step_costs: tuple
    terminal_costs: tuple = ()
    actuated: Array | None = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if not (self.dt > 0 and self.sigma > 0):
            raise ValueError("dt and sigma must be positive")
        prefix = np.asarray(self.prefix, dtype=float)
        if prefix.shape != (2, self.d):
            raise ValueError(f"prefix must be (2, {self.d}), got {prefix.shape}")
        prefix = prefix.copy()
        prefix.setflags(write=False)
        object.__setattr__(self, "prefix", prefix)
        if len(self.step_costs) != self.N:
            raise ValueError(f"step_costs must have length N={self.N}")
        actuated = (np.ones(self.d, dtype=bool) if self.actuated is None
                    else np.asarray(self.actuated, dtype=bool).copy())
        if actuated.shape != (self.d,):
            raise ValueError(f"actuated must be ({self.d},)")
        actuated.setflags(write=False)
        object.__setattr__(self, "actuated", actuated)

    @classmethod
    def uniform(cls, N, d, dt, sigma, prefix, per_step, terminal=(), actuated=None):
        """Same cost features at every step plus terminal features at N."""
        return cls(N=N, d=d, dt=dt, sigma=sigma, prefix=np.asarray(prefix, float),
                   step_costs=tuple(tuple(per_step) for _ in range(N)),
                   terminal_costs=tuple(terminal), actuated=actuated)

    def config(self, x: Array, m: int) -> Array:
        """Configuration at index m, substituting the prefix for m <= 0."""
        if m >= 1:
            return x[m - 1]
        return self.prefix[m + 1]

    def window(self, x: Array, n: int, width: int) -> Array:
        """Stack configurations n-width+1 .. n, oldest first."""
        return np.stack([self.config(x, m) for m in range(n - width + 1, n + 1)])


def step_constraints(skeleton: Skeleton, n: int):
    """Equality and inequality features active at step n, in canonical order.

    Order: modes in declared order (windows partition, so at most one is
    active), then switches with at_step == n; feature declaration order
    within each.  Every Jacobian row consumer relies on this order.
    """
    eq: list[tuple[str, object]] = []
    ineq: list[tuple[str, object]] = []
    for mode in skeleton.modes:
        if mode.window[0] <= n <= mode.window[1]:
            eq.extend((mode.symbol, f) for f in mode.eq)
            ineq.extend((mode.symbol, f) for f in mode.ineq)
    for sw in skeleton.switches:
        if sw.at_step == n:
            eq.extend((sw.symbol, f) for f in sw.eq)
            ineq.extend((sw.symbol, f) for f in sw.ineq)
    return eq, ineq


@dataclass(frozen=True)
class FeatureStack:
    """All residuals, constraint values, and Jacobians at one path.

    Jacobians are CSR over the flattened path (N*d columns); prefix
    configurations are constants and contribute no columns.  Index tuples
    give (step, label) per row.
    """

    residuals: Array
    jac: sp.csr_matrix
    effort_mask: Array
    eq: Array
    eq_jac: sp.csr_matrix
    ineq: Array
    ineq_jac: sp.csr_matrix
    cost_index: tuple
    eq_index: tuple
    ineq_index: tuple

    @property
    def n_vars(self) -> int:
        return self.jac.shape[1]


class _RowCollector:
    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.vals: list[Array] = []
        self.rows: list[Array] = []
        self.cols: list[Array] = []
        self.data: list[Array] = []
        self.index: list[tuple[int, str]] = []
        self.offset = 0

    def add(self, step: int, label: str, value: Array, jac: Array, col_blocks: list[int]):
        if not np.all(np.isfinite(value)) or not np.all(np.isfinite(jac)):
            raise FeatureEvalError(step, label, "nonfinite value or Jacobian")
        size, d = value.shape[0], jac.shape[1] // len(col_blocks)
        self.vals.append(value)
        for k, m in enumerate(col_blocks):
            if m < 1:
                continue  # prefix column: constant, not a decision variable
            block = jac[:, k * d:(k + 1) * d]
            r, c = np.nonzero(block)
            self.rows.append(r + self.offset)
            self.cols.append(c + (m - 1) * d)
            self.data.append(block[r, c])
        self.index.extend((step, label) for _ in range(size))
        self.offset += size

    def build(self):
        vals = np.concatenate(self.vals) if self.vals else np.zeros(0)
        if self.rows:
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
            data = np.concatenate(self.data)
        else:
            rows = cols = np.zeros(0, dtype=int)
            data = np.zeros(0)
        jac = sp.coo_matrix((data, (rows, cols)), shape=(self.offset, self.n_vars)).tocsr()
        return vals, jac, tuple(self.index)


def _eval_feature(problem: PathProblem, x: Array, n: int, label: str, feat):
    xs = problem.window(x, n, feat.window)
    try:
        value, jac = feat.eval(xs)
    except FeatureEvalError:
        raise
    except Exception as exc:  # noqa: BLE001 - reported with step/feature index
        raise FeatureEvalError(n, label, repr(exc)) from exc
    value = np.atleast_1d(np.asarray(value, dtype=float))
    jac = np.asarray(jac, dtype=float)
    if value.shape != (feat.size,) or jac.shape != (feat.size, feat.window * problem.d):
        raise FeatureEvalError(n, label, f"bad shapes {value.shape}, {jac.shape}")
    return value, jac


def assemble(problem: PathProblem, skeleton: Skeleton, x: Array) -> FeatureStack:
    """Evaluate and stack all cost and constraint features at a path.

    Deterministic: identical inputs produce bit-identical stacks.
    """
    structural = skeleton_structure_violations(skeleton, problem.N)
    if structural:
        raise SkeletonError("; ".join(v.message for v in structural))
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.N, problem.d):
        raise ValueError(f"path must be ({problem.N}, {problem.d}), got {x.shape}")

    n_vars = problem.N * problem.d
    cost = _RowCollector(n_vars)
    eqs = _RowCollector(n_vars)
    ineqs = _RowCollector(n_vars)
    effort: list[Array] = []

    for n in range(1, problem.N + 1):
        feats = list(problem.step_costs[n - 1])
        if n == problem.N:
            feats.extend(problem.terminal_costs)
        for feat in feats:
            label = getattr(feat, "name", type(feat).__name__)
            value, jac = _eval_feature(problem, x, n, label, feat)
            blocks = list(range(n - feat.window + 1, n + 1))
            cost.add(n, label, value, jac, blocks)
            effort.append(np.full(feat.size, getattr(feat, "group", None) == EFFORT))
        eq_feats, ineq_feats = step_constraints(skeleton, n)
        for collector, items in ((eqs, eq_feats), (ineqs, ineq_feats)):
            for owner, feat in items:
                label = f"{owner}:{getattr(feat, 'name', type(feat).__name__)}"
                value, jac = _eval_feature(problem, x, n, label, feat)
                blocks = list(range(n - feat.window + 1, n + 1))
                collector.add(n, label, value, jac, blocks)

    residuals, jac, cost_index = cost.build()
    eq, eq_jac, eq_index = eqs.build()
    ineq, ineq_jac, ineq_index = ineqs.build()
    effort_mask = np.concatenate(effort) if effort else np.zeros(0, dtype=bool)
    return FeatureStack(residuals=residuals, jac=jac, effort_mask=effort_mask,
                        eq=eq, eq_jac=eq_jac, ineq=ineq, ineq_jac=ineq_jac,
                        cost_index=cost_index, eq_index=eq_index, ineq_index=ineq_index)


def cost_value(stack: FeatureStack) -> float:
    """Objective value: half the squared residual norm."""
    return 0.5 * float(stack.residuals @ stack.residuals)


def constraint_violation(stack: FeatureStack) -> float:
    """Max over |h| and positive parts of g; 0 when unconstrained."""
    viol = 0.0
    if stack.eq.size:
        viol = float(np.abs(stack.eq).max())
    if stack.ineq.size:
        viol = max(viol, float(np.clip(stack.ineq, 0.0, None).max()))
    return viol
