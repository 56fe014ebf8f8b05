"""Self-contained diagnostic suites with independent oracles.

Each suite returns (ok, detail) and is deterministic.  The heavy
recursions are cross-checked against separately written references: a
textbook value recursion for first-order LQ problems and a dense KKT
solve for constrained quadratic instances.  run_suites prints one
PASS/FAIL line per suite.
"""

from __future__ import annotations

import json
import sys
import time

import numpy as np

from .execution import build_controller, rollout
from .features import check_jacobian, coordinate_target, AccelerationPenalty
from .kodp import (PolicyExpansion, StepQuadratics, backward_pass, cost_to_go,
                   quadratize, step_policy)
from .laplace import (UNNORMALIZED, build_component, build_mixture,
                      mixture_weights, multimodal_cost, nullspace_basis,
                      sample_paths)
from .problem import PathProblem, assemble, free_skeleton
from .scenarios import ScenarioParams, build_scenario
from .solver import SolverConfig, solve

Array = np.ndarray

# Frozen reference mixture: per-skeleton path costs, covariance-determinant
# ratios, the resulting weights, and the combined cost.
_REF_F = np.array([0.1930, 0.7682, 0.6204, 1.4827])
_REF_RATIO = np.array([0.0041, 0.0099, 0.0584, 0.0646])
_REF_WEIGHTS = np.array([0.0626, 0.0850, 0.5810, 0.2713])
_REF_COST = 2.918


def suite_table_arithmetic() -> tuple[bool, str]:
    """Weights and combined cost reproduce the frozen four-skeleton table."""
    w = mixture_weights(_REF_F, np.log(_REF_RATIO))
    cost = multimodal_cost(_REF_F, np.log(_REF_RATIO), UNNORMALIZED)
    w_err = float(np.abs(w - _REF_WEIGHTS).max())
    c_err = abs(cost - _REF_COST)
    ok = w_err <= 1e-3 and c_err <= 2e-3
    return ok, f"max weight err {w_err:.2e} (tol 1e-3); cost err {c_err:.2e} (tol 2e-3)"


# --- first-order LQ oracle --------------------------------------------------

def _lq_oracle(A, R, Q, g, consts):
    """Textbook backward value recursion for
    f_n = 1/2 |x_n - A_n x_{n-1}|^2_{R_n} + 1/2 x_n^T Q_n x_n + g_n^T x_n + c_n
    by direct partial minimization.  Returns per-step (P, p, c)."""
    N = len(A)
    d = A[0].shape[0]
    P = np.zeros((d, d))
    p = np.zeros(d)
    c = 0.0
    out = [None] * N
    for n in reversed(range(N)):
        M = R[n] + Q[n] + P
        F = np.linalg.solve(M, R[n] @ A[n])
        f0 = -np.linalg.solve(M, g[n] + p)
        G = F - A[n]
        QP = Q[n] + P
        Pn = G.T @ R[n] @ G + F.T @ QP @ F
        pn = G.T @ (R[n] @ f0) + F.T @ (QP @ f0) + F.T @ (g[n] + p)
        cn = (0.5 * f0 @ (R[n] @ f0) + 0.5 * f0 @ (QP @ f0)
              + (g[n] + p) @ f0 + c + consts[n])
        out[n] = (0.5 * (Pn + Pn.T), pn, cn, F, f0)
        P, p, c = out[n][0], pn, cn
    return out


def suite_riccati_equivalence(instances: int = 10) -> tuple[bool, str]:
    """Backward pass on first-order LQ steps matches the Riccati recursion.

    The step quadratics only couple (x_{n-1}, x_n); the oldest window
    block stays empty, so the recursion must reproduce the classical
    value matrices in the x_{n-1} block and zeros elsewhere.
    """
    rng = np.random.default_rng(20260816)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        N = int(rng.integers(3, 51))
        d = int(rng.integers(1, 5))

        def spd():
            B = rng.standard_normal((d, d))
            return B @ B.T + 0.3 * np.eye(d)

        A = [rng.standard_normal((d, d)) * 0.6 for _ in range(N)]
        R = [spd() for _ in range(N)]
        Q = [spd() * 0.5 for _ in range(N)]
        g = [rng.standard_normal(d) for _ in range(N)]
        consts = rng.standard_normal(N)

        steps = []
        for n in range(1, N + 1):
            H = np.zeros((3 * d, 3 * d))
            H[d:2 * d, d:2 * d] = A[n - 1].T @ R[n - 1] @ A[n - 1]
            H[d:2 * d, 2 * d:] = -A[n - 1].T @ R[n - 1]
            H[2 * d:, d:2 * d] = -R[n - 1] @ A[n - 1]
            H[2 * d:, 2 * d:] = R[n - 1] + Q[n - 1]
            grad = np.zeros(3 * d)
            grad[2 * d:] = g[n - 1]
            steps.append(StepQuadratics(n=n, hess=H, grad=grad,
                                        const=float(consts[n - 1]),
                                        con_jac=np.zeros((0, 3 * d))))
        policy = backward_pass(PolicyExpansion(
            steps=tuple(steps), skeleton_id="lq", d=d,
            x_ref=np.zeros((N, d)), prefix=np.zeros((2, d))))

        oracle = _lq_oracle(A, R, Q, g, consts)
        for n in range(N):
            P, p, c, F, f0 = oracle[n]
            scale = max(1.0, np.abs(P).max(), abs(c))
            worst = max(worst,
                        np.abs(policy.V[n][d:, d:] - P).max() / scale,
                        np.abs(policy.V[n][:d, :]).max() / scale,
                        np.abs(policy.v[n][d:] - p).max() / scale,
                        np.abs(policy.v[n][:d]).max() / scale,
                        abs(policy.v_bar[n] - c) / scale,
                        np.abs(policy.K[n][:, d:] - F).max() / scale,
                        np.abs(policy.K[n][:, :d]).max() / scale,
                        np.abs(policy.u_ff[n] - f0).max() / scale)
    elapsed = time.perf_counter() - start
    return worst <= 1e-8, (f"{instances} instances, max rel err {worst:.2e} "
                           f"(tol 1e-8), {elapsed:.2f}s")


# --- dense equality-QP oracle ----------------------------------------------

def _dense_qp_oracle(steps, d: int, delta_prefix: Array):
    """Assemble the full quadratic over x_{1:N} with the prefix deviation
    substituted and solve the dense KKT system."""
    N = len(steps)
    nz = N * d
    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    c = 0.0
    a_rows, b_rows, row_counts = [], [], []
    for st in steps:
        S = np.zeros((3 * d, nz))
        t = np.zeros(3 * d)
        for k, m in enumerate((st.n - 2, st.n - 1, st.n)):
            sl = slice(k * d, (k + 1) * d)
            if m >= 1:
                S[sl, (m - 1) * d:m * d] = np.eye(d)
            else:
                t[sl] = delta_prefix[(m + 1) * d:(m + 2) * d]
        H += S.T @ st.hess @ S
        g += S.T @ (st.hess @ t + st.grad)
        c += 0.5 * t @ st.hess @ t + st.grad @ t + st.const
        row_counts.append(st.con_jac.shape[0])
        if st.con_jac.shape[0]:
            a_rows.append(st.con_jac @ S)
            b_rows.append(-st.con_jac @ t)
    A = np.vstack(a_rows) if a_rows else np.zeros((0, nz))
    b = np.concatenate(b_rows) if b_rows else np.zeros(0)
    na = A.shape[0]
    kkt = np.zeros((nz + na, nz + na))
    kkt[:nz, :nz] = H
    kkt[:nz, nz:] = A.T
    kkt[nz:, :nz] = A
    sol = np.linalg.solve(kkt, np.concatenate([-g, b]))
    z, lam = sol[:nz], sol[nz:]
    cost = 0.5 * z @ H @ z + g @ z + c
    lams, at = [], 0
    for cnt in row_counts:
        lams.append(lam[at:at + cnt])
        at += cnt
    return z.reshape(N, d), lams, float(cost)


def _roll_policy(policy, delta_prefix: Array):
    d = policy.d
    dp = np.asarray(delta_prefix, dtype=float).copy()
    xs, lams = [], []
    for n in range(1, policy.N + 1):
        dx, dlam = step_policy(policy, n, dp)
        xs.append(dx)
        lams.append(dlam)
        dp = np.concatenate([dp[d:], dx])
    return np.array(xs), lams


def suite_dense_qp(instances: int = 10, deviations: int = 20) -> tuple[bool, str]:
    """Constrained quadratic instances: the staged policy reproduces the
    dense KKT trajectory, multipliers, and optimal cost for random past
    deviations."""
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    N, d = 5, 2
    for _ in range(instances):
        steps = []
        for n in range(1, N + 1):
            B = rng.standard_normal((3 * d + 2, 3 * d))
            H = B.T @ B / (3 * d)
            H[2 * d:, 2 * d:] += (0.5 + rng.random()) * np.eye(d)
            con = rng.standard_normal((int(rng.integers(0, d + 1)), 3 * d))
            steps.append(StepQuadratics(n=n, hess=H,
                                        grad=rng.standard_normal(3 * d),
                                        const=float(rng.standard_normal()),
                                        con_jac=con))
        policy = backward_pass(PolicyExpansion(
            steps=tuple(steps), skeleton_id="qp", d=d,
            x_ref=np.zeros((N, d)), prefix=np.zeros((2, d))))
        for _ in range(deviations):
            dp = 0.3 * rng.standard_normal(2 * d)
            z_ref, lam_ref, cost_ref = _dense_qp_oracle(steps, d, dp)
            z, lams = _roll_policy(policy, dp)
            cost = cost_to_go(policy, 1, dp)
            scale = max(1.0, np.abs(z_ref).max(), abs(cost_ref))
            worst = max(worst,
                        np.abs(z - z_ref).max() / scale,
                        abs(cost - cost_ref) / scale,
                        max((np.abs(a - b).max() / scale if a.size else 0.0)
                            for a, b in zip(lams, lam_ref)))
    elapsed = time.perf_counter() - start
    return worst <= 1e-8, (f"{instances} instances x {deviations} deviations, "
                           f"max rel err {worst:.2e} (tol 1e-8), {elapsed:.2f}s")


# --- Gaussian exactness ------------------------------------------------------

def _lq_problem(N: int = 8, d: int = 2):
    dt, sigma = 0.2, 0.4
    prefix = np.zeros((2, d))
    return PathProblem.uniform(
        N=N, d=d, dt=dt, sigma=sigma, prefix=prefix,
        per_step=(AccelerationPenalty(d, dt, sigma),),
        terminal=(coordinate_target(d, np.arange(d), np.full(d, 0.7), 5.0),))


def suite_laplace_lq(samples: int = 100_000) -> tuple[bool, str]:
    """On unconstrained LQ problems the approximation is exact. The mean and
    covariance match a dense Gaussian-posterior oracle (least squares on the
    stacked affine residuals), the combined cost equals the slogdet-based
    closed form, and the sampler's empirical covariance matches the analytic
    one."""
    start = time.perf_counter()
    mean_err = cov_err = cost_err = 0.0
    tight = SolverConfig(tol_step=1e-12, hessian_reg=1e-12)
    for N, d in ((8, 2), (5, 1), (12, 3)):
        problem = _lq_problem(N, d)
        skeleton = free_skeleton(N)
        sol = solve(problem, skeleton, config=tight)
        if not sol.converged:
            return False, f"LQ solve N={N} d={d} failed (status {sol.status})"
        comp = build_component(problem, skeleton, sol)

        # Every residual is affine, so the stack at the origin gives the
        # exact posterior: mean from least squares, covariance from (A^T A)^-1.
        zeros = np.zeros((N, d))
        stack = assemble(problem, skeleton, zeros)
        A, b = stack.jac.toarray(), stack.residuals
        mean = np.linalg.lstsq(A, -b, rcond=None)[0]
        cov_oracle = np.linalg.inv(A.T @ A)
        mean_err = max(mean_err,
                       float(np.max(np.abs(sol.x_star.ravel() - mean))))
        cov_err = max(cov_err, float(np.max(
            np.abs(comp.covariance("optimal") - cov_oracle))))

        sign, logdet = np.linalg.slogdet(comp.hess.toarray())
        sign0, logdet0 = np.linalg.slogdet(comp.hess0.toarray())
        if sign <= 0 or sign0 <= 0:
            return False, f"dense Hessians not positive definite (N={N} d={d})"
        exact = sol.f_star - 0.5 * (logdet0 - logdet)
        got = multimodal_cost(np.array([comp.f_star]),
                              np.array([comp.log_ratio]))
        cost_err = max(cost_err, abs(got - exact))

    problem = _lq_problem()
    skeleton = free_skeleton(problem.N)
    sol = solve(problem, skeleton)
    comp = build_component(problem, skeleton, sol)
    draws = sample_paths(comp, samples, seed=13).reshape(samples, -1)
    emp = np.cov(draws, rowvar=False)
    cov = comp.covariance("optimal")
    sample_err = np.linalg.norm(emp - cov) / np.linalg.norm(cov)
    elapsed = time.perf_counter() - start
    ok = (mean_err <= 1e-8 and cov_err <= 1e-8 and cost_err <= 1e-8
          and sample_err <= 0.05)
    return ok, (f"mean err {mean_err:.2e}, cov err {cov_err:.2e}, cost err "
                f"{cost_err:.2e} (tol 1e-8); sampled cov rel err "
                f"{sample_err:.3f} (tol 0.05), {samples} draws, {elapsed:.2f}s")


# --- feature derivative checks ----------------------------------------------

def _scenario_features(scenario):
    feats = list(scenario.problem.step_costs[0]) + list(scenario.problem.terminal_costs)
    for sk in scenario.skeletons:
        for mode in sk.modes:
            feats.extend(mode.eq)
            feats.extend(mode.ineq)
        for sw in sk.switches:
            feats.extend(sw.eq)
            feats.extend(sw.ineq)
    return feats


def suite_feature_jacobians() -> tuple[bool, str]:
    """Central finite differences confirm every scenario feature Jacobian."""
    rng = np.random.default_rng(101)
    worst, count = 0.0, 0
    for name in ("elbow", "push", "tworoute"):
        scenario = build_scenario(ScenarioParams(name=name))
        d = scenario.problem.d
        for feat in _scenario_features(scenario):
            for _ in range(2):
                xs = rng.uniform(-0.7, 0.7, (feat.window, d))
                worst = max(worst, check_jacobian(feat, xs, h=1e-6))
                count += 1
    return worst <= 1e-4, (f"{count} checks across 3 scenarios, "
                           f"max rel err {worst:.2e} (tol 1e-4)")


def suite_weight_simplex() -> tuple[bool, str]:
    """Weights stay on the simplex for benign and extreme inputs."""
    rng = np.random.default_rng(3)
    worst = 0.0
    for scale in (1.0, 1e2, 1e4):
        for _ in range(20):
            f = rng.normal(0.0, scale, 6)
            lr = rng.normal(0.0, 1.0, 6)
            w = mixture_weights(f, lr)
            if not np.all(np.isfinite(w)) or w.min() < 0.0:
                return False, f"nonfinite or negative weight at scale {scale}"
            worst = max(worst, abs(float(w.sum()) - 1.0))
            shifted = mixture_weights(f + 123.0, lr)
            worst = max(worst, float(np.abs(shifted - w).max()))
    single = mixture_weights(np.array([4.2]), np.array([-1.0]))
    worst = max(worst, abs(float(single[0]) - 1.0))
    return worst <= 1e-12, f"max simplex defect {worst:.2e} (tol 1e-12)"


def suite_nullspace() -> tuple[bool, str]:
    """Nullspace bases are orthonormal, annihilate J, and have the right
    dimension for full-rank, rank-deficient, zero, and empty inputs."""
    rng = np.random.default_rng(17)
    worst = 0.0
    cases = []
    J = rng.standard_normal((3, 8))
    cases.append((J, 8 - 3))
    v, w = rng.standard_normal(8), rng.standard_normal(8)
    cases.append((np.vstack([v, v, w]), 8 - 2))
    cases.append((np.zeros((2, 5)), 5))
    cases.append((np.zeros((0, 4)), 4))
    for J, nullity in cases:
        W = nullspace_basis(J)
        if W.shape != (J.shape[1], nullity):
            return False, f"expected nullity {nullity}, got shape {W.shape}"
        if J.shape[0]:
            worst = max(worst, float(np.abs(J @ W).max()))
        gram = W.T @ W - np.eye(W.shape[1])
        worst = max(worst, float(np.abs(gram).max()))
    return worst <= 1e-8, f"max residual {worst:.2e} (tol 1e-8)"


def suite_determinism() -> tuple[bool, str]:
    """The plan/simulate pipeline is bit-identical across repeated runs."""
    params = ScenarioParams(name="tworoute", N=16, T=2.0)

    def once():
        scenario = build_scenario(params)
        sols = [solve(scenario.problem, sk) for sk in scenario.skeletons]
        if not all(s.converged for s in sols):
            raise RuntimeError("tworoute solve did not converge")
        comps = [build_component(scenario.problem, sk, s)
                 for sk, s in zip(scenario.skeletons, sols)]
        blob = json.dumps(build_mixture(comps).to_dict(), sort_keys=True)
        policies = [backward_pass(quadratize(scenario.problem, sk, s))
                    for sk, s in zip(scenario.skeletons, sols)]
        ctrl = build_controller(policies, comps)
        ro = rollout(scenario.problem, scenario.truth, ctrl, noise_scale=1.0,
                     seed=11, target=(scenario.target_coords, scenario.target_values))
        draws = sample_paths(comps[0], 16, seed=5)
        return blob, ro.path, draws

    try:
        blob_a, path_a, draws_a = once()
        blob_b, path_b, draws_b = once()
    except RuntimeError as exc:
        return False, str(exc)
    ok = (blob_a == blob_b and np.array_equal(path_a, path_b)
          and np.array_equal(draws_a, draws_b))
    return ok, ("mixture JSON, rollout path, and samples bit-identical"
                if ok else "repeated runs differ")


ALL_SUITES = {
    "table": suite_table_arithmetic,
    "riccati": suite_riccati_equivalence,
    "qp": suite_dense_qp,
    "laplace": suite_laplace_lq,
    "jacobians": suite_feature_jacobians,
    "simplex": suite_weight_simplex,
    "nullspace": suite_nullspace,
    "determinism": suite_determinism,
}


def run_suites(names=None, stream=None) -> list[tuple[str, bool, str]]:
    stream = stream or sys.stdout
    selected = list(names) if names else list(ALL_SUITES)
    results = []
    for name in selected:
        if name not in ALL_SUITES:
            raise ValueError(f"unknown suite '{name}'; choose from {sorted(ALL_SUITES)}")
        try:
            ok, detail = ALL_SUITES[name]()
        except Exception as exc:  # noqa: BLE001 - a crashing suite is a failure
            ok, detail = False, f"raised {exc!r}"
        results.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {name:<12} {detail}", file=stream)
    return results
