"""Monte Carlo harnesses for the finite-sample probabilistic claims.

Every trial is reproducible from (claim id, master seed): draw-level RNG
streams derive from SeedSequence([seed, draw index]) or fixed chunk
indices, and aggregation is order-independent.  Conditioning events are
reported as exclusion counts next to the conditional statistic.
"""

from __future__ import annotations

import math

import numpy as np

from .reporting import TrialReport, frequency_report, verdict, wilson_halfwidth
from .rmt import (
    POLE_GUARD,
    lambda_from_gap,
    make_instance,
    sample_goe,
    semicircle_stieltjes,
    singular_values_from_eigenvalues,
    stieltjes_from_eigenvalues,
)


def _draw_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def z_star(d, p):
    """High-probability ceiling for the GOE operator norm at level p (d >= 250)."""
    if d < 250:
        raise ValueError(f"norm bound regime needs d >= 250, got {d}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return 2.0 + 21.0 * d ** (-1.0 / 3.0) * math.log(d) ** (2.0 / 3.0) + 2.0 * math.sqrt(
        math.log(1.0 / p) / d
    )


def _batched_stiefel(rng, m, d, r):
    g = rng.standard_normal((m, d, r))
    q, rr = np.linalg.qr(g)
    diag = np.einsum("mii->mi", rr)
    signs = np.sign(diag)
    signs[signs == 0.0] = 1.0
    return q * signs[:, None, :]


def hanson_wright_trial(A, r, t, n, seed=0, claim="hanson_wright", chunk=2000):
    """Exceedance frequency of the Stiefel quadratic-form deviation bound.

    For U uniform on Stief(d, r), the deviation
    ||U^T A U - (tr A / d) I|| exceeds
    8 (sqrt(t) ||A||_F + t ||A||) / (d (1 - 2 sqrt(t/d)))
    with probability at most 3 exp(-t + 2.2 r), for t <= d/4.
    """
    A = np.asarray(A)
    d = A.shape[0]
    if t > d / 4.0:
        raise ValueError(f"regime requires t <= d/4, got t={t}, d={d}")
    threshold = (
        8.0
        * (math.sqrt(t) * np.linalg.norm(A) + t * np.linalg.norm(A, 2))
        / (d * (1.0 - 2.0 * math.sqrt(t / d)))
    )
    trace_term = np.trace(A) / d
    hits = 0
    done = 0
    chunk_idx = 0
    while done < n:
        m = min(chunk, n - done)
        rng = _draw_rng(seed, chunk_idx)
        U = _batched_stiefel(rng, m, d, r)
        quad = np.einsum("mdr,de,mes->mrs", U, A, U)
        quad[:, np.arange(r), np.arange(r)] -= trace_term
        dev = np.abs(np.linalg.eigvalsh((quad + quad.transpose(0, 2, 1)) / 2.0)).max(axis=1)
        hits += int(np.sum(dev > threshold))
        done += m
        chunk_idx += 1
    bound = 3.0 * math.exp(-t + 2.2 * r)
    return frequency_report(
        claim, hits, n, bound=bound, seed=seed,
        details={"d": d, "r": r, "t": t, "threshold": float(threshold)},
    )


def sphere_hanson_wright_trial(A, t, n, seed=0, claim="hanson_wright_sphere", chunk=5000):
    """Sphere specialization: constant 4 in the deviation, bound 3 e^{-t}."""
    A = np.asarray(A)
    d = A.shape[0]
    threshold = (
        4.0
        * (math.sqrt(t) * np.linalg.norm(A) + t * np.linalg.norm(A, 2))
        / (d * (1.0 - 2.0 * math.sqrt(t / d)))
    )
    trace_term = np.trace(A) / d
    hits = 0
    done = 0
    chunk_idx = 0
    while done < n:
        m = min(chunk, n - done)
        rng = _draw_rng(seed, chunk_idx)
        X = rng.standard_normal((m, d))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        dev = np.abs(np.einsum("md,de,me->m", X, A, X) - trace_term)
        hits += int(np.sum(dev > threshold))
        done += m
        chunk_idx += 1
    return frequency_report(
        claim, hits, n, bound=3.0 * math.exp(-t), seed=seed,
        details={"d": d, "t": t, "threshold": float(threshold)},
    )


def norm_bound_trial(d, p, n, seed=0, claim="norm_bound"):
    """Frequency of ||W|| exceeding z*(p), compared against p itself."""
    zs = z_star(d, p)
    hits = 0
    norms = np.empty(n)
    for i in range(n):
        W = sample_goe(d, _draw_rng(seed, i))
        vals = np.linalg.eigvalsh(W)
        norms[i] = max(-vals[0], vals[-1])
        hits += norms[i] > zs
    return frequency_report(
        claim, int(hits), n, bound=p, seed=seed,
        details={"d": d, "p": p, "z_star": zs, "median_norm": float(np.median(norms))},
    )


def stieltjes_trial(d, a, n, seed=0, p=None, claim="stieltjes"):
    """Max deviation of the empirical Stieltjes transform from the semicircle.

    Draws are conditioned on ||W|| <= z*(p) (default p = exp(-d^{1/3})); the
    pole guard excludes draws whose top eigenvalue reaches a.  The reported
    bound is the finite-sample theorem value c_delta eps^2 + 8 d^{3/2} p^{1/6}
    at delta = 1/n; at desk scales the empirical max is far smaller.
    """
    if p is None:
        p = math.exp(-(d ** (1.0 / 3.0)))
    zs = z_star(d, p)
    errors = []
    excluded = 0
    for i in range(n):
        W = sample_goe(d, _draw_rng(seed, i))
        eigs = np.linalg.eigvalsh(W)
        op = max(-eigs[0], eigs[-1])
        if op > zs or a <= eigs[-1] + POLE_GUARD:
            excluded += 1
            continue
        errors.append(abs(stieltjes_from_eigenvalues(eigs, a) - semicircle_stieltjes(a)))
    delta = 1.0 / n
    eps_bar_sq = 1.0 / (d * (a - zs) ** 2)
    c_delta = 4.0 * math.sqrt(2.0) + 2.0 * math.sqrt(math.log(2.0 / delta))
    bound = c_delta * eps_bar_sq + 8.0 * d ** 1.5 * p ** (1.0 / 6.0)
    empirical = float(max(errors)) if errors else float("nan")
    return TrialReport(
        claim=claim,
        n=n,
        statistic="max_error",
        empirical=empirical,
        bound=bound,
        half_width=0.0,
        passed=None if len(errors) < 1 else bool(empirical <= bound),
        excluded=excluded,
        seed=seed,
        details={
            "d": d,
            "a": a,
            "p": p,
            "z_star": zs,
            "mean_error": float(np.mean(errors)) if errors else float("nan"),
        },
    )


def stieltjes_scaling_trial(a, n, seed=0, d_small=1000, d_large=4000,
                            claim="stieltjes_scaling", ratio_band=(2.5, 6.5)):
    """Ratio of mean Stieltjes errors at two dimensions; ~1/d decay means ~4x."""
    means = {}
    for tag, d in (("small", d_small), ("large", d_large)):
        errs = []
        for i in range(n):
            W = sample_goe(d, _draw_rng(seed + (0 if tag == "small" else 1), i))
            eigs = np.linalg.eigvalsh(W)
            if a <= eigs[-1] + POLE_GUARD:
                continue
            errs.append(abs(stieltjes_from_eigenvalues(eigs, a) - semicircle_stieltjes(a)))
        means[tag] = float(np.mean(errs))
    ratio = means["small"] / means["large"]
    lo, hi = ratio_band
    return TrialReport(
        claim=claim,
        n=2 * n,
        statistic="error_ratio",
        empirical=float(ratio),
        bound=hi,
        half_width=0.0,
        passed=bool(lo <= ratio <= hi),
        seed=seed,
        details={"d_small": d_small, "d_large": d_large, "band": [lo, hi], **means},
    )


def gauss_quadratic_trial(v1, v2, d, n, seed=0, bound=0.05,
                          claim="gauss_quadratic", chunk=1000):
    """Empirical mean of W v1 v2^T W against v2 v1^T + <v1, v2> I.

    Uses the unnormalized convention (unit-variance off-diagonal entries),
    i.e. sqrt(d) times the 1/d-normalized ensemble.  Reports the max-abs
    entry error; the per-entry t-scores ride along in the details.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    sum_ab = np.zeros((d, d))
    sumsq_ab = np.zeros((d, d))
    done = 0
    chunk_idx = 0
    while done < n:
        m = min(chunk, n - done)
        rng = _draw_rng(seed, chunk_idx)
        X = rng.standard_normal((m, d, d))
        W = (X + X.transpose(0, 2, 1)) / math.sqrt(2.0)   # variance-1 off-diagonal
        a = np.einsum("mij,j->mi", W, v1)
        b = np.einsum("mij,j->mi", W, v2)
        outer = np.einsum("mi,mj->mij", a, b)
        sum_ab += outer.sum(axis=0)
        sumsq_ab += (outer ** 2).sum(axis=0)
        done += m
        chunk_idx += 1
    mean = sum_ab / n
    var = np.maximum(sumsq_ab / n - mean ** 2, 0.0)
    stderr = np.sqrt(var / n)
    closed = np.outer(v2, v1) + float(v1 @ v2) * np.eye(d)
    err = np.abs(mean - closed)
    max_err = float(err.max())
    max_t = float(np.max(err / np.maximum(stderr, 1e-300)))
    return TrialReport(
        claim=claim,
        n=n,
        statistic="max_abs_error",
        empirical=max_err,
        bound=bound,
        half_width=float(3.0 * stderr.max()) if n < 30 else 0.0,
        passed=verdict(max_err, bound, 0.0, n),
        seed=seed,
        details={"d": d, "max_t_score": max_t, "max_stderr": float(stderr.max())},
    )


def conditional_cov_trial(queries, u, lam, n, seed=0, claim="conditional_likelihood",
                          chunk=2000, cov_tol=0.02, t_limit=4.0):
    """Empirical conditional response moments for a fixed orthonormal query
    sequence against their closed forms.

    Responses are w_i = P_{i-1} (W + lam u u^T) v_i over n independent W
    draws.  Checks: per-step mean within t_limit standard errors entrywise;
    covariance within cov_tol in Frobenius norm of P(I + v v^T)P / d;
    cross-step covariances within t_limit standard errors of zero; every
    response orthogonal to the span of the preceding queries.
    """
    V = np.asarray(queries, dtype=np.float64)
    d, m_steps = V.shape
    u = np.asarray(u, dtype=np.float64)
    projectors = []
    for i in range(m_steps):
        F = V[:, :i]
        projectors.append(np.eye(d) - F @ F.T)

    sums = [np.zeros(d) for _ in range(m_steps)]
    outers = [np.zeros((d, d)) for _ in range(m_steps)]
    sumsq = [np.zeros(d) for _ in range(m_steps)]
    pair_keys = [(i, j) for i in range(m_steps) for j in range(i + 1, m_steps)]
    cross = {key: np.zeros((d, d)) for key in pair_keys}
    cross_sq = {key: np.zeros((d, d)) for key in pair_keys}
    kernel_leak = 0.0

    spike = lam * np.outer(u, u)
    done = 0
    chunk_idx = 0
    while done < n:
        m = min(chunk, n - done)
        rng = _draw_rng(seed, chunk_idx)
        X = rng.standard_normal((m, d, d))
        W = (X + X.transpose(0, 2, 1)) / math.sqrt(2.0 * d)
        responses = []
        for i in range(m_steps):
            Mv = np.einsum("mij,j->mi", W, V[:, i]) + spike @ V[:, i]
            w = Mv @ projectors[i].T
            responses.append(w)
            sums[i] += w.sum(axis=0)
            sumsq[i] += (w ** 2).sum(axis=0)
            outers[i] += np.einsum("mi,mj->ij", w, w)
            if i > 0:
                kernel_leak = max(kernel_leak, float(np.abs(w @ V[:, :i]).max()))
        for (i, j) in pair_keys:
            prod = np.einsum("mi,mj->ij", responses[i], responses[j])
            cross[(i, j)] += prod
            cross_sq[(i, j)] += np.einsum("mi,mj->ij", responses[i] ** 2, responses[j] ** 2)
        done += m
        chunk_idx += 1

    reports = []
    max_mean_t = 0.0
    max_cov_frob = 0.0
    for i in range(m_steps):
        P = projectors[i]
        v = V[:, i]
        mean_theory = lam * float(u @ v) * (P @ u)
        mean_hat = sums[i] / n
        var_hat = np.maximum(sumsq[i] / n - mean_hat ** 2, 0.0)
        stderr = np.sqrt(var_hat / n)
        t = np.abs(mean_hat - mean_theory) / np.maximum(stderr, 1e-300)
        max_mean_t = max(max_mean_t, float(t.max()))
        cov_hat = outers[i] / n - np.outer(mean_hat, mean_hat)
        cov_theory = P @ (np.eye(d) + np.outer(v, v)) @ P / d
        max_cov_frob = max(max_cov_frob, float(np.linalg.norm(cov_hat - cov_theory)))

    max_cross_t = 0.0
    for (i, j) in pair_keys:
        mean_i, mean_j = sums[i] / n, sums[j] / n
        c_hat = cross[(i, j)] / n - np.outer(mean_i, mean_j)
        second = cross_sq[(i, j)] / n
        var_prod = np.maximum(second - (cross[(i, j)] / n) ** 2, 0.0)
        stderr = np.sqrt(var_prod / n)
        t = np.abs(c_hat) / np.maximum(stderr, 1e-300)
        max_cross_t = max(max_cross_t, float(t.max()))

    base = {"d": d, "steps": m_steps, "lam": lam}
    reports.append(TrialReport(
        claim=f"{claim}_mean", n=n, statistic="max_t_score",
        empirical=max_mean_t, bound=t_limit, half_width=0.0,
        passed=verdict(max_mean_t, t_limit, 0.0, n), seed=seed, details=base,
    ))
    reports.append(TrialReport(
        claim=f"{claim}_cov", n=n, statistic="max_frobenius_error",
        empirical=max_cov_frob, bound=cov_tol, half_width=0.0,
        passed=verdict(max_cov_frob, cov_tol, 0.0, n), seed=seed, details=base,
    ))
    reports.append(TrialReport(
        claim=f"{claim}_cross", n=n, statistic="max_t_score",
        empirical=max_cross_t, bound=t_limit, half_width=0.0,
        passed=verdict(max_cross_t, t_limit, 0.0, n), seed=seed, details=base,
    ))
    reports.append(TrialReport(
        claim=f"{claim}_kernel", n=n, statistic="max_abs_leak",
        empirical=kernel_leak, bound=1e-8, half_width=0.0,
        passed=verdict(kernel_leak, 1e-8, 0.0, n), seed=seed, details=base,
    ))
    return reports


def eigengap_trial(d, r, gap, gamma, n, seed=0, claim="eigengap"):
    """Failure frequency of the finite-sample eigengap event."""
    from .rmt import check_egood

    misses = 0
    for i in range(n):
        inst_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        inst = make_instance(d, r, gap, inst_seed)
        if not check_egood(inst, gamma):
            misses += 1
    return frequency_report(
        claim, misses, n, bound=0.1, seed=seed,
        details={"d": d, "r": r, "gap": gap, "gamma": gamma,
                 "statistic_note": "failure frequency of the eigengap event"},
    )


def biggap_event_trial(d, n, seed=0, r=1, claim="biggap_event"):
    """Failure frequency of the large-spike event at lam = 6 (gap = 25/37).

    Event: ||W|| <= 3, lam_r(M) - ||W|| >= lam/2, and 1 - gap_r(M) <= 2/lam.
    """
    gap = 25.0 / 37.0
    lam = lambda_from_gap(gap)
    misses = 0
    for i in range(n):
        inst_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        inst = make_instance(d, r, gap, inst_seed)
        evals = inst.eigenvalues()
        sig = singular_values_from_eigenvalues(evals)
        gap_r = (sig[r - 1] - sig[r]) / sig[r - 1]
        ok = (
            inst.w_op_norm <= 3.0
            and evals[r - 1] - inst.w_op_norm >= lam / 2.0
            and 1.0 - gap_r <= 2.0 / lam
        )
        misses += not ok
    return frequency_report(
        claim, misses, n, bound=0.1, seed=seed, details={"d": d, "r": r, "lam": lam},
    )
