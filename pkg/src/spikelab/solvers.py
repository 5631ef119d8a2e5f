"""Reference eigensolvers driven purely through a query channel.

Every routine here sees the hidden matrix only via unit-vector queries and
their responses; success is adjudicated elsewhere.  Block Krylov keeps its
state in a small class so sweep harnesses can evaluate Ritz candidates
round by round without extra queries.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .oracle import BudgetExhaustedError
from .rmt import sample_stiefel

BREAKDOWN_TOL = 1e-12
RANK_TOL = 1e-8


@dataclass
class SolverResult:
    v_hat: np.ndarray
    queries_used: int
    rayleigh: list = field(default_factory=list)
    wall_time: float = 0.0
    partial: bool = False

    def to_dict(self):
        return {
            "v_hat": self.v_hat.tolist(),
            "queries_used": self.queries_used,
            "rayleigh": [np.asarray(r).tolist() for r in self.rayleigh],
            "wall_time": self.wall_time,
            "partial": self.partial,
        }


def _orth_block(block, against=None, tol=RANK_TOL):
    """Orthonormalize the columns of block against `against` and each other.

    Columns whose residual drops below tol * ||block|| are dropped (rank
    collapse).  Classical projection applied twice, then QR with positive
    R diagonal for determinism.
    """
    w = block.astype(np.float64, copy=True)
    scale = np.linalg.norm(block)
    if scale == 0.0:
        return np.empty((block.shape[0], 0))
    if against is not None and against.shape[1] > 0:
        w -= against @ (against.T @ w)
        w -= against @ (against.T @ w)
    q, r = np.linalg.qr(w)
    keep = np.abs(np.diag(r)) > tol * scale
    q = q[:, keep]
    rd = np.diag(r)[keep]
    signs = np.sign(rd)
    signs[signs == 0.0] = 1.0
    return q * signs


def _query_block(channel, Q):
    """Query every column of an orthonormal block, honoring batch rounds."""
    cols = [Q[:, j] for j in range(Q.shape[1])]
    B = channel.batch_size
    if B == 1:
        return np.column_stack([channel.query(c) for c in cols])
    if len(cols) % B != 0:
        raise ValueError(
            f"block of {len(cols)} queries does not divide into rounds of {B}"
        )
    out = []
    for i in range(0, len(cols), B):
        out.extend(channel.query_round(cols[i : i + B]))
    return np.column_stack(out)


def power_method(channel, r, iters, rng):
    """Block power iteration with QR renormalization each step."""
    t0 = time.perf_counter()
    Q = sample_stiefel(channel.d, r, rng)
    rayleigh = []
    partial = False
    for _ in range(iters):
        try:
            Y = _query_block(channel, Q)
        except BudgetExhaustedError:
            partial = True
            break
        H = Q.T @ Y
        rayleigh.append(np.linalg.eigvalsh((H + H.T) / 2.0)[::-1])
        Q = _orth_block(Y)
        if Q.shape[1] < r:
            warnings.warn("power block lost rank; completing with random directions")
            Q = _complete_block(Q, r, rng)
    return SolverResult(
        v_hat=Q,
        queries_used=channel.queries_used,
        rayleigh=rayleigh,
        wall_time=time.perf_counter() - t0,
        partial=partial,
    )


def _complete_block(Q, r, rng):
    d = Q.shape[0]
    while Q.shape[1] < r:
        extra = _orth_block(rng.standard_normal((d, r - Q.shape[1])), against=Q)
        Q = np.column_stack([Q, extra])
    return Q[:, :r]


class BlockKrylovState:
    """Incremental block Krylov factorization fed by oracle queries.

    After j+1 rounds the accumulated basis spans the Krylov space
    span[G, MG, ..., M^j G] and the projection of M onto it is known from
    recorded responses alone, so Ritz extraction costs no further queries.
    """

    def __init__(self, channel, r, rng):
        self.channel = channel
        self.r = r
        self.rng = rng
        d = channel.d
        self.basis = np.empty((d, 0))
        self.images = np.empty((d, 0))   # M @ basis, from responses
        self._next = sample_stiefel(d, r, rng)
        self.rounds_done = 0
        self.exhausted = False

    @property
    def width(self):
        return self.basis.shape[1]

    def advance(self):
        """Query the next block; returns False once the space is exhausted."""
        if self.exhausted or self._next.shape[1] == 0:
            self.exhausted = True
            return False
        Q = self._next
        Y = _query_block(self.channel, Q)
        self.basis = np.column_stack([self.basis, Q])
        self.images = np.column_stack([self.images, Y])
        nxt = _orth_block(Y, against=self.basis)
        if nxt.shape[1] < Q.shape[1]:
            warnings.warn(
                f"Krylov block rank fell from {Q.shape[1]} to {nxt.shape[1]}"
            )
        self._next = nxt
        self.rounds_done += 1
        return True

    def ritz(self, k=None):
        """Top-k Ritz pairs of M restricted to the current basis."""
        k = self.r if k is None else k
        T = self.basis.T @ self.images
        T = (T + T.T) / 2.0
        vals, vecs = np.linalg.eigh(T)
        vals, vecs = vals[::-1], vecs[:, ::-1]
        k_eff = min(k, vals.size)
        V = self.basis @ vecs[:, :k_eff]
        if k_eff < k:
            warnings.warn("Krylov space thinner than requested rank; padding randomly")
            V = _complete_block(V, k, self.rng)
            vals = np.concatenate([vals[:k_eff], np.full(k - k_eff, np.nan)])
            return V, vals[:k]
        return V, vals[:k]


def block_krylov(channel, r, q, rng):
    """Randomized block Krylov with Rayleigh-Ritz extraction.

    Runs q+1 rounds of r queries (start block G, then images up to M^q G)
    and returns the top-r Ritz vectors of the projected matrix.
    """
    t0 = time.perf_counter()
    state = BlockKrylovState(channel, r, rng)
    rayleigh = []
    partial = False
    for _ in range(q + 1):
        try:
            if not state.advance():
                break
        except BudgetExhaustedError:
            partial = True
            break
        rayleigh.append(state.ritz(r)[1])
    if state.width == 0:
        raise RuntimeError("no Krylov rounds completed; budget too small")
    V, _ = state.ritz(r)
    return SolverResult(
        v_hat=V,
        queries_used=channel.queries_used,
        rayleigh=rayleigh,
        wall_time=time.perf_counter() - t0,
        partial=partial,
    )


class LanczosState:
    """Rank-one Lanczos recurrence with full reorthogonalization."""

    def __init__(self, channel, rng):
        self.channel = channel
        d = channel.d
        v = rng.standard_normal(d)
        self.Q = (v / np.linalg.norm(v))[:, None]
        self.alphas = []
        self.betas = []
        self._resid = None
        self.broke_down = False

    def advance(self):
        """One query step; returns False on breakdown."""
        if self.broke_down:
            return False
        if self._resid is None:
            v = self.Q[:, 0]
        else:
            r = self._resid
            r = r - self.Q @ (self.Q.T @ r)
            r = r - self.Q @ (self.Q.T @ r)
            beta = np.linalg.norm(r)
            if beta < BREAKDOWN_TOL:
                self.broke_down = True
                return False
            v = r / beta
            self.betas.append(float(beta))
            self.Q = np.column_stack([self.Q, v])
        w = self.channel.query(v)
        alpha = float(v @ w)
        self.alphas.append(alpha)
        prev = self.Q[:, -2] if self.Q.shape[1] > 1 else 0.0
        beta_prev = self.betas[-1] if self.betas else 0.0
        self._resid = w - alpha * v - beta_prev * prev
        return True

    def tridiagonal(self):
        m = len(self.alphas)
        T = np.diag(self.alphas)
        if self.betas:
            T += np.diag(self.betas[: m - 1], 1) + np.diag(self.betas[: m - 1], -1)
        return T

    def ritz(self):
        if not self.alphas:
            raise RuntimeError("no Lanczos steps completed")
        T = self.tridiagonal()
        vals, vecs = np.linalg.eigh(T)
        top = vecs[:, -1]
        v = self.Q[:, : len(self.alphas)] @ top
        return (v / np.linalg.norm(v))[:, None], float(vals[-1])


def lanczos(channel, q, rng):
    """Lanczos (rank-one): q+1 queries, top Ritz vector of the tridiagonal."""
    t0 = time.perf_counter()
    state = LanczosState(channel, rng)
    rayleigh = []
    partial = False
    for _ in range(q + 1):
        try:
            if not state.advance():
                break
        except BudgetExhaustedError:
            partial = True
            break
        rayleigh.append(np.array([state.ritz()[1]]))
    v_hat, _ = state.ritz()
    return SolverResult(
        v_hat=v_hat,
        queries_used=channel.queries_used,
        rayleigh=rayleigh,
        wall_time=time.perf_counter() - t0,
        partial=partial,
    )


def random_baseline(channel, r, rng):
    """Uniformly random frame; zero queries.  Null model for evaluations."""
    t0 = time.perf_counter()
    V = sample_stiefel(channel.d, r, rng)
    return SolverResult(
        v_hat=V,
        queries_used=0,
        rayleigh=[],
        wall_time=time.perf_counter() - t0,
    )


SOLVERS = {
    "power_method": power_method,
    "block_krylov": block_krylov,
    "lanczos": lanczos,
    "random_baseline": random_baseline,
}
