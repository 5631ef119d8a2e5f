"""Matrix-vector oracle sessions: the only channel between solvers and M.

A session owns a hidden instance and answers unit-vector queries, either
with the raw product ``M v`` or, in projected mode, with the component of
``M v`` orthogonal to everything queried so far.  Batch sessions reveal a
round's responses only once all of its queries are in.  Evaluation against
the planted frame happens in :func:`finalize`, which solver code never
calls: solvers receive a :class:`QueryChannel` exposing queries alone.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .rmt import (
    abs_quadratic_from_eigensystem,
    check_egood,
    singular_values_from_eigenvalues,
)

DEFAULT_EPSILON = 1.0 / 12.0   # the (1 - gap/12) success threshold

UNIT_NORM_TOL = 1e-10
DEGENERATE_TOL = 1e-8


class BudgetExhaustedError(RuntimeError):
    """All T*B queries have been spent."""


class DegenerateQueryError(ValueError):
    """Query lies in the span of previous queries (projected mode)."""


class BatchProtocolError(RuntimeError):
    """Single queries on a batch session, or a round of the wrong size."""


class UnsupportedModeError(RuntimeError):
    pass


def orthonormalize_against(v, basis, tol=DEGENERATE_TOL):
    """Project v off the columns of basis (classical Gram-Schmidt, twice)
    and renormalize.  Returns None if the residual norm falls below tol."""
    w = v.astype(np.float64, copy=True)
    if basis is not None and basis.shape[1] > 0:
        w -= basis @ (basis.T @ w)
        w -= basis @ (basis.T @ w)
    nrm = np.linalg.norm(w)
    if nrm < tol:
        return None
    return w / nrm


@dataclass
class TranscriptEntry:
    index: int
    round: int
    query: np.ndarray
    response: np.ndarray


@dataclass
class EvaluationReport:
    """Outcome of judging a candidate frame against the hidden instance."""

    quad_value: float
    target: float
    success: bool
    overlap_spectrum: np.ndarray
    queries_used: int
    epsilon: float
    sigma_sum: float
    gap: float
    egood: bool

    def to_dict(self):
        return {
            "quad_value": self.quad_value,
            "target": self.target,
            "success": self.success,
            "overlap_spectrum": [float(x) for x in self.overlap_spectrum],
            "queries_used": self.queries_used,
            "epsilon": self.epsilon,
            "sigma_sum": self.sigma_sum,
            "gap": self.gap,
            "egood": self.egood,
        }


class OracleSession:
    """Sequential, single-owner query session against one hidden instance."""

    def __init__(self, instance, budget, mode="raw", batch_size=1):
        if budget < 1:
            raise ValueError(f"budget must be >= 1, got {budget}")
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        if mode not in ("raw", "projected"):
            raise ValueError(f"unknown mode {mode!r}")
        self._instance = instance
        self.mode = mode
        self.budget = int(budget)
        self.batch_size = int(batch_size)
        self.transcript: list[TranscriptEntry] = []
        self._frame = np.empty((instance.d, 0))

    # -- introspection ------------------------------------------------------

    @property
    def d(self):
        return self._instance.d

    @property
    def queries_total(self):
        return self.budget * self.batch_size

    @property
    def queries_used(self):
        return len(self.transcript)

    @property
    def queries_remaining(self):
        return self.queries_total - self.queries_used

    @property
    def frame(self):
        """Orthonormalized accumulation of the queries seen so far."""
        return self._frame

    def channel(self):
        """Capability object handed to solvers: queries only."""
        return QueryChannel(self)

    # -- querying -----------------------------------------------------------

    def query(self, v):
        """Submit one unit-norm query; only valid when batch_size == 1."""
        if self.batch_size != 1:
            raise BatchProtocolError(
                f"session runs rounds of {self.batch_size} queries; use query_round"
            )
        return self._answer(v)

    def query_round(self, vectors):
        """Submit a full round of batch_size queries; responses come back together."""
        vectors = list(vectors)
        if len(vectors) != self.batch_size:
            raise BatchProtocolError(
                f"round needs exactly {self.batch_size} queries, got {len(vectors)}"
            )
        if self.queries_remaining < self.batch_size:
            raise BudgetExhaustedError(
                f"budget of {self.queries_total} queries exhausted"
            )
        return [self._answer(v) for v in vectors]

    def _answer(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.d,):
            raise ValueError(f"query must have shape ({self.d},)")
        if abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
            raise ValueError("query must have unit norm")
        if self.queries_used >= self.queries_total:
            raise BudgetExhaustedError(f"budget of {self.queries_total} queries exhausted")

        if self.mode == "raw":
            w = self._instance.matvec(v)
            vt = orthonormalize_against(v, self._frame)
            if vt is not None:
                self._frame = np.column_stack([self._frame, vt])
        else:
            vt = orthonormalize_against(v, self._frame)
            if vt is None:
                raise DegenerateQueryError("query lies in the span of previous queries")
            m = self._instance.matvec(vt)
            w = m - self._frame @ (self._frame.T @ m)
            self._frame = np.column_stack([self._frame, vt])

        idx = self.queries_used
        self.transcript.append(
            TranscriptEntry(index=idx, round=idx // self.batch_size, query=v.copy(), response=w)
        )
        return w.copy()

    # -- instrumentation (test/evaluation surface, never for solvers) --------

    def conditional_moments(self, u, v):
        """Theoretical mean and covariance of the next projected response.

        For a hypothetical unit spike direction u and a next query v already
        orthonormal to the transcript: mean = lam (u.v) P u and covariance
        (1/d) P (I + v v^T) P, with P the projector off the current frame.
        """
        if self.mode != "projected":
            raise UnsupportedModeError("conditional moments need a projected session")
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        for x in (u, v):
            if x.shape != (self.d,) or abs(np.linalg.norm(x) - 1.0) > 1e-8:
                raise ValueError("u and v must be unit vectors of the session dimension")
        F = self._frame
        if F.shape[1] and np.max(np.abs(F.T @ v)) > DEGENERATE_TOL:
            raise ValueError("v must already be orthonormalized against the transcript")
        d = self.d
        P = np.eye(d) - F @ F.T
        mean = self._instance.lam * float(u @ v) * (P @ u)
        cov = P @ (np.eye(d) + np.outer(v, v)) @ P / d
        return mean, (cov + cov.T) / 2.0

    def finalize(self, V_hat, epsilon=DEFAULT_EPSILON):
        """Judge a candidate frame against the hidden instance.

        Computes the abs(M) quadratic value, the (1 - epsilon*gap) target,
        and the overlap spectrum with the planted frame.  On instances where
        the finite-sample eigengap event holds, the near-optimality =>
        overlap reduction is asserted for every intermediate rank.
        """
        inst = self._instance
        V_hat = np.asarray(V_hat, dtype=np.float64)
        if V_hat.ndim == 1:
            V_hat = V_hat[:, None]
        if V_hat.shape != (inst.d, inst.r):
            raise ValueError(f"candidate must have shape ({inst.d}, {inst.r})")
        gram = V_hat.T @ V_hat
        if np.max(np.abs(gram - np.eye(inst.r))) > 1e-8:
            raise ValueError("candidate frame is not orthonormal")

        vals, vecs = inst.eigensystem()
        sig = singular_values_from_eigenvalues(vals)
        sigma_sum = float(sig[: inst.r].sum())
        quad = abs_quadratic_from_eigensystem(vals, vecs, V_hat)
        if quad > sigma_sum + 1e-8:
            raise RuntimeError(f"quad value {quad} exceeds top-{inst.r} mass {sigma_sum}")

        target = (1.0 - epsilon * inst.gap) * sigma_sum
        overlaps = np.linalg.svd(inst.U.T @ V_hat, compute_uv=False) ** 2
        overlaps = np.clip(overlaps, 0.0, 1.0)

        egood = check_egood(inst, 0.5)
        if egood:
            for r_prime in range(1, inst.r + 1):
                thr = (1.0 - (inst.r + 1 - r_prime) * inst.gap / (6.0 * inst.r)) * sigma_sum
                if quad >= thr and overlaps[r_prime - 1] < inst.gap / 4.0 - 1e-9:
                    raise RuntimeError(
                        "reduction violated: near-optimal frame with overlap "
                        f"{overlaps[r_prime - 1]} < gap/4 at rank {r_prime}"
                    )

        return EvaluationReport(
            quad_value=quad,
            target=float(target),
            success=bool(quad >= target),
            overlap_spectrum=overlaps,
            queries_used=self.queries_used,
            epsilon=float(epsilon),
            sigma_sum=sigma_sum,
            gap=inst.gap,
            egood=egood,
        )

    def frame_overlaps(self, u):
        """Per-column overlaps of the orthonormalized query frame with u."""
        return self._frame.T @ np.asarray(u, dtype=np.float64)


class QueryChannel:
    """Query-only facade over a session; this is all a solver ever holds."""

    def __init__(self, session):
        self._session = session

    @property
    def d(self):
        return self._session.d

    @property
    def batch_size(self):
        return self._session.batch_size

    @property
    def queries_used(self):
        return self._session.queries_used

    @property
    def queries_remaining(self):
        return self._session.queries_remaining

    def query(self, v):
        return self._session.query(v)

    def query_round(self, vectors):
        return self._session.query_round(vectors)


class ReconstructingChannel:
    """Raw-response view over a projected session.

    Recovers the full product M v from projected responses: the caller
    already knows M on the span of its past queries, so the removed
    component can be added back.  Running a raw-mode solver through this
    wrapper on a projected session is information-equivalent to raw mode.
    """

    def __init__(self, channel):
        self._inner = channel
        d = channel.d
        self._F = np.empty((d, 0))   # orthonormalized past queries
        self._MF = np.empty((d, 0))  # reconstructed full responses M @ F

    @property
    def d(self):
        return self._inner.d

    @property
    def batch_size(self):
        return self._inner.batch_size

    @property
    def queries_used(self):
        return self._inner.queries_used

    @property
    def queries_remaining(self):
        return self._inner.queries_remaining

    def query(self, v):
        v = np.asarray(v, dtype=np.float64)
        coeff = self._F.T @ v if self._F.shape[1] else np.zeros(0)
        vt = orthonormalize_against(v, self._F)
        if vt is None:
            raise DegenerateQueryError("query lies in the span of previous queries")
        rho = float(vt @ v)
        w_proj = self._inner.query(vt)
        mv_t = w_proj + self._F @ (self._MF.T @ vt)
        mv = self._MF @ coeff + rho * mv_t if coeff.size else rho * mv_t
        self._F = np.column_stack([self._F, vt])
        self._MF = np.column_stack([self._MF, mv_t])
        return mv

    def query_round(self, vectors):
        return [self.query(v) for v in vectors]


def open_session(instance, budget, mode="raw", batch_size=1):
    """Open a query session with an armed budget of `budget` rounds of
    `batch_size` queries each."""
    return OracleSession(instance, budget=budget, mode=mode, batch_size=batch_size)


def dump_transcript(session, fh):
    """Write the transcript as JSON lines: {index, round, query, response}."""
    for entry in session.transcript:
        fh.write(
            json.dumps(
                {
                    "index": entry.index,
                    "round": entry.round,
                    "query": [float(x) for x in entry.query],
                    "response": [float(x) for x in entry.response],
                }
            )
            + "\n"
        )


def transcript_text(session):
    import io as _io

    buf = _io.StringIO()
    dump_transcript(session, buf)
    return buf.getvalue()
