"""Gaussian ensembles, planted low-rank deformations, and spectral helpers.

Everything here is deterministic given (inputs, seed).  Matrices are plain
numpy arrays; the only compound object is :class:`DeformedWignerInstance`,
which bundles the hidden matrix ``M = W + lam * U U^T`` with its planted
frame and parameters.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Dense eigensolvers only; experiments are desk-scale.
MAX_DENSE_DIM = 8192

# Strict pole guard for resolvent-type evaluations.
POLE_GUARD = 1e-9


class PoleDomainError(ValueError):
    """Evaluation point is at or below the top of the spectrum."""


def sample_goe(d, rng):
    """Draw a d x d GOE matrix: off-diagonal N(0, 1/d), diagonal N(0, 2/d).

    Built as (X + X^T) / sqrt(2 d) with X standard Gaussian, so the output
    is exactly (bitwise) symmetric.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    x = rng.standard_normal((d, d))
    return (x + x.T) / math.sqrt(2.0 * d)


def sample_stiefel(d, r, rng):
    """Draw a uniform d x r orthonormal frame.

    Gaussian matrix followed by thin QR; the R diagonal is forced positive
    so the output is a deterministic function of the Gaussian draw.
    """
    if not 1 <= r <= d:
        raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
    g = rng.standard_normal((d, r))
    q, rr = np.linalg.qr(g)
    signs = np.sign(np.diag(rr))
    signs[signs == 0.0] = 1.0
    return q * signs


def sample_sphere(d, rng):
    """Uniform point on the unit sphere in R^d."""
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def gap_from_lambda(lam):
    """Asymptotic relative eigengap of the deformed model at spike strength lam.

    gap = (lam - 1)^2 / (lam^2 + 1), valid for lam >= 1.
    """
    if lam < 1.0:
        raise ValueError(f"spike strength must be >= 1, got {lam}")
    return (lam - 1.0) ** 2 / (lam * lam + 1.0)


def lambda_from_gap(gap):
    """Spike strength achieving a prescribed asymptotic gap in (0, 1).

    Inverts gap_from_lambda: lam = (1 + sqrt(gap (2 - gap))) / (1 - gap).
    """
    if not 0.0 < gap < 1.0:
        raise ValueError(f"gap must lie in (0, 1), got {gap}")
    return (1.0 + math.sqrt(gap * (2.0 - gap))) / (1.0 - gap)


@dataclass
class DeformedWignerInstance:
    """Hidden matrix M = W + lam * U U^T plus its planted frame and parameters.

    Solvers must never see W or U; they reach M only through an oracle
    session.  The spectral quantities below are cached because evaluation
    (and only evaluation) keeps coming back for them.
    """

    d: int
    r: int
    lam: float
    gap: float
    seed: int
    W: np.ndarray
    U: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if abs(self.gap - gap_from_lambda(self.lam)) > 1e-12:
            raise ValueError("lam and gap are inconsistent")
        if self.U.shape != (self.d, self.r):
            raise ValueError("planted frame has wrong shape")

    def matvec(self, x):
        """M @ x without materializing M; x may be a vector or a block."""
        return self.W @ x + self.lam * (self.U @ (self.U.T @ x))

    def matrix(self):
        """Dense M, materialized on demand (instrumentation only)."""
        return self.W + self.lam * (self.U @ self.U.T)

    def eigenvalues(self):
        """Eigenvalues of M in descending order (cached)."""
        if "evals" not in self._cache:
            if "eigensystem" in self._cache:
                self._cache["evals"] = self._cache["eigensystem"][0]
            else:
                self._cache["evals"] = np.linalg.eigvalsh(self.matrix())[::-1]
        return self._cache["evals"]

    def eigensystem(self):
        """Full (eigenvalues desc, eigenvectors) of M (cached)."""
        if "eigensystem" not in self._cache:
            vals, vecs = np.linalg.eigh(self.matrix())
            self._cache["eigensystem"] = (vals[::-1], vecs[:, ::-1])
            self._cache["evals"] = self._cache["eigensystem"][0]
        return self._cache["eigensystem"]

    @property
    def w_op_norm(self):
        """Operator norm of the noise part W (cached)."""
        if "w_op" not in self._cache:
            wvals = np.linalg.eigvalsh(self.W)
            self._cache["w_op"] = float(max(-wvals[0], wvals[-1]))
        return self._cache["w_op"]


def make_instance(d, r, gap, seed):
    """Sample a deformed Wigner instance with independent W and U streams."""
    if not 1 <= r <= d:
        raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
    if d > MAX_DENSE_DIM:
        raise ValueError(f"d={d} exceeds dense cap {MAX_DENSE_DIM}")
    lam = lambda_from_gap(gap)
    ss_w, ss_u = np.random.SeedSequence(seed).spawn(2)
    W = sample_goe(d, np.random.default_rng(ss_w))
    U = sample_stiefel(d, r, np.random.default_rng(ss_u))
    return DeformedWignerInstance(d=d, r=r, lam=lam, gap=gap, seed=seed, W=W, U=U)


@dataclass
class SpectralSummary:
    eigenvalues: np.ndarray     # descending
    singular_values: np.ndarray  # descending magnitudes
    gap_r: float
    sigma_sum: float            # sum of the top r singular values
    op_norm_w: Optional[float] = None


def singular_values_from_eigenvalues(evals):
    """Magnitudes of the eigenvalues, sorted descending."""
    return np.sort(np.abs(np.asarray(evals)))[::-1]


def gap_r_from_eigenvalues(evals, r):
    """Relative gap (sigma_r - sigma_{r+1}) / sigma_r from an eigenvalue list."""
    sig = singular_values_from_eigenvalues(evals)
    if r >= sig.size:
        raise ValueError(f"need r < d, got r={r}, d={sig.size}")
    return float((sig[r - 1] - sig[r]) / sig[r - 1])


def spectral_summary(M, r, W=None):
    """Eigenvalues, singular values, relative gap at rank r, top-r mass.

    Pass W to include its operator norm in the summary (an instance-level
    quantity that cannot be recovered from M alone).
    """
    M = np.asarray(M)
    d = M.shape[0]
    if not 1 <= r < d:
        raise ValueError(f"need 1 <= r < d, got r={r}, d={d}")
    evals = np.linalg.eigvalsh(M)[::-1]
    sig = singular_values_from_eigenvalues(evals)
    op_w = None
    if W is not None:
        wvals = np.linalg.eigvalsh(W)
        op_w = float(max(-wvals[0], wvals[-1]))
    return SpectralSummary(
        eigenvalues=evals,
        singular_values=sig,
        gap_r=float((sig[r - 1] - sig[r]) / sig[r - 1]),
        sigma_sum=float(sig[:r].sum()),
        op_norm_w=op_w,
    )


def summarize_instance(instance):
    """Spectral summary of an instance, including the norm of its W part."""
    evals = instance.eigenvalues()
    sig = singular_values_from_eigenvalues(evals)
    r = instance.r
    return SpectralSummary(
        eigenvalues=evals,
        singular_values=sig,
        gap_r=float((sig[r - 1] - sig[r]) / sig[r - 1]),
        sigma_sum=float(sig[:r].sum()),
        op_norm_w=instance.w_op_norm,
    )


def abs_quadratic_form(M, V):
    """trace(V^T (M^2)^{1/2} V) via the eigendecomposition of M.

    The matrix absolute value is never formed densely; see
    abs_quadratic_from_eigensystem for the hot path with a cached
    decomposition.
    """
    M = np.asarray(M)
    vals, vecs = np.linalg.eigh(M)
    return abs_quadratic_from_eigensystem(vals, vecs, V)


def abs_quadratic_from_eigensystem(vals, vecs, V):
    V = np.asarray(V)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != vecs.shape[0]:
        raise ValueError("dimension mismatch between M and V")
    b = vecs.T @ V
    return float(np.abs(vals) @ (b * b).sum(axis=1))


def stieltjes_from_eigenvalues(evals, a):
    """(1/d) * sum_i 1 / (a - lambda_i), guarded strictly above the spectrum."""
    evals = np.asarray(evals)
    top = evals.max()
    if a <= top + POLE_GUARD:
        raise PoleDomainError(f"a={a} is not above the spectrum (max {top})")
    return float(np.mean(1.0 / (a - evals)))


def empirical_stieltjes(W, a):
    """Stieltjes transform of the empirical spectral measure of W at a."""
    return stieltjes_from_eigenvalues(np.linalg.eigvalsh(np.asarray(W)), a)


def semicircle_stieltjes(a):
    """Semicircle-law Stieltjes transform s(a) = (a - sqrt(a^2 - 4)) / 2.

    Restricted to the real branch a >= 2; satisfies s(lam + 1/lam) = 1/lam.
    """
    if a < 2.0:
        raise ValueError(f"real branch needs a >= 2, got {a}")
    return (a - math.sqrt(a * a - 4.0)) / 2.0


def check_egood(instance, gamma):
    """Finite-sample eigengap event for a deformed Wigner instance.

    True iff lam_r(M) clears the noise floor by (1-gamma) of the asymptotic
    margin and lam_1(M) stays below (1+gamma) of the asymptotic edge.  When
    true, the realized gap_r(M) is at least (1-gamma)/(1+gamma) * gap, which
    is verified on the spot.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    key = ("egood", gamma)
    if key in instance._cache:
        return instance._cache[key]
    evals = instance.eigenvalues()
    edge = instance.lam + 1.0 / instance.lam
    lower_ok = evals[instance.r - 1] >= instance.w_op_norm + (1.0 - gamma) * (edge - 2.0)
    upper_ok = evals[0] <= (1.0 + gamma) * edge
    ok = bool(lower_ok and upper_ok)
    if ok:
        realized = gap_r_from_eigenvalues(evals, instance.r)
        implied = (1.0 - gamma) / (1.0 + gamma) * instance.gap
        if realized < implied - 1e-9:
            raise RuntimeError(
                f"eigengap event held but gap_r(M)={realized} < implied bound {implied}"
            )
    instance._cache[key] = ok
    return ok


# -- instance serialization: JSON header line + raw little-endian f64 blocks --

_MAGIC = "spikelab-instance-v1"


def save_instance(instance, path_or_file):
    """Write an instance as a JSON header plus raw f64 blocks for W then U."""
    header = {
        "format": _MAGIC,
        "d": instance.d,
        "r": instance.r,
        "lambda": instance.lam,
        "gap": instance.gap,
        "seed": instance.seed,
    }
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "wb") if own else path_or_file
    try:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(instance.W, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(instance.U, dtype="<f8").tobytes())
    finally:
        if own:
            fh.close()


def load_instance(path_or_file):
    """Inverse of save_instance."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "rb") if own else path_or_file
    try:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != _MAGIC:
            raise ValueError("not a spikelab instance file")
        d, r = header["d"], header["r"]
        W = np.frombuffer(fh.read(d * d * 8), dtype="<f8").reshape(d, d).astype(np.float64)
        U = np.frombuffer(fh.read(d * r * 8), dtype="<f8").reshape(d, r).astype(np.float64)
    finally:
        if own:
            fh.close()
    return DeformedWignerInstance(
        d=d, r=r, lam=header["lambda"], gap=header["gap"], seed=header["seed"], W=W, U=U
    )


def instance_to_bytes(instance):
    buf = io.BytesIO()
    save_instance(instance, buf)
    return buf.getvalue()


def instance_from_bytes(blob):
    return load_instance(io.BytesIO(blob))
