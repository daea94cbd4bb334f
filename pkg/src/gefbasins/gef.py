"""Gaussian entire functions: sampling, evaluation and covariance kernels.

A sample stores the coefficients ``xi_k`` of ``f(z) = sum xi_k z^k / sqrt(k!)``.
All evaluation is done on the *scaled* function ``f(z) exp(-|z|^2/2)``, whose
modulus is ``exp(U(z))``; this keeps every intermediate quantity of order one
no matter how far from the origin ``z`` is, and the ratios ``f'/f``, ``f''/f``
are unchanged by the scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.special import gammaln

from .errors import CapacityError, DomainError

__all__ = [
    "GefSample",
    "FieldJet",
    "truncation_degree",
    "complex_gaussians",
    "sample_gef",
    "make_specimen",
    "eval_jet",
    "scaled_values",
    "translate_eval",
    "taylor_coefficients",
    "kernel_f",
    "kernel_xi",
    "coeff_covariance_bound",
    "sample_manifest",
    "sample_from_manifest",
]

DEFAULT_TAIL_TOL = 1e-12
MAX_DEGREE = 10**6

KIND_RANDOM = "random"
KIND_RING = "specimen_ring"
KIND_DRIFT = "specimen_drift"


@dataclass(frozen=True, eq=False)
class GefSample:
    """A truncated Taylor series together with its validity certificate.

    Attributes
    ----------
    coefficients : ndarray of complex
        ``xi_0 .. xi_N``; entry ``k`` multiplies ``z**k / sqrt(k!)``.
        The array is read-only.
    valid_radius : float
        Evaluation is refused outside ``|z| <= valid_radius``.
    tail_tol : float
        For random samples, ``sum_{k>N} valid_radius**k / sqrt(k!)`` is at
        most this value.
    seed : int
        64-bit token the coefficients were derived from (0 for specimens).
    kind : str
        ``"random"``, ``"specimen_ring"`` or ``"specimen_drift"``.
    params : dict
        Specimen parameters (``n``, ``R``, ``delta``, ``factor``).
    """

    coefficients: np.ndarray
    valid_radius: float
    tail_tol: float
    seed: int = 0
    kind: str = KIND_RANDOM
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.complex128)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coefficients must be a non-empty 1-d array")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if not self.valid_radius > 0:
            raise ValueError("valid_radius must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        support = np.flatnonzero(c)
        support.setflags(write=False)
        object.__setattr__(self, "_support", support)

    @property
    def degree(self) -> int:
        return self.coefficients.size - 1

    @property
    def support(self) -> np.ndarray:
        """Indices of the non-zero coefficients."""
        return self._support

    @property
    def is_sparse(self) -> bool:
        return self.degree > 64 and self._support.size * 4 <= self.degree + 1

    def check_domain(self, z) -> None:
        r = np.max(np.abs(z)) if np.size(z) else 0.0
        if not r <= self.valid_radius * (1 + 1e-12):
            raise DomainError(
                f"|z| = {r:.6g} exceeds valid radius {self.valid_radius:.6g}"
            )


@dataclass(frozen=True)
class FieldJet:
    """Values of f, its first two derivatives and the potential at ``at``.

    ``grad_U`` encodes the vector ``(U_x, U_y)`` as ``U_x + i U_y``.  Where
    ``at_zero`` is set, ``U`` is ``-inf`` and ``grad_U``/``hessian_det`` are
    NaN.  The ``*_scaled`` entries are multiplied by ``exp(-|z|^2/2)``.
    """

    at: np.ndarray
    f: np.ndarray
    f_prime: np.ndarray
    f_second: np.ndarray
    U: np.ndarray
    grad_U: np.ndarray
    hessian_det: np.ndarray
    at_zero: np.ndarray
    f_scaled: np.ndarray
    f_prime_scaled: np.ndarray
    f_second_scaled: np.ndarray


def _log_weights(radius: float, kmax: int) -> np.ndarray:
    k = np.arange(kmax + 1, dtype=float)
    return k * math.log(radius) - 0.5 * gammaln(k + 1)


def truncation_degree(valid_radius: float, tail_tol: float, max_degree: int = MAX_DEGREE) -> int:
    """Least ``N`` with ``sum_{k>N} R^k / sqrt(k!) <= tail_tol``.

    Terms are summed exactly up to an index past which consecutive ratios
    ``R / sqrt(k+1)`` stay below one half; the remainder is bounded by twice
    its first term.
    """
    if not valid_radius > 0:
        raise ValueError("valid_radius must be positive")
    if not tail_tol > 0:
        raise ValueError("tail_tol must be positive")
    log_tol = math.log(tail_tol)
    # ratio R/sqrt(k+1) < 1/2 for every k >= k_half
    k_half = int(math.floor(4.0 * valid_radius**2))
    m = max(k_half, 8)
    while True:
        if m > 4 * max_degree + 64:
            raise CapacityError(
                f"truncation degree would exceed the cap {max_degree}"
            )
        lw = _log_weights(valid_radius, m + 1)
        if lw[m + 1] < log_tol - 40.0:
            break
        m *= 2
    # log of sum_{k>N} w_k for N = 0..m, with the geometric bound past m
    tail_beyond = math.log(2.0) + lw[m + 1]
    suffix = np.logaddexp.accumulate(lw[m:0:-1])[::-1]  # suffix[j] = log sum_{k=j+1..m}
    tails = np.logaddexp(suffix, tail_beyond)
    ok = np.flatnonzero(tails <= log_tol)
    n = int(ok[0]) if ok.size else m
    if n > max_degree:
        raise CapacityError(f"truncation degree {n} exceeds the cap {max_degree}")
    return n


def complex_gaussians(seed: int, count: int) -> np.ndarray:
    """Standard complex Gaussians keyed by ``(seed, index)``.

    Entry ``k`` is built from the ``k``-th Philox 4x64 counter block alone, so
    any prefix of the stream is independent of ``count``.  Box-Muller on two
    53-bit uniforms gives density ``exp(-|z|^2) / pi``.
    """
    if count <= 0:
        return np.zeros(0, dtype=np.complex128)
    bits = np.random.Philox(key=int(seed) % 2**64)
    raw = bits.random_raw(4 * count).reshape(count, 4)
    scale = 2.0**-53
    u1 = ((raw[:, 0] >> np.uint64(11)).astype(float) + 0.5) * scale
    u2 = (raw[:, 1] >> np.uint64(11)).astype(float) * scale
    return np.sqrt(-np.log(u1)) * np.exp(2j * np.pi * u2)


def sample_gef(seed: int, valid_radius: float, tail_tol: float = DEFAULT_TAIL_TOL,
               max_degree: int = MAX_DEGREE) -> GefSample:
    """Draw a Gaussian entire function certified on ``|z| <= valid_radius``."""
    if not valid_radius > 0:
        raise ValueError("valid_radius must be positive")
    n = truncation_degree(valid_radius, tail_tol, max_degree)
    xi = complex_gaussians(seed, n + 1)
    return GefSample(xi, float(valid_radius), float(tail_tol), int(seed) % 2**64, KIND_RANDOM)


def make_specimen(kind: str, n: int, delta: float | None = None, factor: bool = True) -> GefSample:
    """Deterministic fields built around ``z**n / sqrt(n!)``, with ``R = sqrt(n)``.

    ``"ring"``: ``z^n/sqrt(n!) (1 + z/(10R))``; ``factor=False`` drops the
    second factor, leaving the pure monomial.

    ``"drift"``: ``z^n/sqrt(n!) exp(z R^(delta-1) - R^delta)`` with the
    exponential replaced by its Taylor polynomial of degree ``ceil(20 R^delta)``;
    certified on ``|z| <= 2R``.
    """
    n = int(n)
    if n <= 0:
        raise ValueError("n must be a positive integer")
    R = math.sqrt(n)
    if kind in ("ring", KIND_RING):
        coef = np.zeros(n + 2, dtype=np.complex128)
        coef[n] = 1.0
        if factor:
            coef[n + 1] = math.sqrt(n + 1) / (10.0 * R)
        else:
            coef = coef[: n + 1]
        return GefSample(coef, 3.0 * R + 10.0, 0.0, 0, KIND_RING,
                         {"n": n, "R": R, "factor": bool(factor)})
    if kind in ("drift", KIND_DRIFT):
        if delta is None or not 0 < delta < 1:
            raise ValueError("drift specimen needs 0 < delta < 1")
        rd = R**delta
        M = int(math.ceil(20.0 * rd))
        m = np.arange(M + 1, dtype=float)
        log_a = (-m * math.log(R) + 0.5 * (gammaln(n + m + 1) - gammaln(n + 1))
                 - rd + delta * m * math.log(R) - gammaln(m + 1))
        coef = np.zeros(n + M + 1, dtype=np.complex128)
        coef[n:] = np.exp(log_a)
        return GefSample(coef, 2.0 * R, 0.0, 0, KIND_DRIFT,
                         {"n": n, "R": R, "delta": float(delta), "M": M})
    raise ValueError(f"unknown specimen kind {kind!r}")


# terms with |k - |z|^2| > WIDTH_C |z| + WIDTH_0 are below exp(-45) times the
# largest one (log u_k is close to a parabola of curvature 1/(2|z|^2) in k)
WIDTH_C = 14.0
WIDTH_0 = 20.0


@nb.njit(cache=True)
def _dense_scaled_kernel(xi, z, out):
    N = xi.size - 1
    nder = out.shape[0] - 1
    inv = np.empty(N + 1)
    for k in range(N + 1):
        inv[k] = 1.0 / math.sqrt(k + 1)
    c1 = np.zeros(N + 1, dtype=np.complex128)
    c2 = np.zeros(N + 1, dtype=np.complex128)
    for k in range(N):
        c1[k] = xi[k + 1] * math.sqrt(k + 1)
    for k in range(N - 1):
        c2[k] = xi[k + 2] * math.sqrt((k + 1) * (k + 2))
    for n in range(z.size):
        zn = z[n]
        zr = zn.real
        zi = zn.imag
        r2 = zr * zr + zi * zi
        r = math.sqrt(r2)
        k0 = max(0, int(r2 - WIDTH_C * r - WIDTH_0))
        k1 = min(N, int(r2 + WIDTH_C * r + WIDTH_0) + 1)
        if k0 == 0:
            ur = math.exp(-0.5 * r2)
            ui = 0.0
        else:
            # u_k0 = exp(-r^2/2) z^k0 / sqrt(k0!) in polar form
            mag = math.exp(k0 * math.log(r) - 0.5 * math.lgamma(k0 + 1.0) - 0.5 * r2)
            ph = k0 * math.atan2(zi, zr)
            ur = mag * math.cos(ph)
            ui = mag * math.sin(ph)
        f0r = f0i = f1r = f1i = f2r = f2i = 0.0
        for k in range(k0, k1 + 1):
            a = xi[k]
            f0r += a.real * ur - a.imag * ui
            f0i += a.real * ui + a.imag * ur
            if nder >= 1:
                b = c1[k]
                f1r += b.real * ur - b.imag * ui
                f1i += b.real * ui + b.imag * ur
                if nder >= 2:
                    c = c2[k]
                    f2r += c.real * ur - c.imag * ui
                    f2i += c.real * ui + c.imag * ur
            s = inv[k]
            tr = (ur * zr - ui * zi) * s
            ui = (ur * zi + ui * zr) * s
            ur = tr
        out[0, n] = complex(f0r, f0i)
        if nder >= 1:
            out[1, n] = complex(f1r, f1i)
        if nder >= 2:
            out[2, n] = complex(f2r, f2i)


def _dense_scaled(xi: np.ndarray, z: np.ndarray, nder: int):
    """Scaled f and derivatives via ``u_k = exp(-|z|^2/2) z^k / sqrt(k!)``."""
    out = np.empty((nder + 1, z.size), dtype=np.complex128)
    _dense_scaled_kernel(xi, np.ascontiguousarray(z), out)
    return list(out)


def _sparse_scaled(xi: np.ndarray, support: np.ndarray, z: np.ndarray, nder: int):
    k = support.astype(float)[:, None]
    c = xi[support][:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(z.astype(np.complex128))[None, :]
        expo = np.where(k > 0, k * logz, 0.0) - 0.5 * gammaln(k + 1) - 0.5 * np.abs(z[None, :]) ** 2
        terms = c * np.exp(expo)
        F = [terms.sum(axis=0)]
        if nder >= 1:
            F.append(np.where(k > 0, terms * k / z[None, :], 0.0).sum(axis=0))
        if nder >= 2:
            F.append(np.where(k > 1, terms * k * (k - 1) / z[None, :] ** 2, 0.0).sum(axis=0))
    return F


def scaled_values(sample: GefSample, z, nder: int = 2, check: bool = True):
    """Return ``[f, f', f'']`` (up to order ``nder``) times ``exp(-|z|^2/2)``."""
    z = np.asarray(z, dtype=np.complex128)
    if check:
        sample.check_domain(z)
    flat = z.ravel()
    if sample.is_sparse and np.all(flat != 0):
        F = _sparse_scaled(sample.coefficients, sample.support, flat, nder)
    else:
        F = _dense_scaled(sample.coefficients, flat, nder)
    return [a.reshape(z.shape) for a in F]


def eval_jet(sample: GefSample, z) -> FieldJet:
    """Evaluate f, f', f'', U, grad U and the Hessian determinant at ``z``.

    Raises
    ------
    DomainError
        If any ``|z|`` exceeds the sample's valid radius.
    """
    z = np.asarray(z, dtype=np.complex128)
    F0, F1, F2 = scaled_values(sample, z, 2)
    at_zero = F0 == 0
    safe = np.where(at_zero, 1.0, F0)
    h = F1 / safe
    dh = F2 / safe - h * h
    with np.errstate(divide="ignore"):
        U = np.where(at_zero, -np.inf, np.log(np.abs(safe)))
    grad = np.where(at_zero, np.nan + 0j, np.conj(h) - z)
    det = np.where(at_zero, np.nan, 1.0 - np.abs(dh) ** 2)
    with np.errstate(over="ignore"):
        scale = np.exp(0.5 * np.abs(z) ** 2)
    return FieldJet(at=z, f=F0 * scale, f_prime=F1 * scale, f_second=F2 * scale,
                    U=U, grad_U=grad, hessian_det=det, at_zero=at_zero,
                    f_scaled=F0, f_prime_scaled=F1, f_second_scaled=F2)


def translate_eval(sample: GefSample, w, z):
    """``T_w f(z) = f(w+z) exp(-z conj(w)) exp(-|w|^2/2)``.

    The product is formed in the log domain from the scaled value of f at
    ``w + z`` so that no factor overflows.
    """
    w = np.asarray(w, dtype=np.complex128)
    z = np.asarray(z, dtype=np.complex128)
    p = w + z
    F0 = scaled_values(sample, p, 0)[0]
    with np.errstate(divide="ignore"):
        log_f = np.log(F0)
    expo = log_f + 0.5 * np.abs(p) ** 2 - z * np.conj(w) - 0.5 * np.abs(w) ** 2
    return np.exp(expo)


def taylor_coefficients(sample: GefSample, w, order: int, radius: float = 1.0,
                        points: int = 64) -> np.ndarray:
    """Normalized Taylor coefficients ``xi_k(w)``, ``k = 0..order``, of ``T_w f``.

    Extracted by the trapezoidal Cauchy integral (an FFT) on ``|z| = radius``.
    ``w`` may be an array; the result then has shape ``w.shape + (order+1,)``.
    """
    if order >= points:
        raise ValueError("need more quadrature points than coefficients")
    w = np.asarray(w, dtype=np.complex128)
    phi = 2 * np.pi * np.arange(points) / points
    zc = radius * np.exp(1j * phi)
    ww = w[..., None]
    p = ww + zc
    F0 = scaled_values(sample, p, 0)[0]
    vals = F0 * np.exp(0.5 * radius**2 - 1j * np.imag(zc * np.conj(ww)))
    b = np.fft.fft(vals, axis=-1)[..., : order + 1] / points
    k = np.arange(order + 1)
    return b * np.exp(0.5 * gammaln(k + 1)) / radius**k


def kernel_f(z1, z2):
    """Covariance ``E f(z1) conj(f(z2)) = exp(z1 conj(z2))``."""
    return np.exp(np.asarray(z1) * np.conj(z2))


def kernel_xi(z1, z2):
    """Covariance of ``f'(z) - conj(z) f(z)`` at two points."""
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    return (1.0 - np.abs(z1 - z2) ** 2) * np.exp(z1 * np.conj(z2))


def coeff_covariance_bound(j: int, k: int, w1, w2):
    """Upper bound ``5^((j+k)/2) exp(-|w1-w2|^2/4)`` on ``|E xi_j(w1) conj(xi_k(w2))|``."""
    if j < 0 or k < 0:
        raise ValueError("coefficient indices must be non-negative")
    return 5.0 ** (0.5 * (j + k)) * np.exp(-0.25 * np.abs(np.asarray(w1) - np.asarray(w2)) ** 2)


def sample_manifest(sample: GefSample) -> dict:
    """JSON-ready description; coefficients are re-derived, never stored."""
    return {
        "seed": int(sample.seed),
        "kind": sample.kind,
        "N": int(sample.degree),
        "valid_radius": float(sample.valid_radius),
        "tail_tol": float(sample.tail_tol),
        "params": dict(sample.params),
    }


def sample_from_manifest(doc: dict) -> GefSample:
    kind = doc["kind"]
    if kind == KIND_RANDOM:
        s = sample_gef(doc["seed"], doc["valid_radius"], doc["tail_tol"])
    elif kind == KIND_RING:
        s = make_specimen("ring", doc["params"]["n"], factor=doc["params"].get("factor", True))
    elif kind == KIND_DRIFT:
        s = make_specimen("drift", doc["params"]["n"], delta=doc["params"]["delta"])
    else:
        raise ValueError(f"unknown sample kind {kind!r}")
    if "N" in doc and int(doc["N"]) != s.degree:
        raise ValueError(f"manifest degree {doc['N']} does not match re-derived {s.degree}")
    return s
