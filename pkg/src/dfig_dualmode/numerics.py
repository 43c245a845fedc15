"""Small dense linear algebra and fixed-step integration.

Everything here works on tiny fixed-size arrays (2x2, 4x4, 4x2) and is
pure: no module state, safe to call concurrently.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

__all__ = [
    "NumericsError",
    "SingularMatrixError",
    "UncontrollableError",
    "PlacementError",
    "NonFiniteStateError",
    "eig4",
    "inv4",
    "eig_sym2",
    "charpoly4",
    "ctrb",
    "place_poles",
    "match_spectra",
    "rk4_step",
    "golden_section",
]


class NumericsError(ArithmeticError):
    """Base class for failures of the numerical kernel."""


class SingularMatrixError(NumericsError):
    pass


class UncontrollableError(NumericsError):
    pass


class PlacementError(NumericsError):
    pass


class NonFiniteStateError(NumericsError):
    """Raised when an integration step produces NaN or Inf."""

    def __init__(self, t: float, state, message: str = "non-finite state"):
        self.t = float(t)
        self.state = np.array(state, dtype=float, copy=True)
        super().__init__(f"{message} at t={self.t:.6g}: {self.state!r}")


def _as_square(m, n: int) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def eig4(m) -> np.ndarray:
    """Eigenvalues of a real 4x4 matrix.

    Returns a complex array of length 4 with no particular ordering.
    Backed by LAPACK (Hessenberg reduction followed by shifted QR).
    """
    a = _as_square(m, 4)
    try:
        w = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"eigenvalue iteration did not converge: {exc}") from exc
    return w.astype(complex)


def inv4(m, rcond: float = 1e-12) -> np.ndarray:
    """Inverse of a 4x4 matrix.

    The matrix is rejected as singular when its 2-norm condition number
    exceeds ``1 / rcond``. (A determinant test misfires on matrices whose
    rows differ by orders of magnitude, which is typical of ``A - B K``.)
    """
    a = _as_square(m, 4)
    cond = float(np.linalg.cond(a))
    if not cond * rcond < 1.0:
        raise SingularMatrixError(f"matrix is numerically singular (condition number {cond:.3e})")
    return np.linalg.inv(a)


def eig_sym2(q1: float, q2: float, q3: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigendecomposition of ``[[q1, q2], [q2, q3]]``.

    Returns ``(M, D)`` with ``M`` orthogonal, ``D = diag(l1, l2)``, ``l1 >= l2``
    and ``M.T @ Q @ M == D``. The columns of ``M`` are the normalized vectors
    ``(q2, l1 - q1)`` and ``(l2 - q3, q2)``; the differences are evaluated in
    a cancellation-free form. When ``q2`` is negligible the matrix is treated
    as already diagonal.
    """
    q1, q2, q3 = float(q1), float(q2), float(q3)
    if not all(math.isfinite(v) for v in (q1, q2, q3)):
        raise ValueError("eig_sym2 inputs must be finite")
    big = max(abs(q1), abs(q3))
    if abs(q2) <= 1e-14 * big or (q2 == 0.0 and big == 0.0):
        if q1 >= q3:
            return np.eye(2), np.diag([q1, q3])
        return np.array([[0.0, 1.0], [1.0, 0.0]]), np.diag([q3, q1])

    d = q1 - q3
    s = math.hypot(d, 2.0 * q2)
    l1 = 0.5 * (q1 + q3 + s)
    l2 = 0.5 * (q1 + q3 - s)
    # (l2 - l1 + s == 0); recover the small root from the determinant.
    if q1 + q3 > 0.0 and l1 != 0.0:
        l2 = (q1 * q3 - q2 * q2) / l1
    elif q1 + q3 < 0.0 and l2 != 0.0:
        l1 = (q1 * q3 - q2 * q2) / l2

    if d >= 0.0:
        l1_minus_q1 = 2.0 * q2 * q2 / (d + s)
        l2_minus_q3 = -l1_minus_q1
    else:
        l1_minus_q1 = 0.5 * (s - d)
        l2_minus_q3 = -l1_minus_q1
    c1 = np.array([q2, l1_minus_q1])
    c2 = np.array([l2_minus_q3, q2])
    c1 /= math.hypot(*c1)
    c2 /= math.hypot(*c2)
    return np.column_stack([c1, c2]), np.diag([l1, l2])


def charpoly4(m) -> np.ndarray:
    """Monic characteristic polynomial coefficients ``[1, c1, c2, c3, c4]``.

    Faddeev-LeVerrier recursion, so the coefficients are exact polynomials
    in the entries of ``m`` (no eigenvalue round trip).
    """
    a = np.asarray(m, dtype=float)
    n = a.shape[0]
    coeffs = [1.0]
    mk = np.zeros_like(a)
    eye = np.eye(n)
    for k in range(1, n + 1):
        mk = a @ mk + coeffs[-1] * eye
        coeffs.append(-np.trace(a @ mk) / k)
    return np.array(coeffs)


def ctrb(a, b) -> np.ndarray:
    """Controllability matrix ``[b, ab, a^2 b, ...]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    blocks = [b]
    for _ in range(a.shape[0] - 1):
        blocks.append(a @ blocks[-1])
    return np.hstack(blocks)


def match_spectra(got, want) -> np.ndarray:
    """Pair two eigenvalue multisets greedily by minimal distance.

    Returns the per-pair absolute distances, largest first.
    """
    got = list(np.asarray(got, dtype=complex))
    want = list(np.asarray(want, dtype=complex))
    if len(got) != len(want):
        raise ValueError("spectra must have equal length")
    dists = []
    while got:
        best = None
        for i, g in enumerate(got):
            for j, w in enumerate(want):
                dist = abs(g - w)
                if best is None or dist < best[0]:
                    best = (dist, i, j)
        dist, i, j = best
        dists.append(dist)
        got.pop(i)
        want.pop(j)
    return np.sort(np.array(dists))[::-1]


def _check_conjugate_closed(desired: np.ndarray, tol: float = 1e-9) -> None:
    scale = max(1.0, float(np.max(np.abs(desired))))
    for w in desired:
        if abs(w.imag) > tol * scale and np.min(np.abs(desired - np.conj(w))) > tol * scale:
            raise ValueError(f"desired spectrum is not closed under conjugation ({w})")


def _pair_up(desired: np.ndarray) -> list[tuple[float, float]]:
    """Split a conjugate-closed 4-spectrum into two real quadratics ``(sum, product)``."""
    scale = max(1.0, float(np.max(np.abs(desired))))
    cplx = [w for w in desired if w.imag > 1e-9 * scale]
    reals = sorted(w.real for w in desired if abs(w.imag) <= 1e-9 * scale)
    pairs = [(w, np.conj(w)) for w in cplx]
    pairs += [(reals[i], reals[i + 1]) for i in range(0, len(reals), 2)]
    return [(float((p + q).real), float((p * q).real)) for p, q in pairs]


def _place_block(a: np.ndarray, b: np.ndarray, desired: np.ndarray) -> np.ndarray | None:
    """Direct placement when ``b = [0; G]`` with ``G`` and ``a[:2, 2:]`` invertible.

    With ``z1 = x_top`` and ``z2 = dz1/dt`` the closed loop becomes
    ``dz2/dt = F0 z1 + F1 z2``; choosing block-diagonal ``F0, F1`` from two
    conjugate-closed pole pairs gives the requested spectrum exactly.
    """
    if np.any(b[:2] != 0.0):
        return None
    g = b[2:]
    a11, a12, a21, a22 = a[:2, :2], a[:2, 2:], a[2:, :2], a[2:, 2:]
    if np.linalg.cond(g) > 1e12 or np.linalg.cond(a12) > 1e12:
        return None
    (s1, p1), (s2, p2) = _pair_up(desired)
    f1 = np.diag([s1, s2])
    f0 = np.diag([-p1, -p2])
    a12_inv = np.linalg.inv(a12)
    x = a12_inv @ (f0 + f1 @ a11 - a11 @ a11)
    y = a12_inv @ (f1 @ a12 - a11 @ a12)
    return np.linalg.solve(g, np.hstack([a21 - x, a22 - y]))


def place_poles(
    a,
    b,
    desired,
    *,
    tol: float = 1e-6,
    max_iter: int = 100,
    rank_tol: float = 1e-9,
    method: str = "auto",
) -> np.ndarray:
    """State-feedback gain ``K`` (2x4) with ``eig(a - b K)`` equal to ``desired``.

    The 8 entries of ``K`` are found by Newton iteration on the four
    characteristic-polynomial coefficient equations, starting from ``K = 0``
    and taking minimum-norm (least-squares) steps, so the result is the
    regularized solution closest to zero along the Newton path. The
    coefficients are quadratic in ``K`` (``b`` has rank 2), hence a central
    difference with unit step gives the exact Jacobian. If Newton stalls and
    ``b = [0; G]``, a direct block-companion construction is used instead.

    ``method`` is ``"auto"`` (Newton, then direct), ``"newton"`` or ``"direct"``.

    Raises
    ------
    UncontrollableError
        ``(a, b)`` is not controllable and the requested spectrum could
        not be reached.
    PlacementError
        Newton failed to reach the spectrum within ``max_iter`` iterations.
    """
    a = _as_square(a, 4)
    b = np.asarray(b, dtype=float)
    if b.shape != (4, 2):
        raise ValueError(f"expected a 4x2 input matrix, got shape {b.shape}")
    desired = np.asarray(desired, dtype=complex)
    if desired.shape != (4,):
        raise ValueError("desired spectrum must have 4 entries")
    _check_conjugate_closed(desired)

    if method not in ("auto", "newton", "direct"):
        raise ValueError(f"unknown method {method!r}")
    if method == "direct":
        direct = _place_block(a, b, desired)
        if direct is None:
            raise ValueError("direct placement needs b = [0; G] with invertible blocks")
        if np.max(match_spectra(eig4(a - b @ direct), desired)) <= tol:
            return direct
        raise PlacementError("direct placement missed the requested spectrum")

    target = np.poly(desired).real
    scale = np.maximum(np.abs(target[1:]), 1.0)

    def residual(kvec: np.ndarray) -> np.ndarray:
        return (charpoly4(a - b @ kvec.reshape(2, 4))[1:] - target[1:]) / scale

    def jacobian(kvec: np.ndarray) -> np.ndarray:
        jac = np.empty((4, 8))
        for i in range(8):
            e = np.zeros(8)
            e[i] = 1.0
            jac[:, i] = 0.5 * (residual(kvec + e) - residual(kvec - e))
        return jac

    k = np.zeros(8)
    r = residual(k)
    for _ in range(max_iter):
        if np.linalg.norm(r) < 1e-15:
            break
        step = np.linalg.lstsq(jacobian(k), -r, rcond=None)[0]
        t = 1.0
        while t > 1e-6:
            trial = k + t * step
            r_trial = residual(trial)
            if np.linalg.norm(r_trial) < np.linalg.norm(r):
                k, r = trial, r_trial
                break
            t *= 0.5
        else:
            break

    gain = k.reshape(2, 4)
    got = eig4(a - b @ gain)
    if np.max(match_spectra(got, desired)) <= tol:
        return gain
    # Newton can stall far from the target; try the structured construction
    direct = _place_block(a, b, desired) if method == "auto" else None
    if direct is not None and np.max(match_spectra(eig4(a - b @ direct), desired)) <= tol:
        return direct

    rank = np.linalg.matrix_rank(ctrb(a, b), tol=rank_tol * max(1.0, np.linalg.norm(a)) ** 3)
    if rank < 4:
        raise UncontrollableError(f"(a, b) is not controllable (rank {rank})")
    raise PlacementError(
        f"could not place poles: achieved {np.sort_complex(got)}, "
        f"max error {np.max(match_spectra(got, desired)):.3e}"
    )


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], state, t: float, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``dy/dt = f(t, y)``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    y = np.asarray(state, dtype=float)
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    out = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError(t + h, out)
    return out


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10) -> float:
    """Minimizer of a unimodal ``f`` on ``[lo, hi]``."""
    if not hi > lo:
        raise ValueError("need lo < hi")
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = hi - invphi * (hi - lo), lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)
