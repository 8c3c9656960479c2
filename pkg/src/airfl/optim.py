"""Aggregation-weight QP and greedy device selection.

Two solvers live here:

* :func:`solve_weight_selection` picks simplex weights minimizing
  ``a^T diag(d) a`` under a quadratic MSE budget ``a^T Q a <= theta``.
  A bisection on the Lagrange multiplier wraps an inner simplex QP solved by
  projected gradient, then polished by an exact active-set step.
* :func:`mp_greedy_selection` grows a device set one device at a time,
  re-deriving the receive equalizer as the dominant eigenvector of the
  selected channels' covariance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-9
KKT_TOL = 1e-6
MAX_BISECTIONS = 200


def validate_weights(alpha, tol: float = SIMPLEX_TOL) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if not np.all(np.isfinite(alpha)):
        raise ValueError("weights must be finite")
    if np.any(alpha < -tol) or abs(alpha.sum() - 1.0) > tol:
        raise ValueError(f"weights are not on the simplex (sum={alpha.sum():.12g}, "
                         f"min={alpha.min():.3g})")
    return alpha


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto {a >= 0, sum(a) = 1} (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a non-empty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def _check_psd(Q: np.ndarray, name: str = "Q") -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"{name} must be square, got {Q.shape}")
    scale = max(1.0, float(np.max(np.abs(Q))))
    if np.max(np.abs(Q - Q.T)) > 1e-8 * scale:
        raise ValueError(f"{name} is not symmetric")
    Q = 0.5 * (Q + Q.T)
    if np.linalg.eigvalsh(Q)[0] < -1e-8 * scale:
        raise ValueError(f"{name} is not positive semidefinite")
    return Q


def simplex_kkt_residual(A: np.ndarray, alpha: np.ndarray) -> float:
    """Stationarity/complementarity residual of min a^T A a on the simplex."""
    grad = 2.0 * A @ alpha
    support = alpha > 1e-12
    nu = grad[support].min() if support.any() else grad.min()
    res_support = np.abs(grad[support] - nu).max() if support.any() else 0.0
    res_off = np.maximum(nu - grad[~support], 0.0).max() if (~support).any() else 0.0
    scale = max(1.0, float(np.abs(grad).max()))
    return float(max(res_support, res_off) / scale)


def _active_set_polish(A: np.ndarray, alpha: np.ndarray, max_rounds: int = 20):
    """Solve the equality-constrained QP on the current support exactly.

    Returns the polished point if it satisfies all KKT conditions, else None.
    """
    K = len(alpha)
    support = alpha > 1e-10
    for _ in range(max_rounds):
        idx = np.nonzero(support)[0]
        n = idx.size
        kkt = np.zeros((n + 1, n + 1))
        kkt[:n, :n] = 2.0 * A[np.ix_(idx, idx)]
        kkt[:n, n] = -1.0
        kkt[n, :n] = 1.0
        rhs = np.zeros(n + 1)
        rhs[n] = 1.0
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        x = np.zeros(K)
        x[idx] = sol[:n]
        nu = sol[n]
        if np.any(x[idx] < -1e-14):
            # drop the most negative coordinate and retry
            support[idx[np.argmin(x[idx])]] = False
            continue
        x = np.maximum(x, 0.0)
        x /= x.sum()
        grad = 2.0 * A @ x
        viol = nu - grad
        viol[idx] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] > 1e-12 * max(1.0, abs(nu)):
            support[j] = True
            continue
        return x
    return None


def _simplex_qp(A: np.ndarray, x0=None, max_iter: int = 20000, tol: float = 1e-13,
                polish_every: int = 25) -> np.ndarray:
    """argmin a^T A a over the probability simplex, A symmetric PSD.

    Accelerated projected gradient with backtracking; every ``polish_every``
    iterations the current support is handed to an exact active-set solve,
    which ends the loop once it certifies the KKT conditions.
    """
    K = A.shape[0]
    x = np.full(K, 1.0 / K) if x0 is None else project_to_simplex(x0)
    step = 1.0 / max(2.0 * np.linalg.norm(A, 2), 1e-300)
    y, t = x.copy(), 1.0
    f_x = x @ A @ x
    for it in range(1, max_iter + 1):
        if it % polish_every == 0:
            polished = _active_set_polish(A, x)
            if polished is not None and simplex_kkt_residual(A, polished) < 1e-10:
                return polished
        grad = 2.0 * A @ y
        f_y = y @ A @ y
        # backtracking on the quadratic upper model
        while True:
            x_new = project_to_simplex(y - step * grad)
            d = x_new - y
            if x_new @ A @ x_new <= f_y + grad @ d + d @ d / (2 * step) + 1e-15:
                break
            step *= 0.5
        f_new = x_new @ A @ x_new
        if f_new > f_x:
            # monotone restart
            y, t = x.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + (t - 1.0) / t_new * (x_new - x)
        moved = np.abs(x_new - x).max()
        x, t, f_x = x_new, t_new, f_new
        if moved < tol:
            break
    polished = _active_set_polish(A, x)
    if polished is not None and polished @ A @ polished <= f_x + 1e-15 * max(1.0, abs(f_x)):
        return polished
    return x


def min_quadratic_over_simplex(Q_or_diag) -> tuple[np.ndarray, float]:
    """Minimize a^T Q a over the simplex.

    A 1-D argument is read as the diagonal of Q and solved in closed form,
    a_k proportional to 1/d_k.
    """
    Q_or_diag = np.asarray(Q_or_diag, dtype=float)
    if Q_or_diag.ndim == 1:
        d = Q_or_diag
        if np.any(d < 0):
            raise ValueError("diagonal entries must be >= 0")
        zero = d == 0
        if zero.any():
            alpha = zero / zero.sum()
            return alpha, 0.0
        inv = 1.0 / d
        alpha = inv / inv.sum()
        return alpha, float(1.0 / inv.sum())
    Q = _check_psd(Q_or_diag)
    alpha = _simplex_qp(Q)
    return alpha, float(alpha @ Q @ alpha)


@dataclass(frozen=True)
class WeightProblem:
    """min a^T diag(d) a  s.t.  a^T Q a <= theta, a on the simplex."""

    Q: np.ndarray
    d: np.ndarray
    theta: float

    def __post_init__(self):
        Q = _check_psd(self.Q)
        d = np.asarray(self.d, dtype=float)
        if d.shape != (Q.shape[0],):
            raise ValueError(f"d must have length {Q.shape[0]}, got {d.shape}")
        if np.any(d <= 0):
            raise ValueError("objective diagonal must be positive")
        if not self.theta > 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "d", d)


@dataclass
class WeightSolution:
    alpha: np.ndarray
    status: str  # "slack", "active" or "infeasible-fallback"
    multiplier: float
    constraint_value: float
    kkt_residual: float
    trace: list[tuple[float, float]] = field(default_factory=list)

    @property
    def infeasible(self) -> bool:
        return self.status == "infeasible-fallback"


def solve_weight_selection(problem: WeightProblem) -> WeightSolution:
    """Lagrangian bisection for the weight-selection QCQP.

    For a multiplier lam >= 0 the inner problem minimizes
    ``a^T (diag(d) + lam Q) a`` over the simplex; its constraint value is
    non-increasing in lam, so bisection finds the lam at which the MSE budget
    becomes active.
    """
    Q, d, theta = problem.Q, problem.d, problem.theta
    D = np.diag(d)
    trace = []

    def inner(lam, x0=None):
        A = D + lam * Q
        alpha = _simplex_qp(A, x0)
        g = float(alpha @ Q @ alpha)
        trace.append((lam, g))
        return alpha, g

    alpha0, _ = min_quadratic_over_simplex(d)
    g0 = float(alpha0 @ Q @ alpha0)
    trace.append((0.0, g0))
    if g0 <= theta:
        return WeightSolution(alpha0, "slack", 0.0, g0, simplex_kkt_residual(D, alpha0), trace)

    # smallest achievable MSE, with a tiny objective term to pin down ties
    eps = 1e-9 * max(np.trace(Q), 1e-300) / np.trace(D)
    alpha_q = _simplex_qp(Q + eps * D)
    g_min = float(alpha_q @ Q @ alpha_q)
    if g_min > theta:
        return WeightSolution(alpha_q, "infeasible-fallback", np.inf, g_min,
                              simplex_kkt_residual(Q + eps * D, alpha_q), trace)

    lam_lo, lam_hi = 0.0, float(np.trace(D) / max(np.trace(Q), 1e-300))
    alpha_hi, g_hi = inner(lam_hi)
    for _ in range(200):
        if g_hi <= theta:
            break
        lam_lo = lam_hi
        lam_hi *= 2.0
        alpha_hi, g_hi = inner(lam_hi, alpha_hi)
    if g_hi > theta:
        # multiplier would be effectively infinite: the budget is met only at
        # the MSE-minimizing weights
        return WeightSolution(alpha_q, "active", np.inf, g_min,
                              simplex_kkt_residual(Q + eps * D, alpha_q), trace)

    for _ in range(MAX_BISECTIONS):
        if g_hi >= theta * (1.0 - KKT_TOL) or lam_hi - lam_lo <= 1e-15 * lam_hi:
            break
        lam = 0.5 * (lam_lo + lam_hi)
        alpha, g = inner(lam, alpha_hi)
        if g <= theta:
            lam_hi, alpha_hi, g_hi = lam, alpha, g
        else:
            lam_lo = lam

    kkt = simplex_kkt_residual(D + lam_hi * Q, alpha_hi)
    return WeightSolution(alpha_hi, "active", lam_hi, g_hi, kkt, trace)


# --- device selection ---------------------------------------------------------


@dataclass
class SelectionResult:
    active: tuple[int, ...]
    equalizer: np.ndarray | None
    achieved_constraint: float
    predicted_mse: float
    flags: frozenset = frozenset()

    @property
    def empty(self) -> bool:
        return not self.active


def dominant_equalizer(H_sel: np.ndarray) -> np.ndarray:
    """Unit-norm dominant eigenvector of sum_k h_k h_k^H over the rows of H_sel.

    When the top eigenvalue is repeated, the sum of the selected channels is
    projected onto that eigenspace, which balances the gains of devices that
    span it (e.g. orthogonal channels).
    """
    H_sel = np.atleast_2d(H_sel)
    R = H_sel.T @ H_sel.conj()
    vals, vecs = np.linalg.eigh(R)
    top = vals[-1]
    multiple = vals >= top * (1.0 - 1e-9)
    if multiple.sum() == 1:
        b = vecs[:, -1]
    else:
        U = vecs[:, multiple]
        b = U @ (U.conj().T @ H_sel.sum(axis=0))
        if np.linalg.norm(b) < 1e-12 * np.sqrt(top):
            b = vecs[:, -1]
    return b / np.linalg.norm(b)


def equalizer_constraint(b: np.ndarray, H_sel: np.ndarray) -> float:
    """max_k ||b||^2 / |b^H h_k|^2 over the rows of H_sel."""
    gains = np.abs(np.atleast_2d(H_sel) @ b.conj()) ** 2
    if np.any(gains == 0):
        return np.inf
    return float(np.max(np.vdot(b, b).real / gains))


def _coefficients(channel) -> np.ndarray:
    return np.asarray(getattr(channel, "coefficients", channel), dtype=complex)


def mp_greedy_selection(channel, P: float, sigma_z2: float, theta: float) -> SelectionResult:
    """Greedy matching-pursuit device scheduling.

    Starting from the empty set, repeatedly add the device whose inclusion
    leaves the largest worst-case normalized gain min_k |b^H h_k|^2/||b||^2,
    and stop as soon as the best addition would push
    max_k ||b||^2/|b^H h_k|^2 above ``theta``.
    """
    H = _coefficients(channel)
    if H.ndim == 1:
        H = H[:, None]
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    K = H.shape[0]
    selected: list[int] = []
    best_b, best_c = None, np.inf
    while len(selected) < K:
        cand = None
        for j in range(K):
            if j in selected:
                continue
            rows = sorted(selected + [j])
            b = dominant_equalizer(H[rows])
            c = equalizer_constraint(b, H[rows])
            if cand is None or c < cand[0]:
                cand = (c, rows, b)
        if cand is None or cand[0] > theta:
            break
        best_c, selected, best_b = cand[0], cand[1], cand[2]
    if not selected:
        return SelectionResult((), None, np.inf, np.inf, frozenset({"empty_active_set"}))
    return SelectionResult(tuple(selected), best_b, best_c, sigma_z2 / P * best_c)


def brute_force_selection_oracle(channel, P: float, sigma_z2: float, theta: float,
                                 K_max: int = 10) -> SelectionResult:
    """Largest feasible device set by exhaustive enumeration (same equalizer rule)."""
    H = _coefficients(channel)
    if H.ndim == 1:
        H = H[:, None]
    K = H.shape[0]
    if K > K_max:
        raise ValueError(f"enumeration refused for K={K} > {K_max}")
    best = None
    for size in range(K, 0, -1):
        for rows in itertools.combinations(range(K), size):
            b = dominant_equalizer(H[list(rows)])
            c = equalizer_constraint(b, H[list(rows)])
            if c <= theta and (best is None or c < best[0]):
                best = (c, rows, b)
        if best is not None:
            break
    if best is None:
        return SelectionResult((), None, np.inf, np.inf, frozenset({"empty_active_set"}))
    return SelectionResult(best[1], best[2], best[0], sigma_z2 / P * best[0])
