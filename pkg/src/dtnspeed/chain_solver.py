"""Discrete packet-state Markov chain and its long-run metrics.

States are ordered with the ``N`` buffering states first (index ``i``),
then the transmission states ``(theta_i, r_k)`` at index ``N + k*N + i``.
The stationary vector is stored in mass form: every entry already
includes its cell measure, so expectations are plain weighted sums.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import NumericGateError

__all__ = [
    "KernelMatrix",
    "StationaryDistribution",
    "Expectations",
    "Metrics",
    "assemble_kernel",
    "stationary_distribution",
    "direct_solve",
    "doeblin_mass",
    "expectations",
    "performance_metrics",
]

DEFECT_GATE = 0.05
DENSE_SOLVE_LIMIT = 7000


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Row-stochastic transition matrix in block form.

    Attributes
    ----------
    N, M : int
    BB : ndarray, shape (N, N)
        Buffering to buffering.
    BW : ndarray, shape (N, M, N)
        ``BW[i, l, j]``: buffering ``theta_i`` to transmission ``(theta_j, r_l)``.
    PE : ndarray, shape (M, N)
        ``PE[k, i]``: transmission ``(theta_i, r_k)`` back to buffering ``theta_i``.
    WW_factor : ndarray, shape (N, M, N) or None
        Exact route: ``WW[(i, k), (j, l)] = WW_factor[i, k, j] * G[k, l]``.
    G : ndarray, shape (M, M) or None
    WW_dense : ndarray, shape (N*M, N*M) or None
        Generic route, rows and columns in transmission-index order.
    row_defect : ndarray, shape (N*(M+1),)
        Row sums minus one before renormalisation.
    dead : ndarray of bool, shape (N,)
        Direction cells carrying no probability mass.
    """

    N: int
    M: int
    BB: np.ndarray
    BW: np.ndarray
    PE: np.ndarray
    row_defect: np.ndarray
    dead: np.ndarray
    WW_factor: np.ndarray | None = None
    G: np.ndarray | None = None
    WW_dense: np.ndarray | None = None
    _dense_cache: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.N * (self.M + 1)

    @property
    def max_defect(self) -> float:
        return float(np.max(np.abs(self.row_defect)))

    def w_index(self, i, k):
        return self.N + np.asarray(k) * self.N + np.asarray(i)

    # -- products -------------------------------------------------------
    def _ww_left(self, vW):
        """``vW @ WW`` with ``vW`` shaped (M, N) [k, i]; returns (M, N) [l, j]."""
        if self.WW_dense is not None:
            return (vW.ravel() @ self.WW_dense).reshape(self.M, self.N)
        T = np.einsum("ki,ikj->kj", vW, self.WW_factor, optimize=True)
        return self.G.T.astype(float) @ T

    def _ww_right(self, vW):
        """``WW @ vW`` with ``vW`` shaped (M, N) [l, j]; returns (M, N) [k, i]."""
        if self.WW_dense is not None:
            return (self.WW_dense @ vW.ravel()).reshape(self.M, self.N)
        S = self.G.astype(float) @ vW
        return np.einsum("ikj,kj->ki", self.WW_factor, S, optimize=True)

    def left(self, psi: np.ndarray) -> np.ndarray:
        """Row vector times matrix, ``psi @ K``."""
        N, M = self.N, self.M
        pB, pW = psi[:N], psi[N:].reshape(M, N)
        outB = pB @ self.BB + np.sum(pW * self.PE, axis=0)
        outW = np.einsum("i,ilj->lj", pB, self.BW) + self._ww_left(pW)
        return np.concatenate([outB, outW.ravel()])

    def right(self, v: np.ndarray) -> np.ndarray:
        """Matrix times column vector, ``K @ v``."""
        N, M = self.N, self.M
        vB, vW = v[:N], v[N:].reshape(M, N)
        outB = self.BB @ vB + np.einsum("ilj,lj->i", self.BW, vW)
        outW = self.PE * vB[None, :] + self._ww_right(vW)
        return np.concatenate([outB, outW.ravel()])

    def row_sums(self) -> np.ndarray:
        return self.right(np.ones(self.n))

    def dense(self) -> np.ndarray:
        """The full ``n x n`` matrix (cached)."""
        if self._dense_cache:
            return self._dense_cache[0]
        N, M, n = self.N, self.M, self.n
        K = np.zeros((n, n))
        K[:N, :N] = self.BB
        K[:N, N:] = self.BW.reshape(N, M * N)
        rows = self.w_index(np.arange(N)[None, :], np.arange(M)[:, None]).ravel()
        K[rows, np.tile(np.arange(N), M)] = self.PE.ravel()
        if self.WW_dense is not None:
            K[N:, N:] = self.WW_dense
        else:
            # rows (k, i), cols (l, j)
            ww = (self.WW_factor.transpose(1, 0, 2)[:, :, None, :]
                  * self.G.astype(float)[:, None, :, None])
            K[N:, N:] = ww.reshape(M * N, M * N)
        self._dense_cache.append(K)
        return K


def assemble_kernel(rates, tx, grid, gate: float = DEFECT_GATE) -> KernelMatrix:
    """Assemble the transition matrix from the stage tables.

    Rows are renormalised to one; the pre-renormalisation defects are kept
    and a defect above ``gate`` raises :class:`NumericGateError`.
    Transmission states in direction cells with no probability mass are
    sent straight to their buffering state.
    """
    N, M = grid.N, grid.M
    dth, dA = grid.delta_theta, grid.delta_A
    r = rates.r
    BB = rates.rA * dth / r[:, None]
    BW = ((rates.rB + rates.rC + rates.rDhat) * dth * dA / r[:, None, None]).transpose(0, 2, 1)
    PE = tx.PE.T.copy()                                         # (M, N) [k, i]
    dead = BB.sum(axis=0) <= 0
    if tx.g_dense is not None:
        WWd = tx.g_dense.transpose(1, 0, 3, 2).reshape(M * N, M * N) * dth * dA
        ww_rows = WWd.sum(axis=1).reshape(M, N)
        factor = None
    else:
        factor = tx.gdir * dth * dA                                # (N, M, N)
        ww_rows = (factor.sum(axis=2) * tx.G.sum(axis=1)[None, :]).T
        WWd = None
    rowB = BB.sum(axis=1) + BW.sum(axis=(1, 2))
    rowW = PE + ww_rows
    dead_w = np.broadcast_to(dead[None, :], (M, N))
    defect = np.concatenate([rowB - 1.0, np.where(dead_w, 0.0, rowW - 1.0).ravel()])
    max_def = float(np.max(np.abs(defect)))
    if max_def > gate:
        raise NumericGateError(
            f"kernel row defect {max_def:.3g} exceeds {gate:g}; refine the grid")
    BB = BB / rowB[:, None]
    BW = BW / rowB[:, None, None]
    scale = np.where(dead_w, 0.0, 1.0 / rowW)
    PE = np.where(dead_w, 1.0, PE * scale)
    if WWd is not None:
        WWd = WWd * scale.ravel()[:, None]
    else:
        factor = factor * scale.T[:, :, None]
    return KernelMatrix(N, M, BB, BW, PE, defect, dead, WW_factor=factor,
                        G=None if factor is None else tx.G, WW_dense=WWd)


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    """Stationary masses with ``psi_W[k, i]`` for state ``(theta_i, r_k)``."""

    psi: np.ndarray
    N: int
    M: int
    residual: float
    iterations: int
    method: str

    @property
    def psi_B(self) -> np.ndarray:
        return self.psi[:self.N]

    @property
    def psi_W(self) -> np.ndarray:
        return self.psi[self.N:].reshape(self.M, self.N)


def _residual(K: KernelMatrix, psi) -> float:
    return float(np.max(np.abs(K.left(psi) - psi)))


def stationary_distribution(K: KernelMatrix, tol: float = 1e-12,
                            max_iter: int = 100_000) -> StationaryDistribution:
    """Left fixed point of ``K`` by power iteration.

    Starts from the uniform distribution on buffering states and stops
    once ``||psi K - psi||_inf <= tol``.
    """
    psi = np.zeros(K.n)
    live = ~K.dead
    psi[:K.N][live] = 1.0 / live.sum()
    for it in range(1, max_iter + 1):
        nxt = K.left(psi)
        nxt /= nxt.sum()
        res = float(np.max(np.abs(nxt - psi)))
        psi = nxt
        if res <= tol:
            psi = np.maximum(psi, 0.0)
            psi /= psi.sum()
            return StationaryDistribution(psi, K.N, K.M, _residual(K, psi), it, "power")
    raise NumericGateError(f"power iteration did not converge in {max_iter} iterations")


def direct_solve(K: KernelMatrix, dense_limit: int = DENSE_SOLVE_LIMIT) -> StationaryDistribution:
    """Stationary vector from the linear system ``(K^T - I) psi = 0``.

    One equation is replaced by the normalisation ``sum psi = 1``.  Above
    ``dense_limit`` states the rank-one-corrected system
    ``(I - K^T + 1 1^T / n) psi = 1 / n`` is solved by GMRES with the
    block products.
    """
    n = K.n
    if n <= dense_limit:
        A = K.dense().T - np.eye(n)
        A[0, :] = 1.0
        b = np.zeros(n)
        b[0] = 1.0
        psi = scipy.linalg.solve(A, b)
        method = "dense"
    else:
        def mv(x):
            return x - K.left(x) + x.sum() / n

        op = LinearOperator((n, n), matvec=mv, dtype=float)
        psi, info = gmres(op, np.full(n, 1.0 / n), rtol=1e-14, atol=0.0, restart=200,
                          maxiter=50)
        if info != 0:
            raise NumericGateError(f"GMRES did not converge (info={info})")
        method = "gmres"
    psi = psi / psi.sum()
    return StationaryDistribution(psi, K.N, K.M, _residual(K, psi), 0, method)


def doeblin_mass(K: KernelMatrix) -> float:
    """Smallest two-step probability of reaching a buffering state."""
    ind = np.zeros(K.n)
    ind[:K.N] = 1.0
    return float(np.min(K.right(K.right(ind))))


@dataclass(frozen=True)
class Expectations:
    E_XW: float
    E_C: float
    E_Delta: float
    E_XB: float


@dataclass(frozen=True)
class Metrics:
    """Packet speed ``V_p`` and normalised cost ``C_p``.

    ``C_p`` is NaN and ``cost_defined`` False when the mean progress per
    stage is indistinguishable from zero.
    """

    V_p: float
    C_p: float
    cost_defined: bool
    components: Expectations


def expectations(psi: StationaryDistribution, params, rates, grid) -> Expectations:
    """Stationary means of per-stage progress, cost and duration."""
    pB, pW = psi.psi_B, psi.psi_W
    x = grid.points[:, 0]
    cost = params.cost(grid.points[:, 0], grid.points[:, 1])
    E_XW = float(np.sum(pW * x[:, None]))
    E_C = float(np.sum(pW * cost[:, None]))
    E_D = float(np.sum(pB / rates.r))
    E_XB = float(np.sum(pB * params.v0 * np.cos(grid.theta) / rates.r))
    return Expectations(E_XW, E_C, E_D, E_XB)


def performance_metrics(e: Expectations, v0: float = 1.0, progress_tol: float = 1e-3) -> Metrics:
    """``V_p = (E X_W + E X_B) / E Delta`` and ``C_p = E C / (E X_W + E X_B)``.

    ``C_p`` is reported undefined when ``|V_p| <= progress_tol * v0``.
    """
    prog = e.E_XW + e.E_XB
    V = prog / e.E_Delta
    defined = abs(V) > progress_tol * v0 and prog != 0.0
    C = e.E_C / prog if defined else float("nan")
    return Metrics(float(V), float(C), bool(defined), e)
