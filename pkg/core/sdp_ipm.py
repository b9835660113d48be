"""
Dense primal-dual interior-point method for small block SDPs.

Solves the pair

     minimize   <C, X>              maximize   b'y
     subject to <A_i, X> = b_i      subject to sum_i y_i A_i + Z = C
                X ⪰ 0                          Z ⪰ 0

where X and Z are block diagonal with real symmetric blocks and one
nonnegative (LP) block. Directions are HKM (XZ⁻¹ scaling) with a Mehrotra
predictor-corrector; the start is infeasible.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple
import numpy as np
from scipy import linalg
from config.constants import SDP_TOL, SDP_MAX_ITER
from utils.logging import get_logger

STEP_FRACTION = 0.98
DIVERGENCE_NORM = 1e10
MIN_STEP = 1e-10


class SdpInfeasibleError(RuntimeError):
    """Raised when the iterates diverge, indicating primal or dual infeasibility."""


class SdpNumericalError(RuntimeError):
    """Raised when the interior-point method stalls or exceeds its iteration cap."""


@dataclass
class BlockSdpData:
    """Constraint i reads sum_b <a[i][b], X_b> + lp_a[i]·x_lp = b[i]."""
    c: List[np.ndarray]
    a: List[List[np.ndarray]]
    b: np.ndarray
    lp_c: np.ndarray
    lp_a: np.ndarray

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def block_dims(self) -> List[int]:
        return [blk.shape[0] for blk in self.c]

    @property
    def degree(self) -> int:
        return sum(self.block_dims) + len(self.lp_c)


@dataclass
class IpmIterate:
    X: List[np.ndarray]
    x: np.ndarray
    y: np.ndarray
    Z: List[np.ndarray]
    z: np.ndarray


@dataclass
class IpmResult:
    iterate: IpmIterate
    primal_value: float
    dual_value: float
    rel_gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    iterations: int
    history: List[Tuple[float, float, float, float]] = field(default_factory=list)


def _sym(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest α with X + α·dX ⪰ 0 for X ≻ 0."""
    L = linalg.cholesky(X, lower=True, check_finite=False)
    Linv_dX = linalg.solve_triangular(L, dX, lower=True, check_finite=False)
    G = linalg.solve_triangular(L, Linv_dX.T, lower=True, check_finite=False)
    lowest = float(linalg.eigvalsh(_sym(G))[0])
    return np.inf if lowest >= 0 else -1.0 / lowest


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    negative = dx < 0
    if not np.any(negative):
        return np.inf
    return float(np.min(-x[negative] / dx[negative]))


class InteriorPointSolver:
    """Primal-dual path-following solver for BlockSdpData."""

    def __init__(self, logger: Optional[logging.Logger] = None, tol: float = SDP_TOL,
                 max_iter: int = SDP_MAX_ITER, step_fraction: float = STEP_FRACTION):
        self.logger = get_logger(logger)
        self.tol = tol
        self.max_iter = max_iter
        self.step_fraction = step_fraction

    # Linear maps
    def _amap(self, data: BlockSdpData, X: List[np.ndarray], x: np.ndarray) -> np.ndarray:
        return np.array([
            sum(float(np.sum(a_ib * X_b)) for a_ib, X_b in zip(a_i, X)) + float(data.lp_a[i] @ x)
            for i, a_i in enumerate(data.a)
        ])

    def _aadj(self, data: BlockSdpData, y: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        blocks = [sum(y[i] * data.a[i][b] for i in range(data.m)) for b in range(len(data.c))]
        return blocks, data.lp_a.T @ y

    def _initial_point(self, data: BlockSdpData) -> IpmIterate:
        X, Z = [], []
        for b, dim in enumerate(data.block_dims):
            norms = [np.linalg.norm(data.a[i][b]) for i in range(data.m)]
            xi = max(10.0, np.sqrt(dim), max(np.sqrt(dim) * (1.0 + abs(data.b[i])) / (1.0 + norms[i])
                                              for i in range(data.m)))
            eta = max(10.0, np.sqrt(dim), max(norms), np.linalg.norm(data.c[b]))
            X.append(xi * np.eye(dim))
            Z.append(eta * np.eye(dim))
        n_lp = len(data.lp_c)
        x = np.full(n_lp, 10.0)
        z = np.full(n_lp, max(10.0, float(np.max(np.abs(data.lp_c))) if n_lp else 10.0))
        return IpmIterate(X=X, x=x, y=np.zeros(data.m), Z=Z, z=z)

    def _direction(self, data, it, Zinv, M_factor, rp, Rd, rd, Rc, rc):
        # rhs_i = rp_i - <a_i, Rc Z⁻¹> + <a_i, X Rd Z⁻¹>
        G = [_sym((X_b @ Rd_b - Rc_b) @ Zi_b) for X_b, Rd_b, Rc_b, Zi_b in zip(it.X, Rd, Rc, Zinv)]
        g = (it.x * rd - rc) / it.z
        rhs = rp + self._amap(data, G, g)
        dy = linalg.cho_solve(M_factor, rhs, check_finite=False)
        AtY, aty = self._aadj(data, dy)
        dZ = [Rd_b - At_b for Rd_b, At_b in zip(Rd, AtY)]
        dz = rd - aty
        dX = [_sym((Rc_b - X_b @ dZ_b) @ Zi_b) for Rc_b, X_b, dZ_b, Zi_b in zip(Rc, it.X, dZ, Zinv)]
        dx = (rc - it.x * dz) / it.z
        return dX, dx, dy, dZ, dz

    def _steps(self, it, dX, dx, dZ, dz) -> Tuple[float, float]:
        alpha_p = min([_max_step(X_b, dX_b) for X_b, dX_b in zip(it.X, dX)] + [_max_step_lp(it.x, dx)])
        alpha_d = min([_max_step(Z_b, dZ_b) for Z_b, dZ_b in zip(it.Z, dZ)] + [_max_step_lp(it.z, dz)])
        return min(1.0, self.step_fraction * alpha_p), min(1.0, self.step_fraction * alpha_d)

    def solve(self, data: BlockSdpData) -> IpmResult:
        """
        Run the predictor-corrector iteration until relative gap, primal and dual
        infeasibility are all below the tolerance.

        Raises:
            SdpInfeasibleError: If the iterates diverge
            SdpNumericalError: On a stalled step, a singular Schur complement or the iteration cap
        """
        it = self._initial_point(data)
        n = data.degree
        b_norm = 1.0 + np.linalg.norm(data.b)
        c_norm = 1.0 + np.sqrt(sum(np.linalg.norm(c_b) ** 2 for c_b in data.c) + np.linalg.norm(data.lp_c) ** 2)
        history = []

        for iteration in range(self.max_iter + 1):
            rp = data.b - self._amap(data, it.X, it.x)
            AtY, aty = self._aadj(data, it.y)
            Rd = [c_b - Z_b - At_b for c_b, Z_b, At_b in zip(data.c, it.Z, AtY)]
            rd = data.lp_c - it.z - aty

            pobj = sum(float(np.sum(c_b * X_b)) for c_b, X_b in zip(data.c, it.X)) + float(data.lp_c @ it.x)
            dobj = float(data.b @ it.y)
            mu = (sum(float(np.sum(X_b * Z_b)) for X_b, Z_b in zip(it.X, it.Z)) + float(it.x @ it.z)) / n
            rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            pinf = float(np.linalg.norm(rp)) / b_norm
            dinf = float(np.sqrt(sum(np.linalg.norm(R) ** 2 for R in Rd) + np.linalg.norm(rd) ** 2)) / c_norm
            history.append((pobj, dobj, pinf, dinf))
            self.logger.debug(f"IPM {iteration:3d}: pobj {pobj:.10e} dobj {dobj:.10e} "
                              f"gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e}")

            if rel_gap <= self.tol and pinf <= self.tol and dinf <= self.tol:
                return IpmResult(iterate=it, primal_value=pobj, dual_value=dobj, rel_gap=rel_gap,
                                 primal_infeasibility=pinf, dual_infeasibility=dinf,
                                 iterations=iteration, history=history)

            size = max(max(np.linalg.norm(X_b) for X_b in it.X), float(np.linalg.norm(it.y)))
            if size > DIVERGENCE_NORM:
                raise SdpInfeasibleError(f"interior-point iterates diverged (norm {size:.3e}) at iteration {iteration}")
            if iteration == self.max_iter:
                break

            try:
                Zinv = [linalg.cho_solve(linalg.cho_factor(Z_b, lower=True, check_finite=False),
                                         np.eye(Z_b.shape[0]), check_finite=False) for Z_b in it.Z]
                M = np.zeros((data.m, data.m))
                for i in range(data.m):
                    XAiZ = [X_b @ data.a[i][b] @ Zinv[b] for b, X_b in enumerate(it.X)]
                    for j in range(i, data.m):
                        value = sum(float(np.sum(data.a[j][b] * XAiZ[b].T)) for b in range(len(it.X)))
                        value += float(np.sum(data.lp_a[i] * data.lp_a[j] * it.x / it.z))
                        M[i, j] = M[j, i] = value
                M_factor = linalg.cho_factor(M, lower=True, check_finite=False)
            except linalg.LinAlgError as e:
                raise SdpNumericalError(f"Schur complement factorization failed at iteration {iteration}: {e}") from e

            # Predictor
            Rc = [-X_b @ Z_b for X_b, Z_b in zip(it.X, it.Z)]
            rc = -it.x * it.z
            dX, dx, dy, dZ, dz = self._direction(data, it, Zinv, M_factor, rp, Rd, rd, Rc, rc)
            alpha_p, alpha_d = self._steps(it, dX, dx, dZ, dz)
            mu_aff = (sum(float(np.sum((X_b + alpha_p * dX_b) * (Z_b + alpha_d * dZ_b)))
                          for X_b, dX_b, Z_b, dZ_b in zip(it.X, dX, it.Z, dZ))
                      + float((it.x + alpha_p * dx) @ (it.z + alpha_d * dz))) / n
            sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0))

            # Corrector
            Rc = [sigma * mu * np.eye(X_b.shape[0]) - X_b @ Z_b - dX_b @ dZ_b
                  for X_b, Z_b, dX_b, dZ_b in zip(it.X, it.Z, dX, dZ)]
            rc = sigma * mu - it.x * it.z - dx * dz
            dX, dx, dy, dZ, dz = self._direction(data, it, Zinv, M_factor, rp, Rd, rd, Rc, rc)
            alpha_p, alpha_d = self._steps(it, dX, dx, dZ, dz)
            if max(alpha_p, alpha_d) < MIN_STEP:
                raise SdpNumericalError(f"interior-point step stalled at iteration {iteration} "
                                        f"(gap {rel_gap:.2e}, pinf {pinf:.2e}, dinf {dinf:.2e})")

            it = IpmIterate(
                X=[_sym(X_b + alpha_p * dX_b) for X_b, dX_b in zip(it.X, dX)],
                x=it.x + alpha_p * dx,
                y=it.y + alpha_d * dy,
                Z=[_sym(Z_b + alpha_d * dZ_b) for Z_b, dZ_b in zip(it.Z, dZ)],
                z=it.z + alpha_d * dz,
            )

        raise SdpNumericalError(f"interior-point method did not converge in {self.max_iter} iterations "
                                f"(gap {rel_gap:.2e}, pinf {pinf:.2e}, dinf {dinf:.2e})")
