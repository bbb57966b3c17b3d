"""
数值服务
阻尼最小二乘、可分裂的确定性随机流、自适应积分、4 态生成元的矩阵指数
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg, optimize

from error_handler import AccuracyError, FitFailure, InvalidParameterError, log_event

# 生成元列和的容差（相对于最大速率）
GENERATOR_TOLERANCE = 1e-12


# ============================================
# 最小二乘
# ============================================
@dataclass
class FitProblem:
    """
    最小二乘问题描述

    字段说明：
    - residual: params -> 残差向量
    - initial: 初始参数
    - lower / upper: 参数边界（默认无界）
    - weights: 残差权重（逐元素相乘），None 表示等权
    - jacobian: 解析 Jacobian（可选），None 时用有限差分
    - max_iterations: 最大函数求值次数
    - tolerance: xtol / ftol / gtol
    """
    residual: Callable[[np.ndarray], np.ndarray]
    initial: Sequence[float]
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    weights: Optional[np.ndarray] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    max_iterations: int = 200
    tolerance: float = 1e-10

    def bounds(self):
        """返回 (lower, upper) 数组并检查一致性"""
        n = len(self.initial)
        lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if lower.shape != (n,) or upper.shape != (n,):
            raise InvalidParameterError("bounds must match the number of parameters")
        if np.any(lower >= upper):
            raise InvalidParameterError("inconsistent bounds: lower must be < upper")
        if self.tolerance <= 0:
            raise InvalidParameterError("tolerance must be > 0")
        return lower, upper


@dataclass
class FitResult:
    """最小二乘结果"""
    params: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    message: str = ''

    @property
    def stderr(self):
        """参数标准误差（协方差对角线开方）"""
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def least_squares(problem: FitProblem) -> FitResult:
    """
    阻尼 Gauss–Newton（信赖域反射）最小二乘

    初始点先投影到边界内；协方差由最终 Jacobian 给出：
    cov = (JᵀJ)⁺ · 2·cost / (m − n)。

    Args:
        problem: FitProblem

    Returns:
        FitResult

    Raises:
        FitFailure: 达到最大迭代次数仍未收敛
        InvalidParameterError: 初始点残差不是有限值
    """
    lower, upper = problem.bounds()
    x0 = np.clip(np.asarray(problem.initial, dtype=float), lower, upper)

    weights = None if problem.weights is None else np.asarray(problem.weights, dtype=float)

    def fun(params):
        r = np.asarray(problem.residual(params), dtype=float)
        return r if weights is None else r * weights

    jac = '2-point'
    if problem.jacobian is not None:
        def jac(params):
            j = np.asarray(problem.jacobian(params), dtype=float)
            return j if weights is None else j * weights[:, None]

    if not np.all(np.isfinite(fun(x0))):
        raise InvalidParameterError("residual is not finite at the initial parameters")

    result = optimize.least_squares(
        fun, x0, jac=jac, bounds=(lower, upper), method='trf',
        xtol=problem.tolerance, ftol=problem.tolerance, gtol=problem.tolerance,
        max_nfev=problem.max_iterations,
    )

    residual_norm = float(np.linalg.norm(result.fun))
    if result.status == 0:
        log_event('FIT', level='WARNING', action='max_iterations', nfev=result.nfev, residual_norm=residual_norm)
        raise FitFailure("least squares did not converge", residual_norm=residual_norm, iterations=result.nfev)

    m, n = result.jac.shape
    dof = max(m - n, 1)
    s_sq = 2.0 * result.cost / dof
    covariance = np.linalg.pinv(result.jac.T @ result.jac) * s_sq

    return FitResult(
        params=result.x,
        covariance=covariance,
        residual_norm=residual_norm,
        iterations=int(result.nfev),
        message=result.message,
    )


def central_difference_jacobian(fun, params, step=1e-6):
    """中心差分 Jacobian（用于校验解析 Jacobian）"""
    params = np.asarray(params, dtype=float)
    f0 = np.asarray(fun(params), dtype=float)
    jac = np.empty((f0.size, params.size))
    for i in range(params.size):
        h = step * max(1.0, abs(params[i]))
        forward = params.copy()
        backward = params.copy()
        forward[i] += h
        backward[i] -= h
        jac[:, i] = (np.asarray(fun(forward)) - np.asarray(fun(backward))) / (2 * h)
    return jac


# ============================================
# 矩阵指数
# ============================================
def check_generator(generator):
    """
    检查生成元是否守恒概率（每列和为 0）

    Raises:
        InvalidParameterError: 非方阵或列和不为 0
    """
    g = np.asarray(generator, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise InvalidParameterError(f"generator must be square, got shape {g.shape}")
    scale = max(np.abs(g).max(), 1.0)
    if np.abs(g.sum(axis=0)).max() > GENERATOR_TOLERANCE * scale:
        raise InvalidParameterError("generator columns must sum to zero (probability conserving)")
    return g


def matrix_exponential_action(generator, init, tau):
    """
    计算 exp(G·τ)·init

    Args:
        generator: n×n 生成元（列和为 0）
        init: 初始向量
        tau: 演化时间（≥ 0）

    Returns:
        np.ndarray: 演化后的向量
    """
    g = check_generator(generator)
    if tau < 0:
        raise InvalidParameterError(f"tau must be >= 0, got {tau}")
    init = np.asarray(init, dtype=float)
    if tau == 0:
        return init.copy()
    return linalg.expm(g * tau) @ init


def matrix_exponential_series(generator, init, taus):
    """
    在一组时间点上计算 exp(G·τ)·init，返回形状 (len(taus), n)

    生成元对应可逆马尔可夫链，特征值为实数，直接用特征分解；
    特征向量病态时逐点退回 expm。
    """
    g = check_generator(generator)
    taus = np.asarray(taus, dtype=float)
    if np.any(taus < 0):
        raise InvalidParameterError("all tau values must be >= 0")
    init = np.asarray(init, dtype=float)

    eigenvalues, vectors = np.linalg.eig(g)
    if np.linalg.cond(vectors) > 1e8:
        return np.array([matrix_exponential_action(g, init, t) for t in taus])

    coefficients = np.linalg.solve(vectors, init)
    modes = np.exp(np.outer(taus, eigenvalues)) * coefficients
    return np.real(modes @ vectors.T)


# ============================================
# 自适应积分
# ============================================
def quadrature(integrand, domain: Tuple[float, float], rel_tol=1e-8):
    """
    自适应 Gauss–Kronrod 积分

    Args:
        integrand: 被积函数 f(x)
        domain: (a, b)，允许 np.inf
        rel_tol: 相对误差上限

    Returns:
        float: 积分值

    Raises:
        AccuracyError: 估计误差超过 rel_tol·|value|
    """
    a, b = domain
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', integrate.IntegrationWarning)
        value, error = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=rel_tol, limit=500)

    if error > rel_tol * abs(value) and error > 0:
        raise AccuracyError(f"quadrature error {error:.3g} exceeds rel_tol {rel_tol:g} (value {value:.6g})")
    return value


# ============================================
# 随机流
# ============================================
@dataclass(frozen=True)
class RandomStream:
    """
    确定性随机流

    (base_seed, shard_index, sub_key) 唯一确定一条 PCG64 流；
    不同分片之间相互独立（SeedSequence spawn_key 机制）。
    """
    base_seed: int
    shard_index: int = 0
    sub_key: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 <= int(self.base_seed) < 2 ** 64:
            raise InvalidParameterError(f"base_seed must be a 64-bit unsigned integer, got {self.base_seed}")
        if self.shard_index < 0:
            raise InvalidParameterError("shard_index must be >= 0")

    def generator(self):
        """返回新的 numpy Generator（每次调用从头开始）"""
        sequence = np.random.SeedSequence(entropy=int(self.base_seed), spawn_key=(self.shard_index, *self.sub_key))
        return np.random.Generator(np.random.PCG64(sequence))

    def substream(self, index):
        """派生子流（例如探测链的各个步骤）"""
        return RandomStream(self.base_seed, self.shard_index, (*self.sub_key, int(index)))

    def shard(self, index):
        """同一种子下的第 index 个分片"""
        return RandomStream(self.base_seed, int(index), self.sub_key)
