"""Gamma/log-link mixed model with one random intercept per group.

The response ``y`` has mean ``mu = exp(X beta + b[g])`` and Gamma shape ``nu``
(variance ``mu**2 / nu``); group intercepts are ``b ~ N(0, sigma_b^2)``.

Estimation is maximum Laplace-approximated marginal likelihood:

* inner loop: a penalized Newton (IRLS with observed weights) solve for the
  joint mode of ``(beta, b)`` at fixed ``(sigma_b^2, nu)``.  Random effects
  are carried as ``b = sigma_b * u`` so the system stays well conditioned as
  ``sigma_b -> 0``;
* outer loop: Nelder-Mead over ``(log sigma_b^2, log nu)``, checked against
  the ``sigma_b^2 = variance_floor`` boundary profiled over ``nu`` alone.

Predictors are standardized before fitting and coefficients are reported on
that scale.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from .covariates import PREDICTORS, standardize
from .errors import (
    NoConvergence,
    NonPositiveResponse,
    RankDeficientDesign,
    SingleGroup,
    ZeroTotalVariance,
)

INTERCEPT = "(Intercept)"

# (upper p bound, mark), checked in order
SIGNIFICANCE_LEVELS = ((0.0001, "***"), (0.001, "**"), (0.05, "*"), (0.1, "."))


@dataclass(frozen=True)
class ModelSpec:
    response: str = "trl"
    predictors: tuple[str, ...] = PREDICTORS
    group: str = "county"
    family: str = "gamma"
    link: str = "log"

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if not self.predictors:
            raise ValueError("at least one predictor is required")
        if len(set(self.predictors)) != len(self.predictors):
            raise ValueError("duplicate predictor names")
        if self.group in self.predictors or self.response in self.predictors:
            raise ValueError("group and response must not be predictors")
        if (self.family, self.link) != ("gamma", "log"):
            raise ValueError("only the Gamma family with log link is supported")


@dataclass(frozen=True)
class FitControls:
    max_outer_iter: int = 200
    max_inner_iter: int = 100
    tol_inner: float = 1e-10
    tol_outer: float = 1e-8
    variance_floor: float = 1e-12

    def __post_init__(self):
        if min(self.max_outer_iter, self.max_inner_iter) <= 0 or min(
                self.tol_inner, self.tol_outer, self.variance_floor) <= 0:
            raise ValueError("fit controls must all be positive")


@dataclass(frozen=True, eq=False)
class GlmmFit:
    names: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    sigma2_group: float
    sigma2_resid: float
    shape: float
    b_hat: np.ndarray
    groups: tuple
    loglik: float
    aic: float
    bic: float
    r2_marginal: float
    r2_conditional: float
    n_obs: int
    n_groups: int
    k_params: int
    converged: bool = True
    boundary: bool = False
    single_group: bool = False
    inner_iterations: int = 0
    outer_iterations: int = 0
    outer_trace: tuple[float, ...] = ()
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    # design as fitted (standardized, intercept first); kept for diagnostics
    design: np.ndarray = field(default=None, repr=False)
    response: np.ndarray = field(default=None, repr=False)
    group_index: np.ndarray = field(default=None, repr=False)

    @property
    def mu(self) -> np.ndarray:
        eta = self.design @ self.beta
        if len(self.b_hat):
            eta = eta + self.b_hat[self.group_index]
        return np.exp(eta)

    def raw_slopes(self) -> tuple[np.ndarray, np.ndarray]:
        """Slopes and standard errors per unit of each unstandardized predictor."""
        stds = self.stds if self.stds is not None else np.ones(len(self.beta) - 1)
        return self.beta[1:] / stds, self.se[1:] / stds

    def variance_partition(self) -> float:
        return variance_partition(self.sigma2_group, self.sigma2_resid)

    def table(self) -> pd.DataFrame:
        return wald_table(self)


# ----------------------------------------------------------------------------
# small formulas


def gamma_loglik(y, mu, shape) -> float:
    """Gamma log-likelihood in the (mean, shape) parameterization."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = float(shape)
    return float(np.sum(nu * np.log(nu) - nu * np.log(mu) + (nu - 1) * np.log(y)
                        - nu * y / mu - special.gammaln(nu)))


def information_criteria(loglik: float, k_params: int, n_obs: int) -> tuple[float, float]:
    if n_obs <= 0:
        raise ValueError("n_obs must be positive")
    return -2.0 * loglik + 2.0 * k_params, -2.0 * loglik + k_params * math.log(n_obs)


def exp_coefficient(beta):
    """Multiplicative change in the mean per unit change of the predictor."""
    out = np.exp(np.asarray(beta, dtype=float))
    return float(out) if out.ndim == 0 else out


def variance_partition(sigma2_group, sigma2_resid=None) -> float:
    """Share of latent-scale variance attributable to the grouping factor.

    Accepts a fitted model or the two variance components.
    """
    if sigma2_resid is None:
        sigma2_group, sigma2_resid = sigma2_group.sigma2_group, sigma2_group.sigma2_resid
    total = sigma2_group + sigma2_resid
    if total <= 0:
        raise ZeroTotalVariance("both variance components are zero")
    return float(sigma2_group / total)


def distribution_variance(shape: float) -> float:
    """Observation-level variance of a Gamma on the log scale (lognormal approx.)."""
    return math.log1p(1.0 / shape)


def nakagawa_r2(var_fixed: float, var_group: float, var_dist: float) -> tuple[float, float]:
    total = var_fixed + var_group + var_dist
    if total <= 0:
        return 0.0, 0.0
    return var_fixed / total, (var_fixed + var_group) / total


def r2_nakagawa(fit: GlmmFit) -> tuple[float, float]:
    """Marginal and conditional R^2 of a fitted model."""
    var_fixed = float(np.var(fit.design @ fit.beta, ddof=1))
    return nakagawa_r2(var_fixed, fit.sigma2_group, distribution_variance(fit.shape))


def significance_stars(p: float, levels=SIGNIFICANCE_LEVELS) -> str:
    for bound, mark in levels:
        if p < bound:
            return mark
    return ""


def wald(beta, se) -> tuple[np.ndarray, np.ndarray]:
    beta = np.asarray(beta, dtype=float)
    se = np.asarray(se, dtype=float)
    t = beta / se
    return t, 2.0 * stats.norm.sf(np.abs(t))


def wald_table(fit=None, *, beta=None, se=None, names=None,
               levels=SIGNIFICANCE_LEVELS) -> pd.DataFrame:
    """Per-coefficient estimate, SE, Wald z, two-sided normal p and stars."""
    if fit is not None:
        beta, se, names = fit.beta, fit.se, fit.names
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    se = np.atleast_1d(np.asarray(se, dtype=float))
    if names is None:
        names = [f"b{j}" for j in range(len(beta))]
    t, p = wald(beta, se)
    return pd.DataFrame({
        "term": list(names),
        "estimate": beta,
        "se": se,
        "t": t,
        "p": p,
        "exp_estimate": np.exp(beta),
        "stars": [significance_stars(v, levels) for v in p],
    })


# ----------------------------------------------------------------------------
# fixed-effects GLM


def _check_response(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or len(y) == 0:
        raise NonPositiveResponse("response must be a non-empty vector")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise NonPositiveResponse("Gamma response must be finite and strictly positive")
    return y


def check_design(X, names: Sequence[str] | None = None) -> np.ndarray:
    """Reject designs whose singular values fall below ``1e-10 * s_max``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise RankDeficientDesign("design must be a finite 2-d matrix")
    n, k = X.shape
    if n <= k:
        raise RankDeficientDesign(f"need more rows than coefficients (n={n}, k={k})")
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    null = s <= 1e-10 * s[0]
    if np.any(null):
        cols = np.flatnonzero(np.any(np.abs(vt[null]) > 1e-8, axis=0))
        labels = [names[j] if names else str(j) for j in cols]
        raise RankDeficientDesign(f"design is rank deficient in columns {labels}", labels)
    return X


def _finish(names, beta, cov, shape, loglik, k, n, *, design, y, gidx, groups,
            sigma2_group, b_hat, means=None, stds=None, **flags) -> GlmmFit:
    se = np.sqrt(np.diag(cov))
    t, p = wald(beta, se)
    aic, bic = information_criteria(loglik, k, n)
    var_fixed = float(np.var(design @ beta, ddof=1))
    var_dist = distribution_variance(shape)
    r2m, r2c = nakagawa_r2(var_fixed, sigma2_group, var_dist)
    return GlmmFit(
        names=tuple(names), beta=beta, se=se, t_stats=t, p_values=p,
        sigma2_group=float(sigma2_group), sigma2_resid=var_dist, shape=float(shape),
        b_hat=b_hat, groups=tuple(groups), loglik=float(loglik), aic=aic, bic=bic,
        r2_marginal=r2m, r2_conditional=r2c, n_obs=n, n_groups=len(groups),
        k_params=k, means=means, stds=stds, design=design, response=y,
        group_index=gidx, **flags)


def _glm_irls(y, X, controls: FitControls):
    """IRLS for the Gamma/log GLM.  Working weights are constant, so the QR
    factorization of ``X`` is reused every iteration."""
    q, r = np.linalg.qr(X)
    beta = np.linalg.solve(r, q.T @ np.log(y))

    def objective(b):
        eta = X @ b
        return float(np.sum(-eta - y * np.exp(-eta)))

    current = objective(beta)
    for it in range(1, controls.max_inner_iter + 1):
        eta = X @ beta
        z = eta + y * np.exp(-eta) - 1.0
        step = np.linalg.solve(r, q.T @ z) - beta
        scale = 1.0
        while True:
            trial = beta + scale * step
            value = objective(trial)
            if value >= current - 1e-12 * abs(current) or scale < 1e-10:
                break
            scale /= 2
        change = np.max(np.abs(trial - beta)) / max(1.0, np.max(np.abs(trial)))
        beta, current = trial, value
        if change < controls.tol_inner:
            return beta, it
    raise NoConvergence(f"GLM IRLS did not converge in {controls.max_inner_iter} iterations")


def fit_glm(y, X, controls: FitControls = FitControls(),
            names: Sequence[str] | None = None) -> GlmmFit:
    """Gamma/log GLM by IRLS; the shape comes from the Pearson statistic.

    ``X`` must include the intercept column.
    """
    y = _check_response(y)
    X = check_design(X, names)
    n, k = X.shape
    beta, iters = _glm_irls(y, X, controls)
    mu = np.exp(X @ beta)
    pearson = float(np.sum(((y - mu) / mu) ** 2))
    shape = (n - k) / pearson
    cov = np.linalg.inv(X.T @ X) / shape
    names = names or [INTERCEPT] + [f"x{j}" for j in range(1, k)]
    return _finish(names, beta, cov, shape, gamma_loglik(y, mu, shape), k + 1, n,
                   design=X, y=y, gidx=np.zeros(n, dtype=int), groups=(),
                   sigma2_group=0.0, b_hat=np.zeros(0), inner_iterations=iters)


# ----------------------------------------------------------------------------
# Laplace machinery


class _RandomInterceptLaplace:
    def __init__(self, y, X, gidx, n_groups, controls: FitControls):
        self.y, self.X, self.gidx = y, X, gidx
        self.n_groups = n_groups
        self.controls = controls
        self.Z = np.zeros((len(y), n_groups))
        self.Z[np.arange(len(y)), gidx] = 1.0
        self.sum_logy = float(np.sum(np.log(y)))
        self.n = len(y)
        self.state = None
        self.inner_iterations = 0

    def _penalized(self, beta, u, sigma, nu):
        eta = self.X @ beta + sigma * u[self.gidx]
        with np.errstate(over="ignore"):
            val = float(np.sum(-nu * eta - nu * self.y * np.exp(-eta)) - 0.5 * u @ u)
        return val if np.isfinite(val) else -np.inf

    def mode(self, sigma, nu, start=None):
        """Joint mode of (beta, u) and the per-group observed information sums."""
        X, Z, y, g = self.X, self.Z, self.y, self.gidx
        beta, u = start if start is not None else self.state
        beta, u = beta.copy(), u.copy()
        current = self._penalized(beta, u, sigma, nu)
        for it in range(1, self.controls.max_inner_iter + 1):
            eta = X @ beta + sigma * u[g]
            q = y * np.exp(-eta)
            r = nu * (q - 1.0)
            w = nu * q
            g_beta = X.T @ r
            g_u = sigma * (Z.T @ r) - u
            XtW = X.T * w
            A = XtW @ X
            B = sigma * (XtW @ Z)
            D = sigma ** 2 * (Z.T @ w) + 1.0
            S = A - (B / D) @ B.T
            d_beta = np.linalg.solve(S, g_beta - B @ (g_u / D))
            d_u = (g_u - B.T @ d_beta) / D
            scale = 1.0
            while True:
                nb, nu_ = beta + scale * d_beta, u + scale * d_u
                value = self._penalized(nb, nu_, sigma, nu)
                if value >= current - 1e-12 * abs(current) or scale < 1e-10:
                    break
                scale /= 2
            size = max(np.max(np.abs(nb)), np.max(np.abs(nu_), initial=0.0), 1.0)
            change = max(np.max(np.abs(nb - beta)),
                         np.max(np.abs(nu_ - u), initial=0.0)) / size
            beta, u, current = nb, nu_, value
            if change < self.controls.tol_inner:
                self.inner_iterations += it
                return beta, u
        raise NoConvergence(
            f"penalized IRLS did not converge in {self.controls.max_inner_iter} iterations")

    def information(self, beta, u, sigma, nu):
        eta = self.X @ beta + sigma * u[self.gidx]
        w = nu * self.y * np.exp(-eta)
        XtW = self.X.T * w
        A = XtW @ self.X
        B = sigma * (XtW @ self.Z)
        D = sigma ** 2 * (self.Z.T @ w) + 1.0
        return A, B, D

    def loglik_at(self, beta, u, sigma, nu) -> float:
        eta = self.X @ beta + sigma * u[self.gidx]
        data = (self.n * (nu * math.log(nu) - special.gammaln(nu))
                + (nu - 1.0) * self.sum_logy
                + float(np.sum(-nu * eta - nu * self.y * np.exp(-eta))))
        _, _, D = self.information(beta, u, sigma, nu)
        return data - 0.5 * float(u @ u) - 0.5 * float(np.sum(np.log(D)))

    def params(self, theta):
        sigma2 = max(math.exp(min(theta[0], 50.0)), self.controls.variance_floor)
        nu = math.exp(min(max(theta[1], -20.0), 20.0))
        return sigma2, nu

    def __call__(self, theta) -> float:
        sigma2, nu = self.params(theta)
        sigma = math.sqrt(sigma2)
        beta, u = self.mode(sigma, nu)
        self.state = (beta, u)
        return self.loglik_at(beta, u, sigma, nu)


def laplace_loglik(y, X, group_index, sigma2: float, shape: float,
                   controls: FitControls = FitControls()) -> float:
    """Laplace-approximated marginal log-likelihood at fixed variance parameters."""
    y = _check_response(y)
    gidx = np.asarray(group_index, dtype=int)
    G = int(gidx.max()) + 1
    lap = _RandomInterceptLaplace(y, np.asarray(X, float), gidx, G, controls)
    beta0, _ = _glm_irls(y, lap.X, controls)
    lap.state = (beta0, np.zeros(G))
    return lap((math.log(max(sigma2, controls.variance_floor)), math.log(shape)))


def penalized_gradient(fit: GlmmFit) -> np.ndarray:
    """Gradient of the joint penalized log-likelihood in (beta, b) at the fit."""
    X, y, g = fit.design, fit.response, fit.group_index
    r = fit.shape * (y / fit.mu - 1.0)
    if fit.sigma2_group <= 0:
        # boundary or GLM fallback: the group effects are pinned at zero
        return np.concatenate([X.T @ r, np.zeros(fit.n_groups)])
    grad_b = np.bincount(g, weights=r, minlength=fit.n_groups) - fit.b_hat / fit.sigma2_group
    return np.concatenate([X.T @ r, grad_b])


# ----------------------------------------------------------------------------
# GLMM


def _prepare(rows, spec: ModelSpec, standardize_predictors: bool):
    df = pd.DataFrame(rows) if not isinstance(rows, pd.DataFrame) else rows
    missing = [c for c in (spec.response, spec.group, *spec.predictors) if c not in df.columns]
    if missing:
        raise KeyError(f"rows lack column(s): {', '.join(missing)}")
    y = _check_response(df[spec.response].to_numpy(dtype=float))
    raw = df[list(spec.predictors)].to_numpy(dtype=float)
    if standardize_predictors:
        sm = standardize(raw, spec.predictors)
        Z, means, stds = sm.values, sm.means, sm.stds
    else:
        Z, means, stds = raw, None, None
    X = np.column_stack([np.ones(len(y)), Z])
    names = (INTERCEPT, *spec.predictors)
    X = check_design(X, names)
    labels, gidx = np.unique(df[spec.group].astype(str).to_numpy(), return_inverse=True)
    return y, X, names, labels, gidx, means, stds


def fit_glmm(rows, spec: ModelSpec = ModelSpec(), controls: FitControls = FitControls(),
             *, standardize_predictors: bool = True,
             on_single_group: str = "fallback") -> GlmmFit:
    """Fit the Gamma/log random-intercept model by Laplace approximation.

    Parameters
    ----------
    rows : DataFrame or sequence of mappings
        Must contain the response, predictors and group columns named in
        ``spec``.
    on_single_group : {"fallback", "raise"}
        With a single group the random-intercept variance is not identified.
        ``"fallback"`` returns the fixed-effects GLM with ``single_group=True``
        (and a warning); ``"raise"`` raises ``SingleGroup``.

    Returns
    -------
    GlmmFit
        Coefficients on the standardized predictor scale; ``boundary`` is set
        when the group variance sits at ``controls.variance_floor``.
    """
    y, X, names, labels, gidx, means, stds = _prepare(rows, spec, standardize_predictors)
    n, k = X.shape
    glm = fit_glm(y, X, controls, names)
    if len(labels) < 2:
        if on_single_group == "raise":
            raise SingleGroup("one group only: the group variance is not identified")
        warnings.warn("single group: fitted the fixed-effects GLM instead", stacklevel=2)
        return _finish(names, glm.beta, np.diag(glm.se ** 2), glm.shape, glm.loglik,
                       glm.k_params, n, design=X, y=y, gidx=gidx, groups=tuple(labels),
                       sigma2_group=0.0, b_hat=np.zeros(len(labels)), means=means,
                       stds=stds, single_group=True, inner_iterations=glm.inner_iterations)

    G = len(labels)
    lap = _RandomInterceptLaplace(y, X, gidx, G, controls)
    start_state = (glm.beta.copy(), np.zeros(G))
    lap.state = start_state

    cache: dict[bytes, float] = {}

    def negative(theta):
        key = np.asarray(theta, dtype=float).tobytes()
        if key not in cache:
            cache[key] = -lap(theta)
        return cache[key]

    trace: list[float] = []

    def record(xk):
        trace.append(-negative(xk))

    x0 = np.array([math.log(0.1), 0.0])
    simplex = np.array([x0, x0 + [1.0, 0.0], x0 + [0.0, 1.0]])
    res = optimize.minimize(
        negative, x0, method="Nelder-Mead", callback=record,
        options={"initial_simplex": simplex, "xatol": 1e-7, "fatol": controls.tol_outer,
                 "maxiter": controls.max_outer_iter, "maxfev": 10 * controls.max_outer_iter})
    if not res.success:
        raise NoConvergence(f"outer optimization stopped: {res.message}")
    candidates = [(-float(res.fun), res.x)]

    # boundary: sigma_b^2 at the floor, shape profiled; beta is the GLM's there
    floor_theta = math.log(controls.variance_floor)
    lap.state = start_state
    prof = optimize.minimize_scalar(
        lambda t: negative([floor_theta, t]), bounds=(-20.0, 20.0), method="bounded",
        options={"xatol": 1e-10})
    candidates.append((-float(prof.fun), np.array([floor_theta, prof.x])))

    best_ll, best = max(candidates, key=lambda c: c[0])
    sigma2, nu = lap.params(best)
    boundary = sigma2 <= controls.variance_floor * (1 + 1e-9)
    sigma = math.sqrt(sigma2)
    lap.state = start_state
    beta, u = lap.mode(sigma, nu)
    loglik = lap.loglik_at(beta, u, sigma, nu)

    A, B, D = lap.information(beta, u, sigma, nu)
    cov = np.linalg.inv(A - (B / D) @ B.T)
    return _finish(names, beta, cov, nu, loglik, k + 2, n, design=X, y=y, gidx=gidx,
                   groups=tuple(labels), sigma2_group=0.0 if boundary else sigma2,
                   b_hat=sigma * u, means=means, stds=stds, boundary=boundary,
                   inner_iterations=lap.inner_iterations, outer_iterations=int(res.nit),
                   outer_trace=tuple(trace))


# ----------------------------------------------------------------------------
# report


def model_report(fit: GlmmFit, spec: ModelSpec = ModelSpec(),
                 controls: FitControls = FitControls()) -> dict:
    """JSON-ready description of a fit (the ``model.json`` payload)."""
    table = wald_table(fit)
    return {
        "spec": {**asdict(spec), "predictors": list(spec.predictors)},
        "controls": asdict(controls),
        "coefficients": [
            {"term": r.term, "estimate": float(r.estimate), "se": float(r.se),
             "t": float(r.t), "p": float(r.p), "exp_estimate": float(r.exp_estimate),
             "stars": r.stars}
            for r in table.itertuples(index=False)
        ],
        "p_value_reference": "standard normal",
        "sigma2_group": fit.sigma2_group,
        "sigma2_resid": fit.sigma2_resid,
        "sigma2_resid_definition": "log(1 + 1/shape)",
        "shape": fit.shape,
        "variance_partition": (variance_partition(fit)
                               if fit.sigma2_group + fit.sigma2_resid > 0 else None),
        "loglik": fit.loglik,
        "aic": fit.aic,
        "bic": fit.bic,
        "r2_marginal": fit.r2_marginal,
        "r2_conditional": fit.r2_conditional,
        "n_obs": fit.n_obs,
        "n_groups": fit.n_groups,
        "k_params": fit.k_params,
        "convergence": {
            "converged": fit.converged,
            "boundary_variance": fit.boundary,
            "single_group": fit.single_group,
            "inner_iterations": fit.inner_iterations,
            "outer_iterations": fit.outer_iterations,
        },
        "standardization": {
            "columns": list(spec.predictors),
            "means": None if fit.means is None else [float(m) for m in fit.means],
            "stds": None if fit.stds is None else [float(s) for s in fit.stds],
        },
        "random_effects": {str(g): float(b) for g, b in zip(fit.groups, fit.b_hat)},
    }
