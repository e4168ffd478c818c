"""Panel data-generating process and the four-estimator Monte Carlo.

    y_it = alpha_i + gamma * y_i,t-1 + beta_i * x_it1 + eps_it

Only the first regressor carries signal. Regressors are AR(1) around
unit-specific locations, coefficients are heterogeneous with dispersion
``sigma`` and correlated with the location of the signal regressor.
Every replication ``r`` draws from its own generator seeded with
``master_seed + r``, so results do not depend on processing order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError, PanelNowcastError
from .models import CoreFit, ModelSpec, PanelArrays, decompose_error, fit_arrays, predict_arrays

DESIGNS = ("gaussian", "student_t5")
MC_FAMILIES = ("P", "TS", "AC", "A")
SIGMA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8)
MAX_DROP_SHARE = 0.01


@dataclass(frozen=True)
class SimulationConfig:
    N: int = 10
    T: int = 35
    p: int = 50
    sigma: float = 0.0
    design: str = "gaussian"
    gamma_ar: float = 0.688
    alpha0: float = 0.0
    beta0: float = 0.5
    rho_alpha_x: float = 0.1
    rho_beta_x: float = 0.5
    sigma_eps: float = 1.0
    replications: int = 1000
    master_seed: int = 0
    burn_in: int = 100
    holdout: int = 1
    n_lambda: int = 20
    folds: int = 5
    solver: str = "bcd"

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"design must be one of {DESIGNS}")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        if not (abs(self.rho_alpha_x) <= 1 and abs(self.rho_beta_x) <= 1):
            raise ConfigError("coefficient/location correlations must lie in [-1, 1]")
        if min(self.N, self.T, self.p, self.replications, self.holdout) < 1:
            raise ConfigError("N, T, p, replications and holdout must be positive")
        if self.burn_in < 0 or self.sigma_eps < 0:
            raise ConfigError("burn_in and sigma_eps must be nonnegative")

    @property
    def phi(self) -> float:
        return self.rho_alpha_x * self.sigma

    @property
    def pi(self) -> float:
        return self.rho_beta_x * self.sigma

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimulationConfig":
        known = cls.__dataclass_fields__
        extra = set(d) - set(known)
        if extra:
            raise ConfigError(f"unknown simulation settings: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RegressorDraws:
    x: np.ndarray          # N x n_periods x p
    rho: np.ndarray        # N x p
    sig2: np.ndarray       # N x p
    mu: np.ndarray         # N x p


@dataclass
class SimulatedPanel:
    """Estimation periods ``0..T-1`` followed by ``holdout`` periods.

    ``y_init`` is the value just before the first period (the first lag).
    """

    y: np.ndarray
    y_init: np.ndarray
    x: np.ndarray
    eps: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: float
    mu: np.ndarray
    config: SimulationConfig

    def lagged(self) -> np.ndarray:
        return np.concatenate([self.y_init[:, None], self.y[:, :-1]], axis=1)

    def true_slopes(self) -> np.ndarray:
        """``N x (1 + p)`` coefficients on ``[y_t-1 | x_t]``."""
        N, p = self.x.shape[0], self.x.shape[2]
        B = np.zeros((N, 1 + p))
        B[:, 0] = self.gamma
        B[:, 1] = self.beta
        return B

    def to_dataset(self):
        """Same-frequency :class:`PanelDataset` (one high-frequency slot per period)
        covering estimation and holdout periods, with 1/N aggregate."""
        from .paneldata import Covariate, FrequencyRatio, PanelDataset

        N, n, p = self.x.shape
        covs = {f"x{j + 1}": Covariate(f"x{j + 1}", self.x[:, :, j].copy(), FrequencyRatio(1),
                                       "Q") for j in range(p)}
        return PanelDataset(tuple(f"U{i + 1:02d}" for i in range(N)),
                            tuple(f"t{t:04d}" for t in range(n)), self.y.copy(), covs,
                            aggregate=self.y.mean(axis=0))

    def arrays(self, periods=None) -> PanelArrays:
        T = self.config.T
        sl = slice(0, T) if periods is None else periods
        p = self.x.shape[2]
        return PanelArrays(self.y[:, sl], self.lagged()[:, sl, None], self.x[:, sl],
                           np.arange(self.y.shape[1])[sl], [[j] for j in range(p)])


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _draw(rng: np.random.Generator, design: str, size, unit_variance: bool = False):
    if design == "gaussian":
        return rng.standard_normal(size)
    t = rng.standard_t(5, size)
    return t / math.sqrt(5.0 / 3.0) if unit_variance else t


def simulate_regressors(cfg: SimulationConfig, seed, n_periods: Optional[int] = None
                        ) -> RegressorDraws:
    """AR(1) regressors around unit-specific locations, started in stationarity."""
    rng = _rng(seed)
    N, p = cfg.N, cfg.p
    n = cfg.burn_in + cfg.T + cfg.holdout + 1 if n_periods is None else n_periods
    rho = rng.uniform(0.0, 0.95, (N, p))
    sig2 = (1.0 + rng.chisquare(1, (N, p))) / 2.0
    z = _draw(rng, cfg.design, (N, p))
    mu = (z ** 2 - 1.0) / math.sqrt(2.0)
    sd = np.sqrt(sig2)
    # innovations have unit variance in both designs, so sig2 is the variance of xi
    nu = _draw(rng, cfg.design, (n, N, p), unit_variance=True)
    xi = np.empty((n, N, p))
    xi[0] = sd * nu[0]
    scale = sd * np.sqrt(1.0 - rho ** 2)
    for t in range(1, n):
        xi[t] = rho * xi[t - 1] + scale * nu[t]
    x = mu[:, None, :] + xi.transpose(1, 0, 2)
    return RegressorDraws(x, rho, sig2, mu)


def simulate_coefficients(cfg: SimulationConfig, mu_first, seed):
    """Intercepts and signal slopes correlated with the signal regressor's location."""
    rng = _rng(seed)
    mu1 = np.asarray(mu_first, dtype=float)
    s_eta = math.sqrt(max(cfg.sigma ** 2 - cfg.phi ** 2, 0.0))
    s_zeta = math.sqrt(max(cfg.sigma ** 2 - cfg.pi ** 2, 0.0))
    eta = _draw(rng, cfg.design, len(mu1))
    zeta = _draw(rng, cfg.design, len(mu1))
    alpha = cfg.alpha0 + cfg.phi * mu1 + s_eta * eta
    beta = cfg.beta0 + cfg.pi * mu1 + s_zeta * zeta
    return alpha, beta


def simulate_panel(cfg: SimulationConfig, seed) -> SimulatedPanel:
    rng = _rng(seed)
    N, T, H, B = cfg.N, cfg.T, cfg.holdout, cfg.burn_in
    n = B + T + H + 1
    reg = simulate_regressors(cfg, rng, n)
    alpha, beta = simulate_coefficients(cfg, reg.mu[:, 0], rng)
    # unit-variance zeta keeps eps centred with variance sigma_eps^2 under t(5) too
    zeta = _draw(rng, cfg.design, (N, n), unit_variance=True)
    eps = cfg.sigma_eps * (zeta ** 2 - 1.0) / math.sqrt(2.0)
    g = cfg.gamma_ar
    y = np.empty((N, n))
    y[:, 0] = alpha / (1.0 - g)
    x1 = reg.x[:, :, 0]
    for t in range(1, n):
        y[:, t] = alpha + g * y[:, t - 1] + beta * x1[:, t] + eps[:, t]
    keep = slice(B + 1, n)
    return SimulatedPanel(
        y=y[:, keep].copy(),
        y_init=y[:, B].copy(),
        x=reg.x[:, keep].copy(),
        eps=eps[:, keep].copy(),
        alpha=alpha,
        beta=beta,
        gamma=g,
        mu=reg.mu,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Monte Carlo


def mc_model_spec(cfg: SimulationConfig, family: str) -> ModelSpec:
    # plain LASSO (gamma = 1) with the lambda chosen by blocked CV
    return ModelSpec(family, Q=1, penalty="cv", gamma_grid=(1.0,), n_lambda=cfg.n_lambda,
                     folds=cfg.folds, solver=cfg.solver)


def fit_families(panel: SimulatedPanel, families=MC_FAMILIES) -> dict:
    cfg = panel.config
    pa = panel.arrays()
    w = np.full(cfg.N, 1.0 / cfg.N)
    return {k: fit_arrays(k, pa, mc_model_spec(cfg, k), w if k in ("A", "AC") else None)
            for k in families}


def aggregate_predictions(fits: Mapping[str, CoreFit], panel: SimulatedPanel, h: int = 1
                          ) -> dict:
    """Aggregate one-step-ahead predictions for holdout period ``T + h``."""
    cfg = panel.config
    t = cfg.T + h - 1
    w = np.full(cfg.N, 1.0 / cfg.N)
    ar = panel.lagged()[:, t, None]
    x = panel.x[:, t]
    out = {}
    for k, core in fits.items():
        units, agg = predict_arrays(core, ar, x)
        if agg is None:
            if np.any(np.isnan(units)):
                raise NumericError(f"{k}: a unit fit failed")
            agg = float(w @ units)
        out[k] = agg
    return out


def replicate(cfg: SimulationConfig, r: int, families=MC_FAMILIES):
    """Squared aggregate errors of every family, averaged over the holdout."""
    panel = simulate_panel(cfg, cfg.master_seed + r)
    fits = fit_families(panel, families)
    err = {k: 0.0 for k in families}
    for h in range(1, cfg.holdout + 1):
        truth = float(panel.y[:, cfg.T + h - 1].mean())
        for k, v in aggregate_predictions(fits, panel, h).items():
            err[k] += (v - truth) ** 2 / cfg.holdout
    return err


def _safe_replicate(args):
    cfg, r, families = args
    try:
        return r, replicate(cfg, r, families), None
    except PanelNowcastError as exc:
        return r, None, f"{type(exc).__name__}: {exc}"


@dataclass
class McCell:
    config: SimulationConfig
    completed: int
    dropped: int
    mse: dict
    mse_se: dict
    ratio: dict
    ratio_se: dict
    drop_reasons: dict = field(default_factory=dict)


def summarize(cfg: SimulationConfig, errors: Mapping[int, Mapping[str, float]],
              families=MC_FAMILIES, base: str = "P") -> McCell:
    """MSEs, ratios to ``base`` and Monte Carlo standard errors.

    Ratio standard errors use the delta method on the paired squared errors.
    Replications are reduced in index order with exact summation.
    """
    reps = sorted(errors)
    R = len(reps)
    if R == 0:
        raise NumericError("no replication completed")
    E = {k: np.array([errors[r][k] for r in reps]) for k in families}
    mse = {k: math.fsum(E[k]) / R for k in families}
    sd = {k: float(np.std(E[k], ddof=1)) if R > 1 else float("nan") for k in families}
    mse_se = {k: sd[k] / math.sqrt(R) for k in families}
    ratio, ratio_se = {}, {}
    for k in families:
        ratio[k] = mse[k] / mse[base]
        d = E[k] - ratio[k] * E[base]
        ratio_se[k] = (float(np.std(d, ddof=1)) / math.sqrt(R) / mse[base]) if R > 1 else \
            float("nan")
    ratio[base] = 1.0
    ratio_se[base] = 0.0
    return McCell(cfg, R, cfg.replications - R, mse, mse_se, ratio, ratio_se)


def run_monte_carlo(cfg: SimulationConfig, families: Sequence[str] = MC_FAMILIES,
                    workers: int = 1, replications: Optional[Sequence[int]] = None) -> McCell:
    """Run ``cfg.replications`` replications and summarize them.

    Failing replications are dropped and counted; more than 1% dropped is
    an error. ``replications`` overrides the processing order (results do
    not depend on it).
    """
    families = tuple(families)
    if "P" not in families:
        raise ConfigError("the pooled family is the benchmark and must be included")
    order = list(range(cfg.replications)) if replications is None else list(replications)
    if sorted(order) != list(range(cfg.replications)):
        raise ConfigError("replication order must be a permutation of 0..R-1")
    tasks = [(cfg, r, families) for r in order]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_replicate, tasks, chunksize=4))
    else:
        results = [_safe_replicate(t) for t in tasks]
    errors = {r: e for r, e, _ in results if e is not None}
    reasons = {r: m for r, _, m in results if m is not None}
    if len(reasons) > MAX_DROP_SHARE * cfg.replications:
        raise NumericError(f"{len(reasons)} of {cfg.replications} replications failed "
                           f"(first: {next(iter(sorted(reasons.items())))})")
    cell = summarize(cfg, errors, families)
    cell.drop_reasons = dict(sorted(reasons.items()))
    return cell


@dataclass
class McResultTable:
    cells: list

    def lookup(self, N, T, p, sigma, design) -> McCell:
        for c in self.cells:
            k = c.config
            if (k.N, k.T, k.p, k.design) == (N, T, p, design) and math.isclose(k.sigma, sigma):
                return c
        raise KeyError((N, T, p, sigma, design))

    def write_table(self, path, families=("TS", "AC", "A")) -> None:
        """Relative MSEs: one row per (sigma, N, T), column blocks per (design, p)."""
        blocks = sorted({(c.config.design, c.config.p) for c in self.cells},
                        key=lambda b: (DESIGNS.index(b[0]), b[1]))
        rows = sorted({(c.config.sigma, c.config.N, c.config.T) for c in self.cells},
                      key=lambda r: (r[0], r[2], r[1]))
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["sigma", "N", "T"] + [f"{d}_p{p}_{k}" for d, p in blocks
                                                for k in families])
            for s, N, T in rows:
                line = [f"{s:g}", N, T]
                for d, p in blocks:
                    try:
                        c = self.lookup(N, T, p, s, d)
                        line += [f"{c.ratio[k]:.3f}" for k in families]
                    except KeyError:
                        line += [""] * len(families)
                out.writerow(line)

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["design", "p", "sigma", "N", "T", "family", "replications",
                          "dropped", "mse", "mse_se", "ratio_vs_P", "ratio_se"])
            for c in self.cells:
                k = c.config
                for fam in c.mse:
                    out.writerow([k.design, k.p, f"{k.sigma:g}", k.N, k.T, fam, c.completed,
                                  c.dropped, repr(c.mse[fam]), repr(c.mse_se[fam]),
                                  repr(c.ratio[fam]), repr(c.ratio_se[fam])])


def grid_configs(base: SimulationConfig, N=(10, 20), T=(35, 100), p=(50, 500),
                 sigma=SIGMA_GRID, design=DESIGNS) -> list:
    return [replace(base, N=n, T=t, p=q, sigma=s, design=d)
            for d in design for q in p for s in sigma for n in N for t in T]


def run_grid(configs: Sequence[SimulationConfig], workers: int = 1) -> McResultTable:
    return McResultTable([run_monte_carlo(c, workers=workers) for c in configs])


# ---------------------------------------------------------------------------
# error decomposition on simulated data


def msfe_decomposition_report(panel: SimulatedPanel, fits: Mapping[str, CoreFit], h: int = 1
                              ) -> dict:
    """Estimation, heterogeneity and noise terms of each family's aggregate error."""
    cfg = panel.config
    t = cfg.T + h - 1
    w = np.full(cfg.N, 1.0 / cfg.N)
    z = np.concatenate([panel.lagged()[:, t, None], panel.x[:, t]], axis=1)
    truth = float(w @ panel.y[:, t])
    return {k: decompose_error(core, z, w, panel.alpha, panel.true_slopes(), panel.eps[:, t],
                               truth)
            for k, core in fits.items()}


# ---------------------------------------------------------------------------
# mixed-frequency synthetic panels (for demos and end-to-end checks)


def synthetic_mixed_panel(N: int = 4, T: int = 40, K: int = 2, seed=0, noise: float = 0.3,
                          heterogeneity: float = 0.0, ar: float = 0.3, release_lag: int = 0,
                          with_aggregate: bool = True):
    """Quarterly targets driven by monthly covariates.

    ``y_it = a_i + ar * y_i,t-1 + sum_k b_ik * mean(x_ik over the quarter) + e_it``.
    Levels compound the growth rates from unit-specific starting sizes; the
    aggregate target is the level-weighted mean of unit growth.
    """
    from .paneldata import Covariate, FrequencyRatio, PanelDataset

    rng = np.random.default_rng(seed)
    n_m = 3 * T
    xs = np.empty((K, N, n_m))
    for k in range(K):
        e = rng.standard_normal((N, n_m))
        xs[k, :, 0] = e[:, 0]
        for m in range(1, n_m):
            xs[k, :, m] = 0.5 * xs[k, :, m - 1] + e[:, m]
    b = 1.0 + heterogeneity * rng.standard_normal((N, K))
    b[:, 1:] *= 0.5
    a = 0.5 + heterogeneity * rng.standard_normal(N)
    q = xs.reshape(K, N, T, 3).mean(axis=3)
    y = np.empty((N, T))
    prev = a / (1 - ar)
    for t in range(T):
        y[:, t] = a + ar * prev + np.einsum("nk,kn->n", b, q[:, :, t]) + \
            noise * rng.standard_normal(N)
        prev = y[:, t]
    size = rng.uniform(1.0, 10.0, N)
    levels = size[:, None] * np.cumprod(1.0 + y / 100.0, axis=1)
    agg = None
    if with_aggregate:
        lw = np.concatenate([levels[:, :1], levels[:, :-1]], axis=1)
        agg = (lw * y).sum(axis=0) / lw.sum(axis=0)
    covs = {f"x{k + 1}": Covariate(f"x{k + 1}", xs[k], FrequencyRatio(3), "M", release_lag)
            for k in range(K)}
    start = 2000
    labels = tuple(f"{start + t // 4}-Q{t % 4 + 1}" for t in range(T))
    return PanelDataset(tuple(f"U{i + 1:02d}" for i in range(N)), labels, y, covs, levels,
                        agg, "gdp", "gdp_level", "EA" if with_aggregate else None)
