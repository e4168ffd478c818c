"""Walk down a sparse-group LASSO path on a MIDAS design.

Six monthly indicators feed quarterly unit growth. Each one is compressed
into three Legendre regressors, which form one group, and the target's own
lag is a group of its own. As lambda shrinks, groups enter one at a time.
"""
# %%
import numpy as np

from panelnowcast.midas import MidasSpec, build_design
from panelnowcast.paneldata import NowcastClock
from panelnowcast.sglasso import GroupStructure, lambda_path, panel_cv, sg_lasso_path
from panelnowcast.simulate import synthetic_mixed_panel

ds = synthetic_mixed_panel(N=5, T=60, K=6, seed=4)
spec = {k: MidasSpec(L=3) for k in ds.covariates}
clocks = [NowcastClock(t, 3) for t in range(4, ds.T)]
d = build_design(ds, clocks, spec, Q=1)
X = np.hstack([d.ar, d.x])
groups = GroupStructure(tuple([np.array([0])] + [g + 1 for g in d.x_groups]))
print("design", X.shape, "groups", len(groups.groups))

# %% the path for a sparse-group mix
gamma = 0.5
lams = lambda_path(X, d.y, groups, gamma, n_points=12)
for lam, fit in zip(lams, sg_lasso_path(X, d.y, groups, gamma, lams)):
    active = ["ar"] * bool(fit.active_groups()[0]) + \
        [k for k, on in zip(ds.covariates, fit.active_groups()[1:]) if on]
    print(f"lambda {lam:8.4f}  nonzero {np.count_nonzero(fit.coef):2d}  groups {active}")

# %% blocked cross-validation over the full gamma grid
cv = panel_cv(X, d.y, d.period, groups, n_lambda=20)
print(f"CV picks gamma={cv.gamma:.2f} lambda={cv.lam:.4f}")
print("selected groups:", [n for n, on in zip(["ar", *ds.covariates], cv.fit.active_groups())
                           if on])
