"""The four aggregation weight schemes on a synthetic panel.

W1 and W2 use shares of absolute growth (full history and last period), W3
uses last-period level shares, and W4 regresses the published aggregate on
the unit series under simplex constraints.
"""
# %%
import numpy as np

from panelnowcast.aggregation import group_share_ratio, weight_schedule
from panelnowcast.simulate import synthetic_mixed_panel

ds = synthetic_mixed_panel(N=6, T=40, seed=2)
periods = range(20, 40)
sched = {s: weight_schedule(ds, s, periods) for s in ("W1", "W2", "W3", "W4")}

# %% weights at the last period
print("unit   " + "  ".join(f"{s:>6}" for s in sched))
for i, u in enumerate(ds.unit_ids):
    print(f"{u:6} " + "  ".join(f"{sched[s][-1].weights[i]:6.3f}" for s in sched))

# %% level weights vs the regression weights; the aggregate is level-weighted,
# so W4 should track W3 closely
gap = [np.abs(a.weights - b.weights).max() for a, b in zip(sched["W3"], sched["W4"])]
print(f"max |W3 - W4| over {len(gap)} periods: {max(gap):.3f}")

# %% share of the first three units relative to the last three
small, big = [0, 1, 2], [3, 4, 5]
for s in sched:
    r = [group_share_ratio(w, small, big) for w in sched[s]]
    print(f"{s}: share ratio first {r[0]:.3f}  last {r[-1]:.3f}")
