"""Scratch: measure surrogate statistics to tune constants (not shipped)."""
import numpy as np
import sys
sys.path.insert(0, "src")
from mhrkit import data as D

rng = np.random.default_rng(0)

# 1. shrinkage bounds in-box and on the +-20% envelope
hs = np.linspace(1.04, 4.69, 41)
ts = np.linspace(0.08, 0.32, 41)
svals = np.array([[D.shrinkage_fraction(h, t) for t in ts] for h in hs])
print(f"shrink in-box: [{svals.min():.4f}, {svals.max():.4f}]")
hs2 = np.linspace(1.04*0.8, 4.69*1.2, 41)
ts2 = np.linspace(0.08*0.8, 0.32*1.2, 41)
s2 = np.array([[D.shrinkage_fraction(h, t) for t in ts2] for h in hs2])
print(f"shrink +-20%:  [{s2.min():.4f}, {s2.max():.4f}]")

# 2. frequency positivity and f2 range over envelope
fmin, f2lo, f2hi = 1e18, 1e18, -1e18
for _ in range(20000):
    h = rng.uniform(1.04*0.8, 4.69*1.2)
    r = rng.uniform(0.34*0.8, 1.36*1.2)
    t = rng.uniform(0.08*0.8, 0.32*1.2)
    s = D.surrogate_oracle(h, r, t, 0)
    fmin = min(fmin, s.f1, s.f2, s.f3, s.fb, s.fr, s.fs)
    f2lo, f2hi = min(f2lo, s.f2), max(f2hi, s.f2)
print(f"envelope: min mode freq {fmin:.0f} Hz, f2 in [{f2lo:.0f}, {f2hi:.0f}] Hz")

# 3. coupling fraction on random in-range samples
def delta_f(s):
    others = [s.f1, s.f3, s.fb, s.fr, s.fs]
    return min(abs(s.f2 - f) for f in others)

couple = 0
n = 20000
argmins = np.zeros(5)
for _ in range(n):
    h = rng.uniform(1.04, 4.69)
    r = rng.uniform(0.34, 1.36)
    t = rng.uniform(0.08, 0.32)
    s = D.surrogate_oracle(h, r, t, 0)
    df = delta_f(s)
    if df < 1000.0:
        couple += 1
        gaps = [abs(s.f2-f) for f in (s.f1, s.f3, s.fb, s.fr, s.fs)]
        argmins[int(np.argmin(gaps))] += 1
print(f"coupling fraction (df < 1 kHz): {couple/n:.3f}  per-mode: {argmins/max(couple,1)}")

# 4. default screening grid class mix
print("\nscreening grid (T=0.16):")
rvals = np.arange(0.4, 1.101, 0.1)
hvals = np.arange(1.5, 2.901, 0.2)
grid = [(h, r) for h in hvals for r in rvals]
samples = [D.surrogate_oracle(h, r, 0.16, 0) for h, r in grid]
rn = np.array([s.rn for s in samples])
df = np.array([delta_f(s) for s in samples])
print(f"rn range [{rn.min():.2f}, {rn.max():.2f}]  df range [{df.min():.0f}, {df.max():.0f}]")
for rn_min in (0.2, 0.3, 0.4):
    for df_min in (1200, 1400, 1600):
        feas = int(np.sum((rn >= rn_min) & (df >= df_min)))
        print(f"  rn>={rn_min} df>={df_min}: {feas}/64 feasible")
# margin analysis: distance of each grid point from the df thresholds
for df_min in (1200, 1400, 1600):
    close = np.sum(np.abs(df - df_min) < 300)
    print(f"  points within 300 Hz of df={df_min}: {close}")
for rn_min in (0.2, 0.3, 0.4):
    close = np.sum(np.abs(rn - rn_min) < 0.015)
    print(f"  points within 0.015 mm of rn={rn_min}: {close}")
