"""The two representation-balancing distances on toy point clouds.

Both drop towards zero when the clouds coincide and grow as they separate.
"""
import numpy as np

from netcate import numkernel as nk
from netcate.balance import BalanceConfig, mmd, wasserstein

rng = np.random.default_rng(0)
base = rng.normal(size=(60, 2))

tape = nk.Tape()
a = tape.constant(base)
for shift in (0.0, 0.5, 1.0, 2.0, 4.0):
    b = tape.constant(rng.normal(size=(60, 2)) + [shift, 0.0])
    w = float(wasserstein(a, b, BalanceConfig()).value)
    m = float(mmd(a, b, BalanceConfig(kind="mmd")).value)
    print(f"shift {shift:3.1f}: sinkhorn {w:7.3f}   mmd^2 {m:6.3f}")
