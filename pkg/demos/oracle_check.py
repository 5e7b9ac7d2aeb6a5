"""Compare the finite-difference duct solver with the exact series solution.

Prints the max error on successively refined grids and the ratio between
consecutive errors, which should sit near 4 for a second-order scheme.
"""
import numpy as np

from ductsr.flowgen import compute_re, series_reference, solve_cross_section

c = -1000.0
prev = None
print(f"{'n':>5} {'Re':>10} {'u_max/Re':>9} {'max err/u_max':>14} {'ratio':>6}")
for n in (25, 49, 97, 193):
    cs = solve_cross_section(c, ny=n, nz=n)
    Y, Z = np.meshgrid(cs.y, cs.z, indexing="ij")
    exact = series_reference(c, Y, Z, n_terms=1000)
    err = np.abs(cs.u - exact).max() / exact.max()
    ratio = f"{prev / err:6.2f}" if prev else ""
    print(f"{n:5d} {compute_re(cs):10.4f} {cs.u_max / cs.re:9.4f} {err:14.3e} {ratio}")
    prev = err
