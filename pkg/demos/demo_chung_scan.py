"""The scan statistic S_n = sup |u| / f(r_n) across geometric scales.

f(r) = r (log log(1/r))^(-1/6) is the normalization under which the
windowed sup has a nondegenerate lower envelope as r -> 0.  The scan
reports distributional summaries per scale; the running minimum of the
medians is descriptive data, not an estimate of the limiting constant
(which lives at scales no simulation can reach).

Run:  python demos/demo_chung_scan.py
"""

from chung_lab import ScaleParams, constant_coefficient
from chung_lab.estimators import chung_scan

params = ScaleParams(a=2.0, n_min=3, n_max=6, epsilon=0.5)
scan = chung_scan(constant_coefficient(1.0), params, trials=60, master_seed=31, resolutions=(1, 2))

print("sigma == 1, 60 replicates per scale, two node densities per axis (x1 = 16, x2 = 32)\n")
print(f"{'n':>3} {'r':>10} {'res':>4} {'median S':>9} {'[q1, q3]':>18} {'max':>7}")
for e in scan.entries:
    print(f"{e.n:>3} {e.r:>10.5g} {'x' + str(e.resolution):>4} {e.s_median:>9.4f}   [{e.s_q1:.4f}, {e.s_q3:.4f}] {e.s_max:>7.3f}")

print("\nrunning minimum of the medians (finer resolution):")
for n, v in scan.running_min[2]:
    print(f"  through n = {n}: {v:.4f}")

print("\nper-scale medians stay in a narrow band: the f(r) normalization is doing its job.")
print("Discrete sups are lower bounds for the continuum sup, so x2 sits slightly above x1.")
