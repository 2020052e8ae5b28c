"""Periodic heat kernel: the two series representations and their identities.

Run:  python demos/demo_kernel.py
"""

import numpy as np

from chung_lab.kernel import heat_kernel, heat_kernel_image, heat_kernel_spectral

# midpoint rule on the circle is spectrally accurate for analytic integrands
xs = (np.arange(2048) + 0.5) / 2048

print("conservation of mass: integral of G(t, .) over the circle")
for t in (1e-4, 1e-2, 1.0):
    mass = float(np.mean(heat_kernel(t, xs)))
    print(f"  t = {t:8.4f}:  integral = {mass:.12f}   (error {abs(mass - 1):.2e})")

print("\nsemigroup: convolving G(s, .) with G(t, .) gives G(s+t, .)")
for s, t in ((0.01, 0.02), (0.001, 0.05)):
    x = 0.3
    conv = float(np.mean(heat_kernel(s, x - xs) * heat_kernel(t, xs)))
    direct = heat_kernel(s + t, x)
    print(f"  s = {s}, t = {t}: conv = {conv:.10f}  direct = {direct:.10f}  (diff {abs(conv - direct):.2e})")

print("\nimage sum vs spectral sum (they agree to ~1e-15 in their shared range)")
for t in (0.005, 0.05, 0.2, 1.0):
    for x in (0.0, 0.25):
        a = heat_kernel_image(t, x)
        b = heat_kernel_spectral(t, x)
        print(f"  t = {t:5g}, x = {x:4g}:  image = {a:.12f}  spectral = {b:.12f}  (diff {abs(a - b):.1e})")

print("\nfor large t the kernel flattens to 1:")
print(f"  max |G(10, x) - 1| over the circle = {np.abs(heat_kernel(10.0, xs) - 1).max():.2e}")
