"""Tour of the sparsity-inducing proximal operators.

The solvers rest on four exact prox maps: the hard count penalty and its
capped-l1 surrogate, each in a column (group) and an entry (scalar) flavor,
all paired with a ball or box constraint. This script prints their
thresholding behavior and plots the scalar maps.
"""

import numpy as np

import facrpca as fr

print("=== hard entry penalty: keep-or-kill at |z| = sqrt(2 gamma) ===")
gamma = 0.3
for z in (0.2, 0.5, np.sqrt(2 * gamma), 0.9, 1.5):
    out = fr.prox_scalar_l0(z, gamma, -5.0, 5.0)
    print(f"  z = {z:6.3f} -> {out:6.3f}")

print("\n=== capped column penalty: soft threshold below rho, free above ===")
p = fr.GroupPenalty(gamma=0.5, rho=0.4, branch="both", tau=10.0)
for nrm in (0.1, 0.5, 0.9, 1.0, 1.1, 2.0):
    z = np.array([nrm, 0.0])
    out = fr.prox_group(z, p)
    print(f"  ||z|| = {nrm:4.2f} -> ||prox|| = {np.linalg.norm(out):6.4f}")

print("\n=== linear branch only: exact zero at the threshold gamma/rho ===")
lin = fr.ScalarPenalty(gamma=0.6, rho=0.4, branch="linear_only",
                       lower=-5.0, upper=5.0)
thr = lin.gamma / lin.rho
for z in (0.5 * thr, thr, thr * 1.0001, 3.0):
    print(f"  z = {z:8.5f} -> {fr.prox_scalar(z, lin):8.5f}")

print("\n=== ball constraint caps the magnitude ===")
ball = fr.GroupPenalty(gamma=0.0, rho=1.0, branch="constant_only", tau=1.5)
z = np.array([3.0, 4.0])
print(f"  ||z|| = 5 with tau = 1.5 -> ||prox|| = "
      f"{np.linalg.norm(fr.prox_group(z, ball)):.4f}")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    zs = np.linspace(-2.5, 2.5, 1001)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    hard = [fr.prox_scalar_l0(z, 0.3, -5, 5) for z in zs]
    capped = [fr.prox_scalar(z, fr.ScalarPenalty(gamma=0.3, rho=0.5,
                                                 branch="both",
                                                 lower=-5, upper=5))
              for z in zs]
    axes[0].plot(zs, hard, lw=1.5)
    axes[0].set_title("hard count prox (gamma = 0.3)")
    axes[1].plot(zs, capped, lw=1.5)
    axes[1].set_title("capped-l1 prox (gamma = 0.3, rho = 0.5)")
    for ax in axes:
        ax.plot(zs, zs, "k:", lw=0.7)
        ax.set_xlabel("z")
    fig.tight_layout()
    fig.savefig("prox_operators.png", dpi=120)
    print("\nwrote prox_operators.png")
except ImportError:
    print("\n(matplotlib not available; skipped the plot)")
