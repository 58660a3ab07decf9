"""Quiver plot of a field.csv written by ``gradfield export-field``.

Needs matplotlib, which the package itself does not depend on.

    python3 scripts/plot_field.py runs/phi_field/field.csv field.png
"""

import argparse
import csv

import numpy as np


def main():
    p = argparse.ArgumentParser()
    p.add_argument("csv_path")
    p.add_argument("png_path")
    args = p.parse_args()

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(args.csv_path) as fh:
        rows = list(csv.DictReader(fh))
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    x1, x2 = col("x1"), col("x2")
    fig, ax = plt.subplots(figsize=(6, 6))
    if "phi" in rows[0]:
        ax.tricontourf(x1, x2, col("phi"), levels=30, cmap="viridis", alpha=0.6)
    ax.quiver(x1, x2, col("psi1"), col("psi2"), color="k", label="learned")
    if "oracle1" in rows[0]:
        ax.quiver(x1, x2, col("oracle1"), col("oracle2"), color="tab:red", alpha=0.6, label="oracle")
        ax.legend(loc="upper right")
    ax.set_aspect("equal")
    fig.savefig(args.png_path, dpi=120, bbox_inches="tight")


if __name__ == "__main__":
    main()
