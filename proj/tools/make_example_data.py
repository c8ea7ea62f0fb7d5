"""Regenerate docs/examples/blood_pressure_synthetic.csv (synthetic; fixed seed)."""
import sys

import numpy as np


def main(path):
    rng = np.random.default_rng(19850101)
    rows = []
    G = np.array([[60.0, -5.0], [-5.0, 4.0]])
    for r in range(1, 25):
        group = (r - 1) % 4 + 1
        n = 1 + (r * 7) % 9  # 1..9 recordings
        times = np.sort(rng.choice(np.arange(1, 10), size=n, replace=False))
        b = rng.multivariate_normal([0, 0], G)
        for t in times:
            mu = 120 + 1.5 * t + (8 if group == 2 else 0) + (5 if group == 3 else 0) - (3 if group == 4 else 0)
            y = mu + b[0] + b[1] * t + rng.normal(0, 3.0)
            rows.append((f"rat{r:02d}", t, group, y))
    with open(path, "w") as f:
        f.write("rat,time,group,g2,g3,g4,bp\n")
        for rat, t, g, y in rows:
            f.write(f"{rat},{t},{g},{int(g==2)},{int(g==3)},{int(g==4)},{y:.2f}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "blood_pressure_synthetic.csv")
