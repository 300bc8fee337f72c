"""Plot the roll-doublet response written by ``mflqr validate``.

Needs matplotlib (``pip install .[plot]``).

    python3 scripts/plot_doublet.py out/a4d/validate.csv -o doublet.png
"""

import argparse
import re

import numpy as np

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError as exc:  # plotting is optional
    raise SystemExit("plot_doublet.py needs matplotlib: pip install .[plot]") from exc


def main():
    ap = argparse.ArgumentParser(description="plot validate.csv")
    ap.add_argument("csv")
    ap.add_argument("-o", "--output", default="doublet.png")
    ap.add_argument("--state", type=int, default=None, help="1-based state to plot (default: tracked one)")
    args = ap.parse_args()

    data = np.genfromtxt(args.csv, delimiter=",", names=True, comments="#")
    cols = data.dtype.names
    k = args.state
    if k is None:
        # the first reference channel tracks whichever state moves most with it
        xs = [c for c in cols if re.fullmatch(r"x\d+", c)]
        k = 1 + int(np.argmax([np.corrcoef(data["r1"], data[c])[0, 1] for c in xs]))

    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    ax1.plot(data["t"], np.degrees(data["r1"]), "k--", label="reference")
    ax1.plot(data["t"], np.degrees(data[f"x{k}"]), label="synthesized")
    ax1.plot(data["t"], np.degrees(data[f"x{k}_oracle"]), ":", label="oracle")
    ax1.set_ylabel(f"x{k} [deg]")
    ax1.legend()
    for c in cols:
        if re.fullmatch(r"u\d+", c):
            ax2.plot(data["t"], data[c], label=c)
    ax2.set_xlabel("t [s]")
    ax2.set_ylabel("input")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print("wrote", args.output)


if __name__ == "__main__":
    main()
