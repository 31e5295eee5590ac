"""Export the scikit-learn diabetes dataset (442 x 10 features + target) to CSV.

Usage: python scripts/export_diabetes.py [output.csv]

Features are the library's default mean-centred, scaled columns; the target is
the raw disease-progression measure (the engine normalizes it at load time).
"""
import csv
import sys

from sklearn.datasets import load_diabetes


def main() -> None:
    out = sys.argv[1] if len(sys.argv) > 1 else "data/diabetes.csv"
    ds = load_diabetes()
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.feature_names) + ["target"])
        for row, target in zip(ds.data, ds.target):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])


if __name__ == "__main__":
    main()
