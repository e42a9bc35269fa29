"""Write the bundled breast-cancer (WDBC) data as data/breast_cancer.csv.

Uses the copy shipped with scikit-learn; labels are written as M/B so the
loader maps malignant to +1.
"""

import csv
from pathlib import Path

from sklearn.datasets import load_breast_cancer


def main(out="data/breast_cancer.csv"):
    bunch = load_breast_cancer()
    names = [n.replace(" ", "_") for n in bunch.feature_names]
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *names])
        for x, t in zip(bunch.data, bunch.target):
            w.writerow(["M" if t == 0 else "B", *map(repr, x.tolist())])
    print(f"wrote {len(bunch.target)} rows to {out}")


if __name__ == "__main__":
    main()
