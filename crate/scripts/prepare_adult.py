#!/usr/bin/env python3
"""Convert the UCI Adult files into a numeric CSV for `llp --data`.

Usage: prepare_adult.py adult.data adult.test out.csv

Rows from both files are concatenated (48,842 rows). The 14 original
features are kept; each categorical column is ordinal-encoded by sorted
category name, with missing values ('?') as their own category. The label
column `income` is 1 for >50K.
"""

import csv
import sys

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
]
CATEGORICAL = {1, 3, 5, 6, 7, 8, 9, 13}


def read_rows(path):
    with open(path) as f:
        for line in f:
            parts = [p.strip() for p in line.strip().split(",")]
            if len(parts) != 15:
                continue  # blank lines and the test file's header
            yield parts


def main(argv):
    if len(argv) != 4:
        sys.exit(__doc__)
    rows = list(read_rows(argv[1])) + list(read_rows(argv[2]))
    codes = {
        c: {v: i for i, v in enumerate(sorted({r[c] for r in rows}))}
        for c in CATEGORICAL
    }
    with open(argv[3], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(COLUMNS + ["income"])
        for r in rows:
            feats = [codes[c][r[c]] if c in CATEGORICAL else float(r[c]) for c in range(14)]
            label = 1 if r[14].rstrip(".") == ">50K" else 0
            w.writerow(feats + [label])
    print(f"wrote {len(rows)} rows to {argv[3]}")


if __name__ == "__main__":
    main(sys.argv)
