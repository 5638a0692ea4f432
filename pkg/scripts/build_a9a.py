"""Rebuild a9a-style LIBSVM files from the raw UCI Adult table.

a9a is the Adult census table binarized into 123 indicator features:
quantized age, fnlwgt, education-num and hours-per-week (5 bins each),
capital gain/loss (zero vs positive), and one-hot categoricals with missing
values ('?') left as all-zero groups. Labels are +1 for income >50K.

The original bin edges are not published, so continuous columns are cut at
training-split quintiles. Row counts (32,561 / 16,281) and d = 123 match.

usage: python scripts/build_a9a.py ADULT_TABLE OUT_DIR

ADULT_TABLE is a parquet/csv with the 15 Adult columns; rows whose
'split' column equals 'test' (or, when absent, the first 16,281 rows) form
the test file.
"""
import argparse
import gzip
from pathlib import Path

import numpy as np
import pandas as pd

CATEGORIES = {
    "workclass": ["Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov",
                  "State-gov", "Without-pay", "Never-worked"],
    "education": ["Bachelors", "Some-college", "11th", "HS-grad", "Prof-school", "Assoc-acdm",
                  "Assoc-voc", "9th", "7th-8th", "12th", "Masters", "1st-4th", "10th", "Doctorate",
                  "5th-6th", "Preschool"],
    "marital-status": ["Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed",
                       "Married-spouse-absent", "Married-AF-spouse"],
    "occupation": ["Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
                   "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
                   "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
                   "Armed-Forces"],
    "relationship": ["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"],
    "race": ["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"],
    "gender": ["Female", "Male"],
    "native-country": ["United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany",
                       "Outlying-US(Guam-USVI-etc)", "India", "Japan", "Greece", "South", "China",
                       "Cuba", "Iran", "Honduras", "Philippines", "Italy", "Poland", "Jamaica",
                       "Vietnam", "Mexico", "Portugal", "Ireland", "France", "Dominican-Republic",
                       "Laos", "Ecuador", "Taiwan", "Haiti", "Columbia", "Hungary", "Guatemala",
                       "Nicaragua", "Scotland", "Thailand", "Yugoslavia", "El-Salvador",
                       "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands"],
}

# feature groups in file order: (column, kind)
LAYOUT = [
    ("age", "quint"), ("workclass", "cat"), ("fnlwgt", "quint"), ("education", "cat"),
    ("educational-num", "quint"), ("marital-status", "cat"), ("occupation", "cat"),
    ("relationship", "cat"), ("race", "cat"), ("gender", "cat"), ("capital-gain", "pos"),
    ("capital-loss", "pos"), ("hours-per-week", "quint"), ("native-country", "cat"),
]
TEST_ROWS = 16281


def quintile_edges(col):
    return np.quantile(col.to_numpy(float), [0.2, 0.4, 0.6, 0.8])


def encode(df, edges):
    cols = []
    offset = 0
    for name, kind in LAYOUT:
        if kind == "cat":
            lookup = {v: k for k, v in enumerate(CATEGORIES[name])}
            code = df[name].str.strip().map(lookup)
            width = len(CATEGORIES[name])
        elif kind == "quint":
            code = pd.Series(np.searchsorted(edges[name], df[name].to_numpy(float), side="right"),
                             index=df.index)
            width = 5
        else:
            code = (df[name] > 0).astype(int)
            width = 2
        cols.append(code.map(lambda c, o=offset: -1 if pd.isna(c) else int(c) + o))
        offset += width
    assert offset == 123, offset
    feats = pd.concat(cols, axis=1).to_numpy()
    labels = np.where(df["income"].str.strip().str.rstrip(".") == ">50K", 1, -1)
    return feats, labels


def write(path, feats, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        for row, lab in zip(feats, labels):
            idx = sorted(int(k) + 1 for k in row if k >= 0)
            fh.write((("+1" if lab > 0 else "-1") + "".join(f" {k}:1" for k in idx) + "\n").encode())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("table")
    ap.add_argument("out_dir")
    args = ap.parse_args()
    path = Path(args.table)
    df = pd.read_parquet(path) if ".parquet" in path.name else pd.read_csv(path)
    if "split" in df.columns:
        is_test = df["split"].eq("test").to_numpy()
    else:
        is_test = np.arange(len(df)) < TEST_ROWS
    train, test = df[~is_test], df[is_test]
    edges = {name: quintile_edges(train[name]) for name, kind in LAYOUT if kind == "quint"}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fname, part in (("a9a.gz", train), ("a9a.t.gz", test)):
        feats, labels = encode(part, edges)
        write(out / fname, feats, labels)
        print(f"{fname}: {len(part)} rows, positives {np.mean(labels > 0):.4f}")


if __name__ == "__main__":
    main()
