"""Convert the raw UCI / ProPublica files in data/raw into headered CSVs.

Run once from the repository root::

    python scripts/prepare_datasets.py

The outputs (src/confair/datasets/*.csv) ship with the package, so this
only needs rerunning if the raw files change.
"""
import csv
import os

import pandas as pd

HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.join(HERE, os.pardir)
DATA = os.path.join(ROOT, "src", "confair", "datasets")
RAW = os.path.join(ROOT, "data", "raw")

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]

GERMAN_COLUMNS = [
    "status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment", "installment_rate", "personal_status",
    "other_debtors", "residence_since", "property", "age",
    "installment_plans", "housing", "existing_credits", "job",
    "people_liable", "telephone", "foreign_worker", "credit",
]

# personal_status codes that denote a female applicant
GERMAN_FEMALE = {"A92", "A95"}


def prepare_adult():
    for src, dst in (("adult.data", "adult_train.csv"), ("adult.test", "adult_test.csv")):
        rows = []
        with open(os.path.join(RAW, src)) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("|"):
                    continue
                fields = [f.strip() for f in line.split(",")]
                fields[-1] = fields[-1].rstrip(".")
                rows.append(fields)
        _write(dst, ADULT_COLUMNS, rows)


def prepare_compas():
    df = pd.read_csv(os.path.join(RAW, "compas-scores-two-years.csv"))
    # ProPublica's screening filters
    df = df[
        (df.days_b_screening_arrest <= 30)
        & (df.days_b_screening_arrest >= -30)
        & (df.is_recid != -1)
        & (df.c_charge_degree != "O")
        & (df.score_text != "N/A")
    ].copy()
    stay = pd.to_datetime(df.c_jail_out) - pd.to_datetime(df.c_jail_in)
    df["length_of_stay"] = stay.dt.days
    df["race"] = df.race.where(df.race == "African-American", "Other")
    cols = [
        "age", "c_charge_degree", "race", "age_cat", "score_text", "sex",
        "priors_count", "days_b_screening_arrest", "decile_score",
        "length_of_stay", "two_year_recid",
    ]
    # the raw file carries duplicated column names; keep the first of each
    df = df.loc[:, ~df.columns.duplicated()]
    _write("compas.csv", cols, df[cols].astype(str).values.tolist())


def prepare_german():
    rows = []
    with open(os.path.join(RAW, "german.data")) as fh:
        for line in fh:
            fields = line.split()
            if not fields:
                continue
            sex = "female" if fields[8] in GERMAN_FEMALE else "male"
            rows.append(fields + [sex])
    _write("german.csv", GERMAN_COLUMNS + ["sex"], rows)


def _write(name, header, rows):
    path = os.path.join(DATA, name)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path}: {len(rows)} rows")


if __name__ == "__main__":
    prepare_adult()
    prepare_compas()
    prepare_german()
