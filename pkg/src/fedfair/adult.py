"""Census-income (Adult) dataset schema and file preparation.

The original UCI files are header-less, comma+space separated, use "?" for
missing cells, and the test split suffixes labels with a period.
:func:`prepare_adult_csv` normalizes either file into the loader's headered
CSV format; :func:`adult_schema` declares the columns with race as the
sensitive attribute (White and Black; other races dropped).
"""

from __future__ import annotations

from pathlib import Path

from .data import ColumnSpec, DataSchema

_WORKCLASS = (
    "Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov",
    "State-gov", "Without-pay", "Never-worked",
)
_EDUCATION = (
    "Bachelors", "Some-college", "11th", "HS-grad", "Prof-school", "Assoc-acdm",
    "Assoc-voc", "9th", "7th-8th", "12th", "Masters", "1st-4th", "10th",
    "Doctorate", "5th-6th", "Preschool",
)
_MARITAL = (
    "Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed",
    "Married-spouse-absent", "Married-AF-spouse",
)
_OCCUPATION = (
    "Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
    "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
    "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
    "Armed-Forces",
)
_RELATIONSHIP = ("Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried")
_SEX = ("Female", "Male")
_COUNTRY = (
    "United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany",
    "Outlying-US(Guam-USVI-etc)", "India", "Japan", "Greece", "South", "China",
    "Cuba", "Iran", "Honduras", "Philippines", "Italy", "Poland", "Jamaica",
    "Vietnam", "Mexico", "Portugal", "Ireland", "France", "Dominican-Republic",
    "Laos", "Ecuador", "Taiwan", "Haiti", "Columbia", "Hungary", "Guatemala",
    "Nicaragua", "Scotland", "Thailand", "Yugoslavia", "El-Salvador",
    "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands",
)

ADULT_COLUMN_NAMES = [
    "age", "workclass", "fnlwgt", "education", "education_num", "marital_status",
    "occupation", "relationship", "race", "sex", "capital_gain", "capital_loss",
    "hours_per_week", "native_country", "income",
]


def adult_schema() -> DataSchema:
    cols = (
        ColumnSpec("age", "continuous"),
        ColumnSpec("workclass", "categorical", _WORKCLASS),
        ColumnSpec("fnlwgt", "continuous"),
        ColumnSpec("education", "categorical", _EDUCATION),
        ColumnSpec("education_num", "continuous"),
        ColumnSpec("marital_status", "categorical", _MARITAL),
        ColumnSpec("occupation", "categorical", _OCCUPATION),
        ColumnSpec("relationship", "categorical", _RELATIONSHIP),
        ColumnSpec("race", "sensitive"),
        ColumnSpec("sex", "categorical", _SEX),
        ColumnSpec("capital_gain", "continuous"),
        ColumnSpec("capital_loss", "continuous"),
        ColumnSpec("hours_per_week", "continuous"),
        ColumnSpec("native_country", "categorical", _COUNTRY),
        ColumnSpec("income", "label"),
    )
    return DataSchema(
        columns=cols,
        positive_label=">50K",
        sensitive_values=("White", "Black"),
        drop_missing=True,
        missing_token="?",
    )


def prepare_adult_csv(src, dst) -> int:
    """Normalize a raw UCI adult file into a headered CSV; returns row count.

    Handles comma+space separation, the test split's banner line and
    trailing label periods, and skips blank lines.
    """
    src, dst = Path(src), Path(dst)
    rows = []
    for line in src.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(ADULT_COLUMN_NAMES):
            continue
        if cells[-1].endswith("."):
            cells[-1] = cells[-1][:-1]
        rows.append(cells)
    with open(dst, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(ADULT_COLUMN_NAMES) + "\n")
        for cells in rows:
            fh.write(",".join(cells) + "\n")
    return len(rows)
