"""Report records and their JSON/CSV serialization."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass

import numpy as np

SCHEMA_VERSION = 1
HOLD_TOL = 1e-9

# status values carried by BoundReport
HOLDS = "holds"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"
SKIPPED = "skipped"


@dataclass
class BoundReport:
    """One inequality: measured left side against the predicted right side.

    ``holds`` is always ``lhs <= rhs + tol``. ``status`` adds the audit's
    reading of a failure: ``violated`` means conclusive, ``inconclusive``
    means the right side rests on a sampled lower bound, ``skipped`` means
    the bound's precondition failed and nothing is claimed.
    """

    name: str
    lhs: float
    rhs: float
    slack: float
    holds: bool
    status: str = HOLDS
    inputs: dict = field(default_factory=dict)

    @classmethod
    def make(cls, name, lhs, rhs, tol=HOLD_TOL, inputs=None, status=None):
        lhs, rhs = float(lhs), float(rhs)
        ok = bool(lhs <= rhs + tol)
        if status is None:
            status = HOLDS if ok else VIOLATED
        return cls(name, lhs, rhs, rhs - lhs, ok, status, dict(inputs or {}))

    @property
    def conclusive_violation(self):
        return self.status == VIOLATED


def to_jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"re": to_jsonable(obj.real.tolist()), "im": to_jsonable(obj.imag.tolist())}
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        return x
    return obj


def dumps(obj):
    payload = to_jsonable(obj)
    if isinstance(payload, dict):
        payload = {"schema_version": SCHEMA_VERSION, **payload}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
    return path


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows, columns))
    return path


BOUND_COLUMNS = ["name", "lhs", "rhs", "slack", "holds", "status"]


def bound_rows(reports, **extra):
    rows = []
    for r in reports:
        row = {c: getattr(r, c) for c in BOUND_COLUMNS}
        row.update(extra)
        row.update({k: v for k, v in r.inputs.items() if np.isscalar(v)})
        rows.append(row)
    return rows
