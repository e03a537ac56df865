"""CSV ingestion, table output, run manifests and the resampling-draws sidecar."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
from collections import defaultdict
from pathlib import Path

import numpy as np

from .model import LongitudinalDataset, SubjectRecord

log = logging.getLogger(__name__)

BETA_COLUMNS = ("tau", "coef_name", "estimate", "naive_estimate", "se", "ci_lo", "ci_hi",
                "converged")
BENCH_COLUMNS = ("tau", "coef", "bias_naive", "bias_proposed", "sd", "ese", "coverage")
DRAWS_MAGIC = b"TQRDRAWS"
DRAWS_VERSION = 1


class InputError(ValueError):
    """Bad user input; ``field`` names the offending file, flag or key."""

    def __init__(self, message: str, field: str | None = None, items=None):
        super().__init__(message)
        self.field = field
        self.items = list(items or [])

    def as_dict(self) -> dict:
        out = {"message": str(self), "field": self.field}
        if self.items:
            out["items"] = self.items
        return out


def fmt(v) -> str:
    """Round-trip text for numbers (17 significant digits)."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _num(text: str, path, row: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{path}: row {row}: column {col!r} is not a number: {text!r}",
                         field=str(path)) from None
    if not math.isfinite(v):
        raise InputError(f"{path}: row {row}: non-finite value in column {col!r}",
                         field=str(path))
    return v


def _reader(path):
    fh = open(path, newline="", encoding="utf-8")
    return fh, csv.reader(fh)


def ingest_csv(longitudinal_path, covariate_path) -> LongitudinalDataset:
    """Read long-format outcomes and per-subject covariates into a dataset.

    Row numbers in errors count the header as row 1.
    """
    lpath, cpath = Path(longitudinal_path), Path(covariate_path)
    fh, rd = _reader(lpath)
    with fh:
        header = [h.strip() for h in next(rd, [])]
        if header != ["subject_id", "time", "y"]:
            raise InputError(f"{lpath}: header must be subject_id,time,y (got {header})",
                             field=str(lpath))
        obs = defaultdict(list)
        for row_no, row in enumerate(rd, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InputError(f"{lpath}: row {row_no}: expected 3 fields", field=str(lpath))
            sid = row[0].strip()
            obs[sid].append((_num(row[1], lpath, row_no, "time"),
                             _num(row[2], lpath, row_no, "y"), row_no))

    fh, rd = _reader(cpath)
    with fh:
        header = [h.strip() for h in next(rd, [])]
        if not header or header[0] != "subject_id":
            raise InputError(f"{cpath}: first column must be subject_id", field=str(cpath))
        has_delta = header[-1] == "delta"
        names = header[1:-1] if has_delta else header[1:]
        covs = {}
        for row_no, row in enumerate(rd, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{cpath}: row {row_no}: expected {len(header)} fields",
                                 field=str(cpath))
            sid = row[0].strip()
            if sid in covs:
                raise InputError(f"{cpath}: row {row_no}: duplicate subject {sid!r}",
                                 field=str(cpath))
            vals = [_num(row[i + 1], cpath, row_no, c) for i, c in enumerate(names)]
            delta = 1.0
            if has_delta:
                delta = _num(row[-1], cpath, row_no, "delta")
                if delta <= 0:
                    raise InputError(f"{cpath}: row {row_no}: delta must be positive",
                                     field=str(cpath))
            covs[sid] = (vals, delta)

    only_obs = sorted(set(obs) - set(covs))
    only_cov = sorted(set(covs) - set(obs))
    if only_obs or only_cov:
        items = ([{"subject_id": s, "missing_from": str(cpath)} for s in only_obs]
                 + [{"subject_id": s, "missing_from": str(lpath)} for s in only_cov])
        ids = ", ".join(only_obs + only_cov)
        raise InputError(f"subjects present in only one file: {ids}", field="subject_id",
                         items=items)

    subjects = []
    for sid in sorted(obs):
        rows = obs[sid]
        times = [r[0] for r in rows]
        if len(set(times)) != len(times):
            dup = sorted({t for t in times if times.count(t) > 1})
            raise InputError(f"{lpath}: subject {sid!r} has duplicate times {dup}",
                             field=str(lpath))
        if any(b <= a for a, b in zip(times, times[1:])):
            log.warning("subject %s: times not increasing; sorted", sid)
            rows = sorted(rows)
        t = np.array([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        vals, delta = covs[sid]
        subjects.append(SubjectRecord(sid, t, y, np.array([1.0] + vals), delta))
    if not subjects:
        raise InputError(f"{lpath}: no observations", field=str(lpath))
    return LongitudinalDataset(tuple(subjects), ("intercept",) + tuple(names))


def write_dataset_csv(dataset: LongitudinalDataset, longitudinal_path, covariate_path,
                      write_delta: bool | None = None) -> None:
    """Inverse of :func:`ingest_csv` (subjects in canonical order)."""
    ds = dataset.canonical()
    if write_delta is None:
        write_delta = any(s.delta != 1.0 for s in ds.subjects)
    with open(longitudinal_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time", "y"])
        for s in ds.subjects:
            for t, y in zip(s.times, s.y):
                w.writerow([s.id, fmt(t), fmt(y)])
    with open(covariate_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *ds.covariate_names[1:]] + (["delta"] if write_delta else []))
        for s in ds.subjects:
            w.writerow([s.id, *map(fmt, s.x[1:])] + ([fmt(s.delta)] if write_delta else []))


def write_table(path, columns, rows, fmt_name: str = "csv") -> None:
    rows = list(rows)
    if fmt_name == "json":
        data = [dict(zip(columns, r)) for r in rows]
        Path(path).write_text(json.dumps(data, indent=1, allow_nan=True) + "\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def beta_rows(fit, draws=None):
    names = fit.covariate_names or tuple(f"b{j}" for j in range(fit.beta_hat.shape[0]))
    for j, tau in enumerate(fit.tau_grid):
        for c, name in enumerate(names):
            se = lo = hi = float("nan")
            if draws is not None:
                se, lo, hi = draws.se[c, j], draws.ci_lower[c, j], draws.ci_upper[c, j]
            yield (float(tau), name, float(fit.beta_hat[c, j]), float(fit.beta_naive[c, j]),
                   float(se), float(lo), float(hi), bool(fit.converged[j]))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    return str(o)


def save_draws(path, draws, coef_names=()) -> None:
    """Binary sidecar: magic, version, JSON header length, JSON header, float64 payload."""
    header = {
        "version": DRAWS_VERSION, "n_b": int(draws.beta_star.shape[0]),
        "p": int(draws.beta_star.shape[1]), "n_tau": int(draws.beta_star.shape[2]),
        "seed": int(draws.seed), "h": float(draws.h), "alpha": float(draws.alpha),
        "n_b_requested": int(draws.n_b_requested), "n_b_dropped": int(draws.n_b_dropped),
        "coef_names": list(coef_names), "dtype": "<f8",
        "layout": ["tau_grid", "beta_hat", "beta_star", "sigma2_star"],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (
        draws.tau_grid, draws.beta_hat, draws.beta_star, draws.sigma2_star))
    with open(path, "wb") as fh:
        fh.write(DRAWS_MAGIC + struct.pack("<II", DRAWS_VERSION, len(hb)) + hb + payload)


def load_draws(path):
    """Read a sidecar written by :func:`save_draws`; returns ``(ResampleDraws, header)``."""
    from scipy.stats import norm

    from .inference import ResampleDraws

    raw = Path(path).read_bytes()
    if raw[:8] != DRAWS_MAGIC:
        raise InputError(f"{path}: not a resampling-draws file", field=str(path))
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != DRAWS_VERSION:
        raise InputError(f"{path}: unsupported draws format version {version}", field=str(path))
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    nb, p, g = header["n_b"], header["p"], header["n_tau"]
    data = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    sizes = [g, p * g, nb * p * g, nb]
    if data.size != sum(sizes):
        raise InputError(f"{path}: truncated or corrupt payload", field=str(path))
    parts = np.split(data.copy(), np.cumsum(sizes)[:-1])
    tau, bhat = parts[0], parts[1].reshape(p, g)
    star, s2 = parts[2].reshape(nb, p, g), parts[3]
    alpha = header["alpha"]
    se = np.std(star, axis=0, ddof=1)
    z = norm.ppf(1 - alpha / 2)
    lo, hi = np.quantile(star, [alpha / 2, 1 - alpha / 2], axis=0)
    draws = ResampleDraws(tau, bhat, star, s2, se, bhat - z * se, bhat + z * se, lo, hi, alpha,
                          header["n_b_requested"], header["n_b_dropped"],
                          header["n_b_dropped"] > 0.1 * header["n_b_requested"],
                          header["seed"], header["h"])
    return draws, header


def parse_grid(text: str, name: str = "grid") -> tuple:
    """``"a:b:step"`` (inclusive) or a comma list."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, step = (float(v) for v in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            count = int(math.floor((b - a) / step + 1e-9)) + 1
            return tuple(round(a + i * step, 12) for i in range(count))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"invalid {name} {text!r}; use start:stop:step or a comma list",
                         field=name) from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment.  Values stay text."""
    out = {}
    for no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}: line {no}: expected key = value", field=f"{path}:{no}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise InputError(f"{path}: line {no}: empty key", field=f"{path}:{no}")
        out[key] = (val, no)
    return out
