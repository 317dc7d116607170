"""Scenario and fleet CSV files, JSON reports and their self-verification.

Floats are written with ``repr`` so a write/read cycle reproduces every
value bit for bit.  All writes go to a temporary file in the target
directory and are renamed into place.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError
from .gamecore import (
    DemandProfile,
    EquilibriumReport,
    FlexUserSet,
    PricingRule,
    Scenario,
    controllable_supply,
    leader_cost,
    price_series,
    user_costs,
)

SCENARIO_HEADER = ("t", "w", "r")
USERS_HEADER = ("i", "g", "nu_max")


# ---------------------------------------------------------------------------
# low-level helpers


def atomic_write(path, data: str | bytes) -> None:
    """Write ``data`` to ``path`` through a temp file and ``os.replace``."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def fmt(x: float) -> str:
    """Shortest round-tripping decimal form, locale independent."""
    return repr(float(x))


def _parse_float(text, path, line, column):
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"column {column!r}: {text!r} is not a number", path, line) from None
    if not math.isfinite(value):
        raise InputError(f"column {column!r}: non-finite value {text!r}", path, line)
    return value


def _read_rows(text: str, path, header):
    """Split metadata comments from data rows; yields ``(line_no, row)``."""
    meta = {}
    rows = []
    seen_header = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            for sep in (":", "="):
                if sep in body:
                    key, value = body.split(sep, 1)
                    meta[key.strip()] = value.strip()
                    break
            continue
        fields = [f.strip() for f in next(csv.reader([raw]))]
        if not seen_header:
            if tuple(fields) != header:
                raise InputError(f"expected header {','.join(header)}, got {','.join(fields)}",
                                 path, line_no)
            seen_header = True
            continue
        if len(fields) != len(header):
            raise InputError(f"expected {len(header)} columns, got {len(fields)}", path, line_no)
        rows.append((line_no, fields))
    if not seen_header:
        raise InputError(f"missing header {','.join(header)}", path, None)
    if not rows:
        raise InputError("no data rows", path, None)
    return meta, rows


def _read_text(path) -> tuple[str, bytes]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read file: {exc.strerror}", path, None) from None
    try:
        return data.decode("utf-8"), data
    except UnicodeDecodeError:
        raise InputError("file is not valid UTF-8", path, None) from None


def _check_index(rows, path, name):
    for expected, (line_no, fields) in enumerate(rows, start=1):
        try:
            got = int(fields[0])
        except ValueError:
            raise InputError(f"{name} must be an integer, got {fields[0]!r}", path, line_no) from None
        if got != expected:
            raise InputError(f"{name} must run 1, 2, ... in order; expected {expected}, got {got}",
                             path, line_no)


# ---------------------------------------------------------------------------
# scenario files


def parse_scenario(text: str, path=None) -> tuple[Scenario, dict]:
    meta, rows = _read_rows(text, path, SCENARIO_HEADER)
    _check_index(rows, path, "t")
    w, r = [], []
    for line_no, fields in rows:
        wv = _parse_float(fields[1], path, line_no, "w")
        rv = _parse_float(fields[2], path, line_no, "r")
        if wv < 0 or rv < 0:
            raise InputError("w and r must be nonnegative", path, line_no)
        w.append(wv)
        r.append(rv)
    slot_hours = 24.0 / len(w)
    if "slot_hours" in meta:
        slot_hours = _parse_float(meta["slot_hours"], path, None, "slot_hours")
        if not slot_hours > 0:
            raise InputError("slot_hours must be positive", path, None)
    try:
        scenario = Scenario(np.array(w), np.array(r), slot_hours=slot_hours)
    except ValueError as exc:
        raise InputError(str(exc), path, None) from None
    return scenario, meta


def read_scenario(path) -> tuple[Scenario, dict]:
    """Parse a ``t,w,r`` file; returns the scenario and its ``#`` metadata."""
    text, _ = _read_text(path)
    return parse_scenario(text, path)


def format_scenario(scenario: Scenario, meta: dict | None = None) -> str:
    out = io.StringIO()
    meta = {"slot_hours": fmt(scenario.slot_hours), **(meta or {})}
    for key in sorted(meta):
        out.write(f"# {key}: {meta[key]}\n")
    out.write(",".join(SCENARIO_HEADER) + "\n")
    for t, (w, r) in enumerate(zip(scenario.w, scenario.r), start=1):
        out.write(f"{t},{fmt(w)},{fmt(r)}\n")
    return out.getvalue()


def write_scenario(path, scenario: Scenario, meta: dict | None = None) -> None:
    atomic_write(path, format_scenario(scenario, meta))


# ---------------------------------------------------------------------------
# fleet files


def parse_users(text: str, path=None, T: int | None = None) -> FlexUserSet:
    _, rows = _read_rows(text, path, USERS_HEADER)
    _check_index(rows, path, "i")
    g, caps = [], []
    for line_no, fields in rows:
        gv = _parse_float(fields[1], path, line_no, "g")
        cv = _parse_float(fields[2], path, line_no, "nu_max")
        if not gv > 0:
            raise InputError("g must be positive", path, line_no)
        if not cv > 0:
            raise InputError("nu_max must be positive", path, line_no)
        if T is not None and cv * T < gv * (1 - 1e-12):
            raise InputError(f"nu_max={cv!r} is below g/T={gv / T!r}; the user cannot be served "
                             f"in {T} slots", path, line_no)
        g.append(gv)
        caps.append(cv)
    return FlexUserSet(np.array(g), np.array(caps))


def read_users(path, T: int | None = None) -> FlexUserSet:
    """Parse an ``i,g,nu_max`` file, validating caps against ``T`` slots if given."""
    text, _ = _read_text(path)
    return parse_users(text, path, T)


def format_users(users: FlexUserSet) -> str:
    lines = [",".join(USERS_HEADER)]
    for i, (g, c) in enumerate(zip(users.g, users.nu_max), start=1):
        lines.append(f"{i},{fmt(g)},{fmt(c)}")
    return "\n".join(lines) + "\n"


def write_users(path, users: FlexUserSet) -> None:
    atomic_write(path, format_users(users))


def load_inputs(scenario_path, users_path):
    """Read both files; returns ``(scenario, users, meta, digests)``."""
    s_text, s_bytes = _read_text(scenario_path)
    scenario, meta = parse_scenario(s_text, scenario_path)
    u_text, u_bytes = _read_text(users_path)
    users = parse_users(u_text, users_path, scenario.T)
    digests = {"scenario_file_sha256": sha256_bytes(s_bytes),
               "users_file_sha256": sha256_bytes(u_bytes)}
    return scenario, users, meta, digests


# ---------------------------------------------------------------------------
# reports


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def embedded_inputs(scenario: Scenario, users: FlexUserSet) -> dict:
    return {
        "scenario": {"w": scenario.w.tolist(), "r": scenario.r.tolist(),
                     "slot_hours": scenario.slot_hours},
        "users": {"g": users.g.tolist(), "nu_max": users.nu_max.tolist()},
    }


def _canonical_digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return sha256_bytes(text.encode("utf-8"))


def report_document(report: EquilibriumReport, scenario: Scenario, users: FlexUserSet, *,
                    game: str, parameters: dict, digests: dict | None = None) -> dict:
    """JSON-ready report with embedded inputs and their digests.

    ``game`` is ``"box"`` when per-slot caps are part of the follower game
    and ``"hyperplane"`` when only the totals are.
    """
    inputs = embedded_inputs(scenario, users)
    return _jsonable({
        "tool": "stackgrid",
        "version": __version__,
        "method": report.method,
        "game": game,
        "parameters": dict(parameters),
        "inputs": inputs,
        "digests": {**(digests or {}), "inputs_sha256": _canonical_digest(inputs)},
        "rule": {"a1": report.rule.a1, "a2": report.rule.a2},
        "demand": report.demand.values,
        "aggregate": report.demand.aggregate,
        "prices": report.prices,
        "controllable": report.controllable,
        "leader_cost": report.leader_cost,
        "user_costs": report.user_costs,
        "rule_feasible": report.rule_feasible,
        "strict_ne": report.strict_ne,
        "iterations": report.iterations,
        "residual": report.residual,
        "extra": report.extra,
    })


def series_csv(report: EquilibriumReport, scenario: Scenario) -> str:
    """Companion time series: ``t,w,r,c,nu_N,price,nu_1..nu_n``."""
    n = report.demand.n
    header = ["t", "w", "r", "c", "nu_N", "price"] + [f"nu_{i}" for i in range(1, n + 1)]
    lines = [",".join(header)]
    agg = report.demand.aggregate
    for t in range(scenario.T):
        row = [str(t + 1), fmt(scenario.w[t]), fmt(scenario.r[t]), fmt(report.controllable[t]),
               fmt(agg[t]), fmt(report.prices[t])]
        row += [fmt(v) for v in report.demand.values[:, t]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def companion_path(json_path) -> Path:
    p = Path(json_path)
    return p.with_name(p.stem + "_series.csv")


def write_report(path, document: dict, series: str | None = None) -> list[Path]:
    """Write the JSON report (and its series CSV next to it); returns the paths."""
    written = [Path(path)]
    atomic_write(path, json.dumps(document, indent=2, sort_keys=True) + "\n")
    if series is not None:
        csv_path = companion_path(path)
        atomic_write(csv_path, series)
        written.append(csv_path)
    return written


def read_report(path) -> dict:
    text, _ = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    for key in ("inputs", "rule", "demand", "leader_cost", "method", "game"):
        if key not in doc:
            raise InputError(f"report lacks the {key!r} field", path, None)
    return doc


def _close(a, b, rtol, atol):
    return abs(a - b) <= rtol * max(abs(a), abs(b)) + atol


def verify_document(doc: dict, *, stationarity_tol: float = 1e-6) -> tuple[bool, list[str]]:
    """Recompute costs, prices and equilibrium residuals from a report's own inputs.

    Returns ``(ok, lines)`` where each line is a ``PASS``/``FAIL`` verdict.
    """
    from .oracle import projected_stationarity

    lines = []
    ok = True

    def verdict(name, passed, detail):
        nonlocal ok
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'}  {name:<22} {detail}")

    inp = doc["inputs"]
    verdict("inputs digest", _canonical_digest(inp) == doc.get("digests", {}).get("inputs_sha256"),
            "embedded inputs match their recorded hash")
    scenario = Scenario(np.array(inp["scenario"]["w"], float), np.array(inp["scenario"]["r"], float),
                        slot_hours=float(inp["scenario"]["slot_hours"]), allow_single_slot=True)
    users = FlexUserSet(np.array(inp["users"]["g"], float), np.array(inp["users"]["nu_max"], float))
    rule = PricingRule(np.array(doc["rule"]["a1"], float), np.array(doc["rule"]["a2"], float))
    demand = DemandProfile(np.array(doc["demand"], float))
    scale2 = (users.g_N / scenario.T) ** 2

    lc = leader_cost(scenario, demand)
    verdict("leader cost", _close(lc, float(doc["leader_cost"]), 1e-12, 1e-24 * scale2),
            f"recomputed {lc:.6e}, reported {float(doc['leader_cost']):.6e}")
    uc = user_costs(demand, scenario, rule)
    rep_uc = np.array(doc.get("user_costs", uc), float)
    verdict("user costs", bool(np.allclose(uc, rep_uc, rtol=1e-12, atol=1e-12 * scale2)),
            f"max abs diff {float(np.max(np.abs(uc - rep_uc))):.2e}")
    pr = price_series(scenario, rule, demand)
    verdict("prices", bool(np.allclose(pr, np.array(doc["prices"], float), rtol=1e-12, atol=1e-12)),
            "price series recomputed from the rule")
    c = controllable_supply(scenario, demand)
    verdict("controllable supply", bool(np.allclose(c, np.array(doc["controllable"], float),
                                                    rtol=1e-12, atol=1e-12 * users.g_N)),
            "balance constraint recomputed")
    bad = demand.hyperplane_violations(users)
    verdict("energy totals", not bad, "every user's total matches g_i" if not bad
            else f"users {', '.join(str(i + 1) for i in bad)} off their totals")
    box = doc["game"] == "box"
    if box:
        bad = demand.box_violations(users)
        verdict("per-slot caps", not bad, "0 <= nu_i(t) <= nu_max_i" if not bad
                else f"users {', '.join(str(i + 1) for i in bad)} outside their caps")
    wt, rt = rule.tilde(scenario)
    worst = 0.0
    for i in range(users.n):
        grad_scale = max(1.0, float(np.max(np.abs((demand.values[i] + demand.aggregate + rt) / wt))))
        bounds = (0.0, float(users.nu_max[i])) if box else None
        worst = max(worst, projected_stationarity(i, demand, wt, rt, users, bounds) / grad_scale)
    tol = stationarity_tol
    if doc["method"] == "numeric":
        # the search stops at an inner tolerance, not an exact equilibrium
        tol = max(tol, 10 * float(doc.get("parameters", {}).get("inner_tol", 1e-8)))
    verdict("equilibrium residual", worst <= tol,
            f"max scaled projected gradient {worst:.2e} (tolerance {tol:.0e})")
    return ok, lines
