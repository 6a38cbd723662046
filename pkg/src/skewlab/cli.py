"""Experiment runner: every pipeline as a subcommand over a declarative config.

Usage:
    skewlab <verify|holonomy|transversality|ugibbs|density|perturb>
            --config <path> [--out <dir>] [--workers N] [--seed S]

The config is TOML. A [system] table names a preset ("product" or "broken")
or spells out matrices and perturbations; an optional table named after the
subcommand carries operation parameters. Unknown keys anywhere are rejected.
Precedence for shared settings: command-line flag, then SKEWLAB_WORKERS (for
workers), then the config file, then the built-in default.

Every run writes run_manifest.json (config hash, code version, wall-clock,
per-operation timings, output list, and the fully resolved parameter set).
Data outputs (CSV/JSON/UGH1) are byte-identical across reruns and worker
counts; the manifest alone carries timing and is exempt.

Exit codes: 0 success, 2 config or usage error, 3 mathematical condition
failure, 4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys as _sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .errors import BuildError, ConditionError, ConfigError, NonConvergenceError
from .holonomy import (_s_holonomy_batch, _u_holonomy_batch,
                       convergence_rate_probe, geometric_ratio,
                       leaf_parameter)
from .linefields import LineField, alpha_field, search_perturbation
from .measures import density_probe, su_torus_detect, uniqueness_probe
from .presets import (DEFAULT_GATE_RADIUS, DEFAULT_LEAF_TS, DEFAULT_THETA_MAX,
                      broken_system, canonical_leaf_points, product_system)
from .breaking import build_rigidity_breaking, check_gate_geometry, gate_identity_defect
from .splitting import condition_report
from .systems import SkewProductSystem, system_from_dict, system_hash, system_to_dict
from .torus import TorusPoint2, wrap
from .rng import stream

__all__ = ["main"]

COMMANDS = ("verify", "holonomy", "transversality", "ugibbs", "density", "perturb")
TOP_KEYS = {"operation", "seed", "workers", "out", "system"} | set(COMMANDS)


# ---------------------------------------------------------------------------
# config plumbing

def _fail(msg: str) -> ConfigError:
    return ConfigError(msg)


def _load_config(path: str) -> tuple[dict, str]:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise _fail(f"cannot read config {path}: {e}") from e
    try:
        cfg = tomli.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomli.TOMLDecodeError) as e:
        raise _fail(f"config parse error in {path}: {e}") from e
    extra = set(cfg) - TOP_KEYS
    if extra:
        raise _fail(f"unknown top-level config keys: {sorted(extra)}")
    return cfg, hashlib.sha256(raw).hexdigest()


class _Section:
    """One config table with typed reads, defaults, and unknown-key rejection."""

    def __init__(self, name: str, table: dict):
        if not isinstance(table, dict):
            raise _fail(f"[{name}] must be a table")
        self.name = name
        self.table = table
        self.seen: set[str] = set()
        self.effective: dict = {}

    def take(self, key: str, default, caster=None):
        self.seen.add(key)
        if key in self.table:
            val = self.table[key]
            if caster is not None:
                try:
                    val = caster(val)
                except (TypeError, ValueError) as e:
                    raise _fail(f"[{self.name}] {key}: {e}") from e
        else:
            val = default
        self.effective[key] = val
        return val

    def finish(self):
        extra = set(self.table) - self.seen
        if extra:
            raise _fail(f"unknown keys in [{self.name}]: {sorted(extra)}")
        return self.effective


def _as_point4(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size != 4:
        raise ValueError("expected 4 coordinates")
    return arr


def _as_floats(v) -> tuple[float, ...]:
    return tuple(float(x) for x in np.asarray(v, dtype=float).reshape(-1))


def _resolve_system(cfg: dict) -> tuple[SkewProductSystem, dict]:
    table = cfg.get("system")
    if table is None:
        raise _fail("config needs a [system] table")
    if not isinstance(table, dict):
        raise _fail("[system] must be a table")
    if "preset" in table:
        sec = _Section("system", table)
        preset = sec.take("preset", None, str)
        if preset == "product":
            sec.finish()
            sys_ = product_system()
        elif preset == "broken":
            theta_max = sec.take("theta_max", DEFAULT_THETA_MAX, float)
            search_seed = sec.take("search_seed", None,
                                   lambda v: int(v))
            gate_radius = sec.take("gate_radius", DEFAULT_GATE_RADIUS, float)
            sec.finish()
            kwargs = {"theta_max": theta_max, "gate_radius": gate_radius}
            if search_seed is not None:
                kwargs["seed"] = search_seed
            sys_ = broken_system(**kwargs)
        else:
            raise _fail(f"unknown system preset {preset!r}")
        echo = {"preset": preset, **system_to_dict(sys_)}
        return sys_, echo
    try:
        sys_ = system_from_dict(table)
    except (ValueError, KeyError) as e:
        raise _fail(f"[system]: {e}") from e
    return sys_, system_to_dict(sys_)


def _resolve_workers(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        val = flag
    else:
        env = os.environ.get("SKEWLAB_WORKERS")
        if env is not None:
            try:
                val = int(env)
            except ValueError as e:
                raise _fail(f"SKEWLAB_WORKERS is not an integer: {env!r}") from e
        else:
            val = cfg.get("workers", 0)
            if not isinstance(val, int) or isinstance(val, bool):
                raise _fail("config key 'workers' must be an integer")
    if val < 0:
        raise _fail("workers must be >= 0 (0 means all cores)")
    return val


def _resolve_seed(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        return flag
    val = cfg.get("seed", 0)
    if not isinstance(val, int) or isinstance(val, bool):
        raise _fail("config key 'seed' must be an integer")
    return val


# ---------------------------------------------------------------------------
# output plumbing

class _Run:
    """Collects data outputs and timings, then seals them with a manifest."""

    def __init__(self, out_dir: Path, config_hash: str):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.outputs: list[str] = []
        self.timings: dict[str, float] = {}
        self.started = time.perf_counter()
        self.started_utc = datetime.now(timezone.utc).isoformat()

    def write_json(self, name: str, obj) -> None:
        text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
        (self.out / name).write_text(text, encoding="utf-8")
        self.outputs.append(name)

    def write_csv(self, name: str, header: list[str], rows) -> None:
        # RFC 4180: CRLF line endings, header row first.
        with open(self.out / name, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for row in rows:
                w.writerow(row)
        self.outputs.append(name)

    def write_bytes(self, name: str, raw: bytes) -> None:
        (self.out / name).write_bytes(raw)
        self.outputs.append(name)

    def timed(self, label: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = run.timings.get(label, 0.0) \
                    + time.perf_counter() - self.t0

        return _Timer()

    def seal(self, command: str, effective: dict) -> None:
        manifest = {
            "command": command,
            "config_sha256": self.config_hash,
            "code_version": __version__,
            "started_utc": self.started_utc,
            "wall_clock_seconds": time.perf_counter() - self.started,
            "timings_seconds": self.timings,
            "outputs": sorted(self.outputs),
            "effective_config": effective,
        }
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        (self.out / "run_manifest.json").write_text(text, encoding="utf-8")


def _fmt(x) -> str:
    """CSV cell for floats: repr keeps round-trip precision and determinism."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# ---------------------------------------------------------------------------
# subcommands

def cmd_verify(sys_, params: dict, run: _Run, seed: int, workers: int) -> int:
    sec = _Section("verify", params)
    grids = sec.take("grids", [8], lambda v: [int(x) for x in v])
    tol = sec.take("tol", 1e-10, float)
    max_iter = sec.take("max_iter", 200, int)
    effective = sec.finish()

    reports = []
    with run.timed("condition_report"):
        for n in grids:
            reports.append((n, condition_report(sys_, grid_n=n, tol=tol,
                                                 max_iter=max_iter)))

    run.write_json("verify_report.json",
                   {"grids": [{"grid_n": n, **r.as_dict()} for n, r in reports]})
    header = ["grid_n", "ss_min", "ss_max", "ws_min", "ws_max", "wu_min",
              "wu_max", "uu_min", "uu_max", "cond_a", "cond_b", "cond_c",
              "margin_c", "ok"]
    rows = []
    for n, r in reports:
        b = r.bounds
        rows.append([n] + [_fmt(v) for v in (b.ss_min, b.ss_max, b.ws_min,
                                             b.ws_max, b.wu_min, b.wu_max,
                                             b.uu_min, b.uu_max)]
                    + [r.cond_a, r.cond_b, r.cond_c, _fmt(r.margin_c), r.ok])
    run.write_csv("conditions.csv", header, rows)
    run.effective = effective
    return 0 if all(r.ok for _, r in reports) else 3


def cmd_holonomy(sys_, params: dict, run: _Run, seed: int, workers: int) -> int:
    sec = _Section("holonomy", params)
    count = sec.take("count", 100, int)
    side = sec.take("side", "u", str)
    tol = sec.take("tol", 1e-9, float)
    max_depth = sec.take("max_depth", 60, int)
    t_range = sec.take("t_range", 0.45, float)
    triples = sec.take("triples", None)
    rate_rows = sec.take("rate_rows", 2000, int)
    rate_depth = sec.take("rate_depth", 5, int)
    effective = sec.finish()
    if side not in ("u", "s"):
        raise _fail("[holonomy] side must be 'u' or 's'")
    if rate_rows < 0:
        raise _fail("[holonomy] rate_rows must be >= 0")

    if triples is None:
        rng = stream(seed, "holonomy-cli", 0)
        ps = rng.random((count, 4))
        ts = rng.uniform(-t_range, t_range, size=count)
        xs = rng.random((count, 2))
        split = sys_.base_split
        e = split.dir_u.vector() if side == "u" else split.dir_s.vector()
        qs = wrap(ps[:, :2] + ts[:, None] * e[None, :])
        rows_in = [(ps[i], qs[i], xs[i]) for i in range(count)]
    else:
        rows_in = []
        for k, t in enumerate(triples):
            try:
                rows_in.append((_as_point4(t["p"]),
                                np.asarray(t["q"], dtype=float).reshape(2),
                                np.asarray(t["x"], dtype=float).reshape(2)))
            except (KeyError, TypeError, ValueError) as e:
                raise _fail(f"[holonomy] triples[{k}]: {e}") from e
        effective["count"] = len(rows_in)

    batch_fn = _u_holonomy_batch if side == "u" else _s_holonomy_batch
    header = ["index", "p0", "p1", "p2", "p3", "q0", "q1", "x0", "x1", "side",
              "out0", "out1", "depth", "increment", "certified", "rate_fit",
              "error"]
    rows = []
    warnings = 0
    certified = 0
    max_defect = 0.0
    with run.timed(f"{side}_holonomy"):
        for i, (p, q, x) in enumerate(rows_in):
            base_cells = [i] + [_fmt(v) for v in (*p, *q, *x)] + [side]
            try:
                leaf_parameter(sys_, p[:2], q, unstable=(side == "u"))
                b = batch_fn(sys_, p[:2], q[None, :], x[None, :], tol,
                             max_depth, want_jacobian=False)
            except ConditionError as e:
                warnings += 1
                rows.append(base_cells + ["", "", "", "", "", "", str(e)])
                continue
            out = b.points[0]
            ratio = geometric_ratio(b.increments[:, 0])
            cert = bool(b.certified[0])
            certified += cert
            defect = float(np.abs(np.minimum(np.abs(out - x),
                                             1 - np.abs(out - x))).max())
            max_defect = max(max_defect, defect)
            rows.append(base_cells + [_fmt(out[0]), _fmt(out[1]), b.depth,
                                      _fmt(float(b.increments[-1, 0])), cert,
                                      "" if ratio is None else _fmt(ratio), ""])
    run.write_csv("holonomy_table.csv", header, rows)
    report = {
        "side": side, "rows": len(rows), "warnings": warnings,
        "certified": certified, "tol": tol, "max_depth": max_depth,
        "max_identity_defect": max_defect,
    }
    if rate_rows > 0:
        with run.timed("rate_probe"):
            probe = convergence_rate_probe(sys_, side=side, count=rate_rows,
                                           depth=rate_depth, t_range=t_range,
                                           seed=seed)
        report["rate"] = {
            "rows": probe.count, "depth": probe.depth,
            "envelope": [float(v) for v in probe.envelope],
            "ratio": probe.ratio,
        }
    run.write_json("holonomy_report.json", report)
    run.effective = effective
    return 0


def cmd_transversality(sys_, params: dict, run: _Run, seed: int,
                       workers: int) -> int:
    sec = _Section("transversality", params)
    mode = sec.take("mode", "both", str)
    p_u_raw = sec.take("p_u", [0.0, 0.0], _as_floats)
    ts = sec.take("leaf_ts", list(DEFAULT_LEAF_TS), _as_floats)
    grid_n = sec.take("grid_n", 64, int)
    k = sec.take("k", 16, int)
    theta_max = sec.take("theta_max", DEFAULT_THETA_MAX, float)
    budget = sec.take("budget", 10_000, int)
    angle_tol = sec.take("angle_tol", 1e-3, float)
    rho = sec.take("rho", 0.2, float)
    field_n = sec.take("field_n", 64, int)
    effective = sec.finish()
    if mode not in ("alpha", "search", "both"):
        raise _fail("[transversality] mode must be 'alpha', 'search', or 'both'")
    if len(p_u_raw) != 2:
        raise _fail("[transversality] p_u must have 2 coordinates")
    if k < 1 or int(round(k ** 0.5)) ** 2 != k:
        raise _fail("[transversality] k must be a perfect square (covering grid)")

    report: dict = {"mode": mode}
    p_u = TorusPoint2(*p_u_raw)

    if mode in ("alpha", "both"):
        qs = canonical_leaf_points(sys_, p_u, ts)
        with run.timed("alpha_field"):
            fld = alpha_field(sys_, p_u, qs, n=grid_n)
        report["alpha"] = {
            "grid_n": grid_n,
            "leaf_ts": list(ts),
            "alpha_min": float(fld.min()),
            "alpha_max": float(fld.max()),
            "alpha_mean": float(fld.mean()),
        }
        rows = [[i, j, _fmt(fld[i, j])]
                for i in range(grid_n) for j in range(grid_n)]
        run.write_csv("alpha_field.csv", ["i", "j", "alpha"], rows)

    if mode in ("search", "both"):
        w = LineField.constant(sys_.fiber_split.dir_s.angle, field_n)
        with run.timed("search_perturbation"):
            res = search_perturbation(w, w, w, w, k=k, theta_max=theta_max,
                                      budget=budget, seed=seed,
                                      angle_tol=angle_tol, rho=rho)
        rep = res.report
        report["search"] = {
            "success": res.success,
            "empty": rep.empty,
            "trial": res.trial,
            "trials_used": res.trials_used,
            "min_separation": rep.min_separation,
            "angle_tol": rep.angle_tol,
            "k": k,
            "rho": res.rho,
            "centers": res.centers.tolist(),
            "angles": res.angles.tolist(),
        }
        rows = [[i, _fmt(rep.witnesses[i, 0]), _fmt(rep.witnesses[i, 1])]
                + [_fmt(a) for a in rep.witness_angles[i]]
                for i in range(rep.witnesses.shape[0])]
        run.write_csv("witnesses.csv",
                      ["index", "x0", "x1", "angle_w", "angle_v1", "angle_v2",
                       "angle_v3"], rows)

    run.write_json("transversality_report.json", report)
    run.effective = effective
    return 0


def cmd_ugibbs(sys_, params: dict, run: _Run, seed: int, workers: int) -> int:
    sec = _Section("ugibbs", params)
    seeds_raw = sec.take("seeds", [[0.1, 0.2, 0.0, 0.0],
                                   [0.1, 0.2, 0.3217, 0.5893]])
    schedule = sec.take("schedule", [250, 500, 1000, 2000],
                        lambda v: [int(x) for x in v])
    samples = sec.take("samples", 10_000, int)
    bins_raw = sec.take("bins", 16)
    leaf_length = sec.take("leaf_length", 1.0, float)
    thr_single = sec.take("threshold_single", 0.05, float)
    thr_multi = sec.take("threshold_multi", 0.1, float)
    atom_threshold = sec.take("atom_threshold", 0.9, float)
    effective = sec.finish()

    if isinstance(bins_raw, list):
        vals = {int(b) for b in bins_raw}
        if len(vals) != 1:
            raise _fail("[ugibbs] inconsistent bin resolutions across seeds: "
                        f"{sorted(vals)}")
        bins = vals.pop()
    else:
        bins = int(bins_raw)
    effective["bins"] = bins
    try:
        seed_pts = [_as_point4(s) for s in seeds_raw]
    except (TypeError, ValueError) as e:
        raise _fail(f"[ugibbs] seeds: {e}") from e
    if len(seed_pts) < 2:
        raise _fail("[ugibbs] needs at least 2 seed points")

    with run.timed("uniqueness_probe"):
        rep = uniqueness_probe(sys_, seed_pts, n_schedule=schedule,
                               samples=samples, threshold_multi=thr_multi,
                               threshold_single=thr_single, seed=seed,
                               bins=bins, leaf_length=leaf_length,
                               workers=workers)

    doc = rep.as_dict()
    doc["su_torus"] = []
    for i, mu in enumerate(rep.final_measures):
        run.write_bytes(f"measure_seed{i}.ugh1", mu.to_bytes())
        run.write_bytes(f"fiber_marginal_seed{i}.ugh1",
                        mu.fiber_marginal().to_bytes())
        doc["su_torus"].append(su_torus_detect(mu, atom_threshold).as_dict())
    run.write_json("ugibbs_report.json", doc)

    s = len(seed_pts)
    run.write_csv("pairwise_tv.csv", ["seed_i", "seed_j", "fiber_tv"],
                  [[i, j, _fmt(rep.pairwise[i, j])]
                   for i in range(s) for j in range(i + 1, s)])
    run.write_csv("schedule_curve.csv", ["n", "max_pairwise_fiber_tv"],
                  [[n, _fmt(rep.curve[kk])]
                   for kk, n in enumerate(rep.schedule)])
    run.effective = effective
    return 0


def cmd_density(sys_, params: dict, run: _Run, seed: int, workers: int) -> int:
    sec = _Section("density", params)
    eps = sec.take("eps", None)
    m_max = sec.take("m_max", 60, int)
    samples = sec.take("samples", 100_000, int)
    p_raw = sec.take("p", [0.1, 0.2, 0.0, 0.0], _as_floats)
    leaf_length = sec.take("leaf_length", 1.0, float)
    effective = sec.finish()
    if eps is None:
        raise _fail("[density] eps is required")
    eps = float(eps)
    effective["eps"] = eps
    if not 0.0 < eps < 0.5:
        raise _fail(f"[density] eps must lie in (0, 0.5), got {eps}")
    if len(p_raw) != 4:
        raise _fail("[density] p must have 4 coordinates")

    with run.timed("density_probe"):
        rep = density_probe(sys_, np.array(p_raw), eps, m_max=m_max,
                            samples=samples, leaf_length=leaf_length,
                            seed=seed, workers=workers)
    run.write_json("density_report.json", rep.as_dict())
    run.write_csv("coverage.csv", ["m", "coverage"],
                  [[m, _fmt(rep.coverage[m])] for m in range(m_max + 1)])
    run.effective = effective
    return 0


def cmd_perturb(sys_, params: dict, run: _Run, seed: int, workers: int) -> int:
    sec = _Section("perturb", params)
    theta_max = sec.take("theta_max", DEFAULT_THETA_MAX, float)
    gate_radius = sec.take("gate_radius", DEFAULT_GATE_RADIUS, float)
    ts = sec.take("leaf_ts", list(DEFAULT_LEAF_TS), _as_floats)
    holonomy_tol = sec.take("holonomy_tol", 1e-9, float)
    k = sec.take("k", 16, int)
    budget = sec.take("budget", 10_000, int)
    angle_tol = sec.take("angle_tol", 1e-3, float)
    rho = sec.take("rho", 0.2, float)
    field_n = sec.take("field_n", 64, int)
    p_u_raw = sec.take("p_u", [0.0, 0.0], _as_floats)
    effective = sec.finish()
    if sys_.perturbations:
        raise _fail("[perturb] the input system must be rigid (no perturbations)")
    if len(p_u_raw) != 2:
        raise _fail("[perturb] p_u must have 2 coordinates")
    p_u = TorusPoint2(*p_u_raw)

    w = LineField.constant(sys_.fiber_split.dir_s.angle, field_n)
    with run.timed("search_perturbation"):
        res = search_perturbation(w, w, w, w, k=k, theta_max=theta_max,
                                  budget=budget, seed=seed,
                                  angle_tol=angle_tol, rho=rho)
    if not res.success:
        raise BuildError(
            f"no transversal rotation parameters within budget {budget} "
            f"(best separation {res.report.min_separation:.3e})")

    qs = canonical_leaf_points(sys_, p_u, ts)
    hs = [res.h1, res.h2, res.h3]
    with run.timed("build_rigidity_breaking"):
        broken = build_rigidity_breaking(sys_, p_u, qs, hs,
                                         holonomy_tol=holonomy_tol,
                                         gate_radius=gate_radius)
    with run.timed("diagnostics"):
        geom = check_gate_geometry(broken, p_u, qs, gate_radius)
        defect = gate_identity_defect(broken, sys_, p_u, qs, hs,
                                      holonomy_tol=holonomy_tol)

    sys_doc = system_to_dict(broken)
    run.write_bytes("system.toml",
                    _toml_dumps({"system": sys_doc}).encode("utf-8"))
    run.write_json("perturb_report.json", {
        "search": {
            "success": res.success,
            "trial": res.trial,
            "trials_used": res.trials_used,
            "min_separation": res.report.min_separation,
            "angles": res.angles.tolist(),
            "centers": res.centers.tolist(),
            "rho": res.rho,
        },
        "gates": {
            "leaf_ts": list(ts),
            "gate_radius": gate_radius,
            "min_pairwise": geom.min_pairwise,
            "min_orbit_clearance": geom.min_orbit_clearance,
            "min_anchor_clearance": geom.min_anchor_clearance,
            "orbit_depth": geom.orbit_depth,
        },
        "gate_identity_defect": defect,
        "system_sha256": system_hash(broken),
    })
    run.effective = effective
    return 0


# ---------------------------------------------------------------------------
# TOML emission (restricted schema: what system_to_dict produces)

def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise TypeError(f"cannot emit {type(v).__name__} as TOML value")


def _toml_table(path: str, table: dict, lines: list[str]) -> None:
    plain = {k: v for k, v in table.items()
             if not isinstance(v, dict)
             and not (isinstance(v, list) and v and isinstance(v[0], dict))}
    for k, v in plain.items():
        lines.append(f"{k} = {_toml_scalar(v)}")
    for k, v in table.items():
        if isinstance(v, dict):
            lines.append(f"[{path}.{k}]" if path else f"[{k}]")
            _toml_table(f"{path}.{k}" if path else k, v, lines)
        elif isinstance(v, list) and v and isinstance(v[0], dict):
            sub = f"{path}.{k}" if path else k
            for item in v:
                lines.append(f"[[{sub}]]")
                _toml_table(sub, item, lines)


def _toml_dumps(doc: dict) -> str:
    lines: list[str] = []
    for k, v in doc.items():
        if isinstance(v, dict):
            lines.append(f"[{k}]")
            _toml_table(k, v, lines)
        else:
            lines.append(f"{k} = {_toml_scalar(v)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# entry point

_DISPATCH = {
    "verify": cmd_verify,
    "holonomy": cmd_holonomy,
    "transversality": cmd_transversality,
    "ugibbs": cmd_ugibbs,
    "density": cmd_density,
    "perturb": cmd_perturb,
}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="skewlab",
        description="Numerical laboratory for rigid skew products on the 4-torus.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker count (0 = all cores); overrides "
                            "SKEWLAB_WORKERS and the config")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override for the run")
    return ap


def _run(argv) -> int:
    ns = _build_parser().parse_args(argv)
    cfg, cfg_hash = _load_config(ns.config)

    declared = cfg.get("operation")
    if declared is not None and declared != ns.command:
        raise _fail(f"config declares operation {declared!r} but the "
                    f"{ns.command!r} subcommand was invoked")

    seed = _resolve_seed(ns.seed, cfg)
    workers = _resolve_workers(ns.workers, cfg)
    out_name = ns.out or cfg.get("out") or f"skewlab_{ns.command}_out"
    if not isinstance(out_name, str):
        raise _fail("config key 'out' must be a string")

    sys_, sys_echo = _resolve_system(cfg)
    run = _Run(Path(out_name), cfg_hash)
    params = cfg.get(ns.command, {})
    run.effective = {}
    code = _DISPATCH[ns.command](sys_, params, run, seed, workers)
    run.seal(ns.command, {
        "operation": ns.command,
        "seed": seed,
        "workers": workers,
        "out": str(run.out),
        "system": sys_echo,
        ns.command: run.effective,
    })
    return code


def main(argv=None) -> int:
    try:
        return _run(_sys.argv[1:] if argv is None else argv)
    except ConfigError as e:
        print(f"skewlab: config error: {e}", file=_sys.stderr)
        return 2
    except ConditionError as e:
        print(f"skewlab: condition failure: {e}", file=_sys.stderr)
        return 3
    except NonConvergenceError as e:
        print(f"skewlab: non-convergence: {e}", file=_sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
