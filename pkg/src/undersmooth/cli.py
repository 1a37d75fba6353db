"""Command-line entry point: ``undersmooth {analyze,simulate,expand,test-heterogeneity}``.

Configuration comes from a TOML (or JSON) file; command-line flags override
file values. Every artifact starts with ``#`` metadata lines (CSV) or a
``meta`` block (JSON) carrying the library version, seed and a SHA-256 hash of
the resolved configuration, so reruns with the same inputs are byte-identical.
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, FeatureMatrix, HetModelSpec
from .features import hadamard_walsh_expand, interaction_expand, prune_columns
from .functionals import functional_from_config
from .tu import sensitivity_rows, tu_interval, tu_interval_split, tu_wald_test

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("undersmooth")

SUBCOMMANDS = ("analyze", "simulate", "expand", "test-heterogeneity")
# Keys that never change results and are left out of the config hash.
UNHASHED = ("threads", "out", "format")


class CliError(Exception):
    """A failure reported to the user as error JSON."""


class CsvInputError(CliError, ValueError):
    """Malformed input file; the message carries row/column coordinates."""


# ---------------------------------------------------------------- ingestion


@dataclass(frozen=True)
class CsvSchema:
    outcome: str
    treatment: str = None
    covariates: tuple = None  # default: every other column, in file order


def _read_table(path):
    """Header plus rows of a comma-separated file, skipping ``#`` lines."""
    path = Path(path)
    if not path.is_file():
        raise CsvInputError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [(i + 1, line) for i, line in enumerate(fh) if not line.startswith("#")]
    reader = csv.reader(line for _, line in lines)
    rows = list(reader)
    if not rows or not rows[0]:
        raise CsvInputError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    dup = sorted({h for h in header if header.count(h) > 1})
    if dup:
        raise CsvInputError(f"{path}: duplicate column(s) {dup}")
    body = []
    for (lineno, _), row in zip(lines[1:], rows[1:]):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvInputError(
                f"{path}: row {len(body) + 1} (line {lineno}) has {len(row)} fields, expected {len(header)}"
            )
        body.append((lineno, row))
    return header, body


def _parse_columns(path, header, body, columns):
    missing = [c for c in columns if c not in header]
    if missing:
        raise CsvInputError(f"{path}: missing column(s) {missing}")
    pos = [header.index(c) for c in columns]
    out = np.empty((len(body), len(columns)))
    for i, (lineno, row) in enumerate(body):
        for j, p in enumerate(pos):
            cell = row[p].strip()
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise CsvInputError(
                    f"{path}: non-numeric value {cell!r} at row {i + 1} (line {lineno}), column {columns[j]!r}"
                )
            out[i, j] = v
    return out


def column_checksums(values, names):
    return {n: hashlib.sha256(np.ascontiguousarray(values[:, j]).tobytes()).hexdigest()[:16]
            for j, n in enumerate(names)}


def ingest_csv(path, schema):
    """Read ``path`` into a :class:`Dataset` following ``schema``.

    Rows and columns in errors are 1-based data rows (header excluded);
    the physical line number is given as well.
    """
    if isinstance(schema, dict):
        schema = CsvSchema(**schema)
    header, body = _read_table(path)
    if not body:
        raise CsvInputError(f"{path}: no data rows")
    fixed = [schema.outcome] + ([schema.treatment] if schema.treatment else [])
    covs = list(schema.covariates) if schema.covariates is not None else [
        h for h in header if h not in fixed
    ]
    cols = fixed + covs
    values = _parse_columns(path, header, body, cols)
    log.info("read %d rows from %s; checksums %s", len(body), path, column_checksums(values, cols))
    y = values[:, 0]
    d = values[:, 1] if schema.treatment else None
    X = values[:, len(fixed):]
    return Dataset(y, X, d, tuple(covs))


# ------------------------------------------------------------------ output


def config_hash(cfg):
    """Hash of the resolved config; input files enter through their content hash."""
    clean = {k: v for k, v in cfg.items() if k not in UNHASHED}
    if isinstance(clean.get("data"), dict):
        clean["data"] = {k: v for k, v in clean["data"].items() if k != "path"}
    return hashlib.sha256(json.dumps(clean, sort_keys=True, default=str).encode()).hexdigest()


def _meta(cfg):
    return {"version": __version__, "seed": cfg.get("seed"), "config_sha256": config_hash(cfg)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, payload, cfg):
    doc = {"meta": _meta(cfg), **_jsonable(payload)}
    text = json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(_jsonable(v), sort_keys=True)
    return str(v)


def write_csv(path, rows, columns, cfg, extra_meta=None):
    buf = io.StringIO(newline="")
    meta = {**_meta(cfg), **(extra_meta or {})}
    for key in sorted(meta):
        buf.write(f"# {key}: {meta[key]}\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def write_table(out, stem, rows, columns, cfg):
    fmt = cfg.get("format", "csv")
    if fmt == "json":
        path = out / f"{stem}.json"
        write_json(path, {"rows": [{c: r.get(c) for c in columns} for r in rows]}, cfg)
    else:
        path = out / f"{stem}.csv"
        write_csv(path, rows, columns, cfg)
    return path


# ----------------------------------------------------------------- config


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            return json.loads(raw.decode("utf-8"))
        return tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise CliError(f"cannot parse config {path}: {exc}") from exc


def resolve_config(args):
    """File values, then flag overrides; file-relative input paths."""
    cfg = load_config(args.config) if args.config else {}
    base = Path(args.config).resolve().parent if args.config else Path.cwd()
    cfg = dict(cfg)
    cfg["subcommand"] = args.command
    for key in ("seed", "sbar", "alpha", "reps", "threads", "format"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    cfg.setdefault("seed", cfg.get("simulate", {}).get("seed", 0))
    cfg.setdefault("threads", 1)
    cfg.setdefault("format", "csv")
    if args.input:
        cfg.setdefault("data", {})["path"] = args.input
    data = cfg.get("data")
    if isinstance(data, dict) and "path" in data:
        data = dict(data)
        p = Path(data["path"])
        data["path"] = str(p if p.is_absolute() else (base / p))
        data["sha256"] = hashlib.sha256(Path(data["path"]).read_bytes()).hexdigest() \
            if Path(data["path"]).is_file() else None
        cfg["data"] = data
    return cfg


def _need(cfg, key, what):
    if key not in cfg:
        raise CliError(f"{what} requires '{key}' in the config")
    return cfg[key]


def _load_data(cfg):
    data = _need(cfg, "data", cfg["subcommand"])
    schema = CsvSchema(
        outcome=_need(data, "outcome", "[data]"),
        treatment=data.get("treatment"),
        covariates=tuple(data["covariates"]) if "covariates" in data else None,
    )
    return ingest_csv(_need(data, "path", "[data]"), schema)


def _initial_model(cfg, data):
    spec = cfg.get("initial_model")
    if spec is None:
        return None

    def idx(v):
        return data.names.index(v) if isinstance(v, str) else int(v)

    if "paired" in spec:
        return HetModelSpec.paired([idx(v) for v in spec["paired"]])
    return HetModelSpec([idx(v) for v in spec.get("base", [])],
                        [idx(v) for v in spec.get("interact", [])])


def _candidates(cfg, data):
    c = cfg.get("candidates")
    if c is None:
        return None
    return [data.names.index(v) if isinstance(v, str) else int(v) for v in c]


# ------------------------------------------------------------- subcommands


def _functional_specs(cfg):
    if "functionals" in cfg:
        specs = cfg["functionals"]
    elif "functional" in cfg:
        specs = [cfg["functional"]]
    else:
        raise CliError("analyze requires 'functional' or 'functionals' in the config")
    out = []
    for i, s in enumerate(specs):
        s = dict(s)
        if "kind" not in s:
            raise CliError(f"functional #{i + 1} has no 'kind'")
        default = s["kind"] if len(specs) == 1 else f"{s['kind']}_{i}"
        out.append((str(s.pop("name", default)), s))
    names = [n for n, _ in out]
    if len(set(names)) != len(names):
        raise CliError(f"functional names must be unique, got {names}")
    return out


def cmd_analyze(cfg, out):
    data = _load_data(cfg)
    sbar = int(cfg.get("sbar", 10))
    alpha = float(cfg.get("alpha", 0.05))
    paired = bool(cfg.get("paired", True))
    init = _initial_model(cfg, data)
    cands = _candidates(cfg, data)
    written = []
    for name, spec in _functional_specs(cfg):
        f = functional_from_config(spec, data)
        if cfg.get("split"):
            res = tu_interval_split(data, f, sbar, alpha, split_seed=int(cfg["seed"]),
                                    candidates=cands, paired=paired)
        else:
            res = tu_interval(data, f, sbar, alpha, initial=init, candidates=cands, paired=paired)
        payload = {"functional": {"name": name, **spec}, "n": data.n, "k": data.k,
                   "covariates": list(data.names), "result": res.to_dict()}
        p = out / f"tu_{name}.json"
        write_json(p, payload, cfg)
        rows = sensitivity_rows(res)
        for r in rows:
            for key in ("lower_added", "upper_added"):
                lab = r[key]
                r[key] = None if lab is None else f"{data.names[lab['index']]}:{lab['kind']}"
        cols = ["sbar", "lower", "upper", "length", "lower_added", "upper_added"]
        written += [p, write_table(out, f"sensitivity_{name}", rows, cols, cfg)]
    return written


def cmd_test_heterogeneity(cfg, out):
    data = _load_data(cfg)
    if not data.has_treatment:
        raise CliError("test-heterogeneity needs a treatment column")
    sbar = int(cfg.get("sbar", 10))
    res = tu_wald_test(data, sbar, _candidates(cfg, data), _initial_model(cfg, data),
                       bool(cfg.get("paired", True)))
    p = out / "wald.json"
    write_json(p, {"n": data.n, "k": data.k, "covariates": list(data.names), "result": res.to_dict()}, cfg)
    return [p]


def cmd_expand(cfg, out):
    ex = _need(cfg, "expand", "expand")
    path = _need(_need(cfg, "data", "expand"), "path", "[data]")
    header, body = _read_table(path)
    cols = list(ex.get("columns") or [])
    if not cols:
        raise CliError("[expand] requires a non-empty 'columns' list")
    keep = list(ex.get("keep", []))
    V = _parse_columns(path, header, body, cols)
    K = _parse_columns(path, header, body, keep) if keep else np.empty((len(body), 0))
    basis = ex.get("basis", "interactions")
    if basis == "interactions":
        fm = interaction_expand(V, int(ex.get("max_order", 2)), cols)
    elif basis == "hadamard":
        fm = hadamard_walsh_expand(V, int(ex.get("min_size", 1)), int(ex.get("max_size", 2)), cols)
    else:
        raise CliError(f"unknown basis {basis!r}; use 'interactions' or 'hadamard'")
    prune = ex.get("prune")
    if prune is not None:
        gcol = prune.get("group_by")
        if gcol:
            g = _parse_columns(path, header, body, [gcol])[:, 0]
            groups = [np.flatnonzero(g == v) for v in np.unique(g)]
        else:
            groups = [np.arange(len(body))]
        kept = prune_columns(fm, groups, int(prune.get("min_nonzero", 5)),
                             float(prune.get("qr_tol", 1e-6)))
        log.info("pruning kept %d of %d columns", len(kept), fm.values.shape[1])
        fm = fm.select(kept)
    fm = FeatureMatrix(K, tuple(keep), ("kept",) * len(keep)).hstack(fm) if keep else fm
    names = list(fm.names)
    rows = [dict(zip(names, r)) for r in fm.values.tolist()]
    fmt = cfg.get("format", "csv")
    if fmt == "json":
        p = out / "features.json"
        write_json(p, {"names": names, "provenance": list(fm.provenance),
                       "values": fm.values}, cfg)
    else:
        p = out / "features.csv"
        write_csv(p, rows, names, cfg, {"provenance": json.dumps(list(fm.provenance))})
    return [p]


SIM_KEYS = ("n", "p", "s0", "r2_target", "reps", "seed", "nu", "cost", "alpha", "sbar_max",
            "fixed_tau", "oracle_draws", "estimators", "cv_folds", "paired", "cv_max_r2")


def cmd_simulate(cfg, out):
    from .sim import SimDesign, run_battery

    sim = dict(cfg.get("simulate", {}))
    unknown = set(sim) - set(SIM_KEYS)
    if unknown:
        raise CliError(f"unknown [simulate] keys {sorted(unknown)}")
    for key, target in (("seed", "seed"), ("reps", "reps"), ("alpha", "alpha"), ("sbar", "sbar_max")):
        if key in cfg:
            sim[target] = cfg[key]
    if "estimators" in sim:
        sim["estimators"] = tuple(sim["estimators"])
    design = SimDesign(**sim)
    report = run_battery(design, threads=int(cfg.get("threads", 1)))
    log.info("simulation finished in %.1fs with %d failures", report.runtime, len(report.failures))
    doc = report.to_dict()
    doc.pop("runtime_seconds")
    fmt = cfg.get("format", "csv")
    written = []
    if fmt == "json":
        p = out / "report.json"
        write_json(p, doc, cfg)
    else:
        rows = []
        for m in report.metrics:
            for metric in ("bias", "sd", "rmse", "coverage", "coverage_se", "length"):
                if metric in m:
                    rows.append({"estimator": m["estimator"], "functional": m["functional"],
                                 "metric": metric, "value": m[metric]})
        p = out / "report.csv"
        write_csv(p, rows, ["estimator", "functional", "metric", "value"], cfg,
                  {"failures": len(report.failures), "nesting_violations": report.nesting_violations})
    written.append(p)
    p = out / "path.csv"
    write_csv(p, report.path, ["functional", "sbar", "mean_length", "coverage", "coverage_se"], cfg)
    written.append(p)
    return written


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "expand": cmd_expand,
    "test-heterogeneity": cmd_test_heterogeneity,
}


# ------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def build_parser():
    p = _Parser(prog="undersmooth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML or JSON configuration file")
        s.add_argument("--input", help="input CSV (overrides [data].path)")
        s.add_argument("--seed", type=int)
        s.add_argument("--sbar", type=int, help="largest number of selection mistakes allowed")
        s.add_argument("--alpha", type=float)
        s.add_argument("--reps", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--format", choices=("csv", "json"))
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _error_json(exc, command):
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "subcommand": command,
                       "version": __version__}, sort_keys=True)


def run(argv=None):
    """Parse ``argv`` and run one subcommand; returns the exit status."""
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        from threadpoolctl import threadpool_limits

        # Single-threaded BLAS keeps floating-point results independent of --threads.
        with threadpool_limits(1):
            for p in COMMANDS[command](cfg, out):
                log.info("wrote %s", p)
        return 0
    except (CliError, ValueError, KeyError, IndexError, OSError, np.linalg.LinAlgError) as exc:
        print(_error_json(exc, command), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable failure
        print(_error_json(exc, command), file=sys.stderr)
        return 2


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
