"""Experiment runner.

Usage::

    jebm run --preset gmm-scaled --out-dir runs/scaled
    jebm run --config my.ini --algorithm pcd --seed 3
    jebm compare runs/jarzynski runs/pcd runs/cd

Configs are INI files; see the README for the full key list.  A run
directory receives ``run.ini`` (the resolved config), ``diagnostics.csv``,
``walkers.csv`` and ``summary.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis
from . import dynamics as dyn
from . import population as popm
from .energy import MODEL_NAMES, make_model
from .resampling import SCHEMES
from .training import ALGORITHMS, OPTIMIZERS, TrainConfig, gmm_default_theta0, train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

PRESETS = ("gmm50-full", "gmm-scaled", "appendixC-fig8")
# flattened theta goes into diagnostics.csv only for models this small
THETA_COLUMNS_MAX = 32
RUN_KINDS = ("train", "empirical")


class ConfigError(ValueError):
    pass


# (type, default); "floats" is a comma-separated list
SCHEMA = {
    "run": {"kind": ("str", "train"), "seed": ("int", 0)},
    "model": {"name": ("str", "gmm"), "dim": ("int", 1)},
    "teacher": {
        "a": ("floats", []),
        "b": ("floats", []),
        "z": ("float", 0.0),
        "mu": ("floats", []),
    },
    "data": {"n": ("int", 1000), "file": ("str", "")},
    "init": {"theta": ("floats", [])},
    "train": {
        "algorithm": ("str", "jarzynski"),
        "K": ("int", 1000),
        "h": ("float", 0.1),
        "n_walkers": ("int", 1000),
        "walker_batch": ("int", 0),
        "data_batch": ("int", 0),
        "resampler": ("str", "systematic"),
        "ess_threshold": ("float", 1.0 / 1.05),
        "cd_steps": ("int", 4),
        "cd_lr_scale": ("float", 10.0),
        "optimizer": ("str", "sgd"),
        "adam_beta1": ("float", 0.9),
        "adam_beta2": ("float", 0.999),
        "adam_eps": ("float", 1e-8),
        "lr": ("float", 0.1),
        "lr.a": ("float", None),
        "lr.b": ("float", None),
        "lr.z": ("float", None),
        "lr.mu": ("float", None),
    },
    "empirical": {
        "regimes": ("strs", list(analysis.REGIMES)),
        "n_walkers": ("int", 200),
        "alpha": ("float", 1.0),
        "dt": ("float", 0.01),
        "T": ("float", 1e4),
        "a": ("float", -5.0),
        "b": ("float", 5.0),
        "z_star": ("float", -math.log(3.0)),
        "z0": ("float", 0.0),
        "record_every": ("int", 100),
    },
    "output": {"dir": ("str", "runs/out")},
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^#;=:\s][^=:]*?)\s*[=:]")


def _key_lines(text):
    """Map (section, key) to the 1-based line where it is defined."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = no
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            out[(section, m.group(1).strip())] = no
    return out


def _parse_value(kind, raw):
    raw = raw.strip()
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "floats":
        return [float(v) for v in raw.split(",") if v.strip()]
    if kind == "strs":
        return [v.strip() for v in raw.split(",") if v.strip()]
    raise AssertionError(kind)


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def _defaults():
    return {sec: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_ini(text, source="<config>", base=None) -> dict:
    """Parse and type-check an INI text, layering it over ``base`` (or the defaults)."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from None
    lines = _key_lines(text)
    values = base if base is not None else _defaults()
    for section in parser.sections():
        if section == "meta":
            continue
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{lines.get((section, None), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{source}:{lines.get((section, key), '?')}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            kind = SCHEMA[section][key][0]
            if raw.strip() == "" and SCHEMA[section][key][1] is None:
                values[section][key] = None
                continue
            try:
                values[section][key] = _parse_value(kind, raw)
            except ValueError:
                raise ConfigError(f"{where}: cannot read {key} = {raw!r} as {kind}") from None
    return values


@dataclass
class ExperimentConfig:
    """A fully resolved experiment: typed values for every schema key."""

    values: dict = field(default_factory=_defaults)
    preset: str | None = None

    @classmethod
    def from_text(cls, text, source="<config>", preset=None, base=None):
        base = None if base is None else json.loads(json.dumps(base.values))
        cfg = cls(parse_ini(text, source, base), preset)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, base=None):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        return cls.from_text(text, str(path), base.preset if base else None, base)

    @classmethod
    def from_preset(cls, name):
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
        text = resources.files("jarzynski_ebm").joinpath("presets", f"{name}.ini").read_text()
        return cls.from_text(text, f"preset:{name}", preset=name)

    def __getitem__(self, section):
        return self.values[section]

    @property
    def kind(self):
        return self["run"]["kind"]

    @property
    def seed(self):
        return self["run"]["seed"]

    @property
    def out_dir(self):
        return Path(self["output"]["dir"])

    def set(self, section, key, value):
        self.values[section][key] = value
        self.validate()

    # -- validation -----------------------------------------------------

    def validate(self):
        v = self.values
        if self.kind not in RUN_KINDS:
            raise ConfigError(f"[run] kind must be one of {RUN_KINDS}")
        if v["model"]["name"] not in MODEL_NAMES:
            raise ConfigError(f"[model] name must be one of {MODEL_NAMES}")
        if v["model"]["dim"] < 1:
            raise ConfigError("[model] dim must be positive")
        t = v["train"]
        if t["algorithm"] not in ALGORITHMS:
            raise ConfigError(f"[train] algorithm must be one of {ALGORITHMS}")
        if t["resampler"] not in SCHEMES:
            raise ConfigError(f"[train] resampler must be one of {SCHEMES}")
        if t["optimizer"] not in OPTIMIZERS:
            raise ConfigError(f"[train] optimizer must be one of {OPTIMIZERS}")
        d = v["model"]["dim"]
        for key in ("a", "b", "mu"):
            if len(v["teacher"][key]) > d:
                raise ConfigError(f"[teacher] {key} has more than dim={d} entries")
        for r in v["empirical"]["regimes"]:
            if r not in analysis.REGIMES:
                raise ConfigError(f"[empirical] unknown regime {r!r}; choose from {analysis.REGIMES}")
        if self.kind == "train":
            try:
                self.train_config().validate(None if v["data"]["file"] else v["data"]["n"])
                self.model().check_theta(self.teacher_theta())
            except ValueError as err:
                raise ConfigError(str(err)) from None
        else:
            try:
                self.empirical_config("jarzynski").validate()
            except ValueError as err:
                raise ConfigError(str(err)) from None

    # -- builders -------------------------------------------------------

    def _padded(self, values):
        d = self["model"]["dim"]
        out = np.zeros(d)
        out[: len(values)] = values
        return out

    def model(self):
        m = self["model"]
        if m["name"] == "gmm1d-z":
            t = self["teacher"]
            return make_model("gmm1d-z", m["dim"], a=self._padded(t["a"]), b=self._padded(t["b"]))
        return make_model(m["name"], m["dim"])

    def teacher_theta(self):
        t, name = self["teacher"], self["model"]["name"]
        if name == "gmm":
            return np.concatenate([self._padded(t["a"]), self._padded(t["b"]), [t["z"]]])
        if name == "gaussian":
            return self._padded(t["mu"])
        return np.array([t["z"]])

    def theta0(self):
        model = self.model()
        given = self["init"]["theta"]
        if given:
            try:
                return model.check_theta(np.array(given))
            except ValueError as err:
                raise ConfigError(f"[init] theta: {err}") from None
        rng = dyn.stream(self.seed, dyn.STREAM_THETA0)
        name = self["model"]["name"]
        if name == "gmm":
            return gmm_default_theta0(model.dim, rng)
        if name == "gaussian":
            return np.zeros(model.dim)
        return np.zeros(1)

    def data(self):
        path = self["data"]["file"]
        if path:
            try:
                data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
            except (OSError, ValueError) as err:
                raise ConfigError(f"cannot load data file {path}: {err}") from None
            if data.shape[1] != self["model"]["dim"]:
                raise ConfigError(f"data file {path} has {data.shape[1]} columns, expected {self['model']['dim']}")
            return data
        return self.model().sample(self.teacher_theta(), self["data"]["n"], dyn.stream(self.seed, dyn.STREAM_TEACHER))

    def train_config(self) -> TrainConfig:
        t = self["train"]
        lr = {"default": t["lr"]}
        for block in ("a", "b", "z", "mu"):
            if t[f"lr.{block}"] is not None:
                lr[block] = t[f"lr.{block}"]
        if t["algorithm"] == "cd":
            lr = {k: v * t["cd_lr_scale"] for k, v in lr.items()}
        blocks = set(self.model().param_blocks()) | {"default"}
        lr = {k: v for k, v in lr.items() if k in blocks}
        return TrainConfig(
            algorithm=t["algorithm"],
            K=t["K"],
            h=t["h"],
            lr=lr,
            n_walkers=t["n_walkers"],
            walker_batch=t["walker_batch"] or None,
            data_batch=t["data_batch"] or None,
            resampler=t["resampler"],
            ess_threshold=t["ess_threshold"],
            cd_steps=t["cd_steps"],
            seed=self.seed,
            optimizer=t["optimizer"],
            adam_betas=(t["adam_beta1"], t["adam_beta2"]),
            adam_eps=t["adam_eps"],
        )

    def empirical_config(self, regime) -> analysis.EmpiricalConfig:
        e = self["empirical"]
        return analysis.EmpiricalConfig(
            regime=regime,
            n_walkers=e["n_walkers"],
            alpha=e["alpha"],
            dt=e["dt"],
            T=e["T"],
            a=e["a"],
            b=e["b"],
            z_star=e["z_star"],
            z0=e["z0"],
            seed=self.seed,
            record_every=e["record_every"],
        )

    # -- serialization --------------------------------------------------

    def to_ini(self) -> str:
        lines = ["[meta]", f"version = {__version__}", f"preset = {self.preset or ''}", ""]
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_format_value(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# run outputs


def theta_names(model):
    names = []
    for block, sl in model.param_blocks().items():
        size = sl.stop - sl.start
        names += [block] if size == 1 else [f"{block}_{j + 1}" for j in range(size)]
    return names


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class DiagnosticsWriter:
    """Appends one CSV row per TrainRecord and flushes it immediately."""

    BASE = ["k", "ess", "log_z_est", "ce_est", "ce_exact", "p_k", "resampled"]

    def __init__(self, path, model):
        self.with_theta = model.n_params <= THETA_COLUMNS_MAX
        self.fh = open(path, "w", newline="")
        header = self.BASE + (theta_names(model) if self.with_theta else [])
        self.fh.write(",".join(header) + "\n")

    def __call__(self, rec):
        row = [rec.k, rec.ess, rec.log_z_est, rec.ce_est, rec.ce_exact, rec.p_k, rec.resampled]
        if self.with_theta:
            row += list(rec.theta)
        self.fh.write(",".join(_cell(v) for v in row) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_diagnostics(path) -> dict:
    """Columns of a diagnostics file as float arrays (empty cells become NaN)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    cols = {}
    for j, name in enumerate(header):
        cols[name] = np.array([float(r[j]) if r[j] else math.nan for r in rows])
    return cols


def teacher_cross_entropy(model, teacher, data):
    """Exact cross-entropy of the teacher on ``data``; the KL reference."""
    lz = model.log_partition(teacher)
    if lz is None:
        return None
    return lz + float(model.energy(teacher, data).mean())


def _summary(cfg, model, data, result):
    teacher = cfg.teacher_theta()
    last = result.history[-1] if result.history else None
    theta = result.theta
    out = {
        "version": __version__,
        "preset": cfg.preset,
        "algorithm": cfg["train"]["algorithm"],
        "model": cfg["model"]["name"],
        "dim": model.dim,
        "seed": cfg.seed,
        "K": cfg["train"]["K"],
        "iterations_completed": last.k if last else 0,
        "aborted": result.aborted,
        "error": result.error,
        "teacher": [float(v) for v in teacher],
        "theta_K": [float(v) for v in theta],
        "p_K": last.p_k if last else None,
        "ce_est_final": last.ce_est if last else None,
        "ce_exact_final": last.ce_exact if last else None,
        "kl_final": None,
        "a_err": None,
        "b_err": None,
    }
    h_teacher = teacher_cross_entropy(model, teacher, data)
    if h_teacher is not None and last is not None and last.ce_exact is not None:
        out["kl_final"] = last.ce_exact - h_teacher
    if cfg["model"]["name"] == "gmm":
        d = model.dim
        out["a_err"] = float(np.linalg.norm(theta[:d] - teacher[:d]))
        out["b_err"] = float(np.linalg.norm(theta[d : 2 * d] - teacher[d : 2 * d]))
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_train(cfg: ExperimentConfig) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.ini").write_text(cfg.to_ini())
    model = cfg.model()
    data = cfg.data()
    writer = DiagnosticsWriter(out / "diagnostics.csv", model)
    code = EXIT_OK
    try:
        result = train(model, cfg.theta0(), data, cfg.train_config(), on_record=writer)
    except dyn.NumericalBlowup as err:
        result = err.result
        code = EXIT_NUMERICAL
        print(f"numerical abort: {err}", file=sys.stderr)
    finally:
        writer.close()
    if result.population is not None:
        popm.write_walkers(out / "walkers.csv", result.population)
    _write_json(out / "summary.json", _summary(cfg, model, data, result))
    return code


def run_empirical(cfg: ExperimentConfig) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.ini").write_text(cfg.to_ini())
    summary = {"version": __version__, "preset": cfg.preset, "seed": cfg.seed, "regimes": {}}
    code = EXIT_OK
    for regime in cfg["empirical"]["regimes"]:
        ecfg = cfg.empirical_config(regime)
        try:
            res = analysis.empirical_1d_dynamics(ecfg)
        except dyn.NumericalBlowup as err:
            print(f"numerical abort in {regime}: {err}", file=sys.stderr)
            summary["regimes"][regime] = {"aborted": True, "error": str(err)}
            code = EXIT_NUMERICAL
            continue
        with open(out / f"diagnostics_{regime}.csv", "w") as fh:
            fh.write("t,z,q,walker_q\n")
            for row in zip(res.t, res.z, res.q, res.walker_q):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        reduced = analysis.reduced_ode_trajectory(res.reduced_state(regime), ecfg.dt, ecfg.T)
        entry = {
            "aborted": False,
            "q0_hat": res.q0_hat,
            "q_star_hat": res.q_star_hat,
            "z_T": float(res.z[-1]),
            "q_T": float(res.q[-1]),
            "reduced_z_T": float(reduced[-1]),
            "midpoint_crossings": len(res.hops),
            "behaviour": analysis.classify_mass_path(res.q, res.q_star_hat),
        }
        if regime == "jarzynski":
            entry["fixed_point"] = analysis.jarzynski_fixed_point(res.q0_hat, res.z_star_hat)
        summary["regimes"][regime] = entry
    _write_json(out / "summary.json", summary)
    return code


def run_experiment(cfg: ExperimentConfig) -> int:
    """Dispatch on ``[run] kind``; returns an exit code."""
    if cfg.kind == "empirical":
        return run_empirical(cfg)
    return run_train(cfg)


# ---------------------------------------------------------------------------
# comparison


def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot read {path}: {err}") from None


def compare_runs(run_dirs) -> list[dict]:
    """One row per training run; all runs must share the teacher."""
    run_dirs = list(run_dirs)
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    rows, teacher = [], None
    for d in run_dirs:
        s = load_summary(d)
        if "teacher" not in s:
            raise ConfigError(f"{d} is not a training run")
        if teacher is None:
            teacher = s["teacher"]
        elif s["teacher"] != teacher:
            raise ConfigError(f"{d} was trained against a different teacher")
        rows.append(
            {
                "run": str(d),
                "algorithm": s["algorithm"],
                "p_K": s["p_K"],
                "a_err": s["a_err"],
                "b_err": s["b_err"],
                "kl_final": s["kl_final"],
            }
        )
    return rows


def format_table(rows) -> str:
    cols = ["run", "algorithm", "p_K", "a_err", "b_err", "kl_final"]

    def fmt(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    cells = [cols] + [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(cols))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells)


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="jebm", description="Jarzynski-weighted EBM training runs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", type=Path, help="INI config file")
    run.add_argument("--preset", choices=PRESETS, help="start from a shipped preset")
    run.add_argument("--seed", type=int)
    run.add_argument("--out-dir", type=Path)
    run.add_argument("--algorithm", choices=ALGORITHMS)
    run.add_argument("--resampler", choices=SCHEMES)

    cmp_ = sub.add_parser("compare", help="tabulate finished runs")
    cmp_.add_argument("runs", nargs="*", type=Path)
    cmp_.add_argument("--json", action="store_true", help="print rows as JSON")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config is None and args.preset is None:
        raise ConfigError("give --config, --preset or both")
    cfg = ExperimentConfig.from_preset(args.preset) if args.preset else None
    if args.config is not None:
        cfg = ExperimentConfig.from_file(args.config, base=cfg)
    overrides = [
        ("run", "seed", args.seed),
        ("output", "dir", None if args.out_dir is None else str(args.out_dir)),
        ("train", "algorithm", args.algorithm),
        ("train", "resampler", args.resampler),
    ]
    for section, key, value in overrides:
        if value is not None:
            cfg.values[section][key] = value
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            rows = compare_runs(args.runs)
            print(json.dumps(rows, indent=2) if args.json else format_table(rows))
            return EXIT_OK
        return run_experiment(resolve_config(args))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
