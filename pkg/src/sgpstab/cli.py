"""Config-driven experiment runner: topology, train, stability, bounds, sweep."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import multiprocessing as mp
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bounds as bd
from .data_io import (Dataset, LibsvmError, carve_test, infer_dim, load_a9a, read_libsvm, shard,
                      synth_logistic, synth_pl)
from .engine import Constant, Diminishing, TrainConfig, derive_seed, init_state, initial_spread, run_training
from .errors import ConfigError, ContractViolation
from .mixing import PROFILE_HEADER, spectral_profile
from .objectives import LogisticL2, smoothness_info
from .stability import (aggregate_csv, choose_position, coupled_run, make_neighbor, mean_stderr,
                        replicate_csv)
from .topology import TopologyKind, build_topology

log = logging.getLogger("sgpstab")


# configuration -------------------------------------------------------------

def _list(cast):
    def parse(text):
        items = [s.strip() for s in text.split(",") if s.strip()]
        return [cast(s) for s in items]
    return parse


def _opt_float(text):
    return None if text.lower() in ("", "none", "auto") else float(text)


def _choice(*options):
    def parse(text):
        low = {o.lower(): o for o in options}
        if text.lower() not in low:
            raise ValueError(f"expected one of {', '.join(options)}")
        return low[text.lower()]
    return parse


def _kind(text):
    return TopologyKind.parse(text).value


# (parser, default) per key; every key has a default.
SCHEMA = {
    "topology.kinds": (_list(_kind), "DiExp"),
    "topology.m": (_list(int), "32"),
    "topology.horizon": (int, "200"),
    "model.kind": (_choice("logistic", "pl"), "logistic"),
    "model.mu": (float, "1e-4"),
    "model.data": (_choice("a9a", "libsvm", "synth"), "a9a"),
    "model.train_path": (str, ""),
    "model.test_path": (str, ""),
    "model.test_frac": (float, "0.2"),
    "model.n": (int, "1000"),
    "model.synth_d": (int, "20"),
    "model.synth_count": (int, "40000"),
    "model.synth_margin": (float, "4.0"),
    "model.pl_alpha": (float, "1.0"),
    "model.pl_L": (float, "4.0"),
    "model.radius": (float, "10.0"),
    "schedule.kind": (_choice("constant", "diminishing"), "constant"),
    "schedule.gamma": (float, "1e-3"),
    "schedule.v": (float, "0.1"),
    "run.seed": (int, "0"),
    "run.T": (int, "2000"),
    "run.algorithm": (_choice("SGP", "DSGD"), "SGP"),
    "run.sampling": (_choice("PerNode", "SharedIndex"), "PerNode"),
    "run.init_scale": (float, "0.0"),
    "run.eval_every": (int, "1"),
    "run.projection_radius": (_opt_float, "none"),
    "stability.seeds": (int, "20"),
    "stability.output": (_choice("last", "avg"), "last"),
    "stability.gap_every": (int, "0"),
    "bounds.T": (_list(int), "1,10,100,1000,10000"),
    "bounds.G": (_opt_float, "auto"),
    "bounds.L": (_opt_float, "auto"),
    "bounds.alpha": (_opt_float, "auto"),
    "bounds.C": (_opt_float, "auto"),
    "bounds.C_w0": (_opt_float, "auto"),
    "bounds.init_dist": (_opt_float, "auto"),
    "sweep.vary": (_choice("gamma", "m", "topology", "v"), "gamma"),
    "sweep.values": (_list(str), "1e-5,1e-4,1e-3,1e-2"),
    "sweep.budget": (_choice("fixed_n", "fixed_total"), "fixed_n"),
    "sweep.total": (int, "32000"),
    "output.dir": (str, "out"),
    "output.stride": (int, "1"),
}
PATH_KEYS = ("model.train_path", "model.test_path", "output.dir")


@dataclass
class Config:
    values: dict
    explicit: set = field(default_factory=set)

    def __getitem__(self, key):
        return self.values[key]


def parse_config(text: str = "", base_dir: "Path | None" = None) -> Config:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or "." not in key:
            raise ConfigError(f"config line {lineno}: expected 'section.key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        raw[key] = value
    values = {}
    for key, (cast, default) in SCHEMA.items():
        text_value = raw.get(key, default)
        try:
            values[key] = cast(text_value)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{key}: cannot parse {text_value!r}: {exc}") from None
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for key in PATH_KEYS:
        if values[key] and not Path(values[key]).is_absolute():
            values[key] = str(base / values[key])
    cfg = Config(values, set(raw))
    _validate(cfg)
    return cfg


def _validate(cfg: Config):
    if not cfg["topology.kinds"] or not cfg["topology.m"]:
        raise ConfigError("topology.kinds and topology.m must be nonempty")
    if any(m < 1 for m in cfg["topology.m"]):
        raise ConfigError("topology.m entries must be positive")
    if cfg["run.T"] < 0 or cfg["model.n"] < 1 or cfg["stability.seeds"] < 1 or cfg["output.stride"] < 1:
        raise ConfigError("run.T >= 0, model.n >= 1, stability.seeds >= 1, output.stride >= 1 required")
    if not cfg["bounds.T"] or any(T < 1 for T in cfg["bounds.T"]):
        raise ConfigError("bounds.T must be a nonempty list of positive integers")
    try:
        schedule_from(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: "str | None") -> Config:
    if path is None:
        return parse_config("")
    p = Path(path)
    text = p.read_text()
    return parse_config(text, p.resolve().parent)


def schedule_from(cfg: Config, gamma=None, v=None):
    if cfg["schedule.kind"] == "constant":
        return Constant(cfg["schedule.gamma"] if gamma is None else gamma)
    return Diminishing(cfg["schedule.v"] if v is None else v)


# experiment context --------------------------------------------------------

class Context:
    """Data, model and shard cache shared by all cells of one command."""

    def __init__(self, cfg: Config, seed: int):
        self.cfg = cfg
        self.seed = seed
        self._source = None
        self._shards = {}
        self.model = None

    def source(self) -> tuple[Dataset, Dataset | None]:
        if self._source is None:
            self._source = self._load()
        return self._source

    def _load(self):
        cfg = self.cfg
        data_seed = derive_seed(self.seed, 0xDA7A)
        if cfg["model.kind"] == "pl":
            d = cfg["model.synth_d"]
            self.model = synth_pl(d, cfg["model.pl_alpha"], cfg["model.pl_L"], data_seed)
            train = Dataset.from_samples(synth_logistic(d, cfg["model.synth_count"], math.inf, data_seed), d)
            return carve_test(train, cfg["model.test_frac"], data_seed)
        if cfg["model.data"] == "a9a":
            train, test = load_a9a(cfg["model.train_path"] or None, cfg["model.test_path"] or None)
        elif cfg["model.data"] == "libsvm":
            if not cfg["model.train_path"]:
                raise ConfigError("model.data = libsvm needs model.train_path")
            samples = read_libsvm(cfg["model.train_path"])
            tests = read_libsvm(cfg["model.test_path"]) if cfg["model.test_path"] else []
            d = max(infer_dim(samples), infer_dim(tests))
            train = Dataset.from_samples(samples, d)
            test = Dataset.from_samples(tests, d) if tests else None
            if test is None:
                train, test = carve_test(train, cfg["model.test_frac"], data_seed)
        else:
            d = cfg["model.synth_d"]
            train = Dataset.from_samples(
                synth_logistic(d, cfg["model.synth_count"], cfg["model.synth_margin"], data_seed), d)
            train, test = carve_test(train, cfg["model.test_frac"], data_seed)
        self.model = LogisticL2(train.d, cfg["model.mu"])
        return train, test

    def shards(self, m: int, n: int):
        key = (m, n)
        if key not in self._shards:
            train, test = self.source()
            try:
                self._shards[key] = shard(train, m, n, derive_seed(self.seed, 0x5A4D), test)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self._shards[key]

    def prepare(self, cells):
        """Materialize everything the cells need so forked workers inherit it."""
        for cell in cells:
            data = self.shards(cell.m, cell.n)
            data.dense_tensor()

    def train_config(self, schedule, seed, sampling=None) -> TrainConfig:
        c = self.cfg
        return TrainConfig(T=c["run.T"], schedule=schedule, seed=seed, algorithm=c["run.algorithm"],
                           sampling_mode=sampling or c["run.sampling"], init_scale=c["run.init_scale"],
                           projection_radius=c["run.projection_radius"], eval_every=c["run.eval_every"])


def _graph(kind, m):
    try:
        return build_topology(kind, m)
    except ValueError as exc:
        raise ConfigError(f"{kind} with m={m}: {exc}") from None


# parallel execution --------------------------------------------------------

_CTX: Context | None = None


def _run_cells(ctx: Context, fn, cells, workers: int):
    """Map fn over cells; results come back in cell order regardless of workers."""
    global _CTX
    _CTX = ctx
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    ctx.prepare([c for c in cells if hasattr(c, "n")])
    with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork")) as pool:
        return list(pool.map(fn, cells, chunksize=1))


@dataclass(frozen=True)
class StabCell:
    kind: str
    m: int
    n: int
    schedule: object
    rep: int


def _stab_cell(cell: StabCell):
    ctx = _CTX
    data = ctx.shards(cell.m, cell.n)
    rep_seed = derive_seed(ctx.seed, 0x5747, cell.rep)
    node, local = choose_position(rep_seed, cell.m, cell.n)
    pair = make_neighbor(data, node, local, data.pool, rep_seed)
    config = ctx.train_config(cell.schedule, rep_seed, sampling="SharedIndex")
    tr = coupled_run(config, _graph(cell.kind, cell.m), ctx.model, pair,
                     output=ctx.cfg["stability.output"], gap_every=ctx.cfg["stability.gap_every"])
    tr.seed = cell.rep
    return tr


@dataclass(frozen=True)
class TrainCell:
    kind: str
    m: int
    n: int


def _train_cell(cell: TrainCell):
    ctx = _CTX
    data = ctx.shards(cell.m, cell.n)
    config = ctx.train_config(schedule_from(ctx.cfg), derive_seed(ctx.seed, 0x7A11))
    rec = run_training(config, _graph(cell.kind, cell.m), ctx.model, data)
    rec.extras.pop("final_state", None)
    return rec


# output --------------------------------------------------------------------

def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def _num(x) -> str:
    return repr(float(x))


def plot_data(x, y, se) -> str:
    lines = ["# x y stderr"]
    lines += [f"{_num(a)} {_num(b)} {_num(c)}" for a, b, c in zip(x, y, se)]
    return "\n".join(lines) + "\n"


def _tag(value) -> str:
    if isinstance(value, float):
        return format(value, "g")
    return str(value)


def _rows(T: int, stride: int):
    rows = list(range(0, T + 1, stride))
    if rows[-1] != T:
        rows.append(T)
    return rows


# commands ------------------------------------------------------------------

def cmd_topology(cfg: Config, seed: int, out: Path, workers: int) -> list[Path]:
    rows = []
    for kind in cfg["topology.kinds"]:
        for m in cfg["topology.m"]:
            prof = spectral_profile(_graph(kind, m), cfg["topology.horizon"])
            rows.append(prof.csv_row(kind, m))
    path = out / "topology.csv"
    write_atomic(path, _csv(PROFILE_HEADER, rows))
    return [path]


def cmd_train(cfg: Config, seed: int, out: Path, workers: int) -> list[Path]:
    ctx = Context(cfg, seed)
    ctx.source()
    cells = [TrainCell(k, m, cfg["model.n"]) for k in cfg["topology.kinds"] for m in cfg["topology.m"]]
    records = _run_cells(ctx, _train_cell, cells, workers)
    written, summary = [], []
    for cell, rec in zip(cells, records):
        path = out / f"train_{cell.kind}_m{cell.m}.csv"
        write_atomic(path, rec.to_csv())
        written.append(path)
        last = len(rec) - 1
        summary.append([cell.kind, cell.m, len(rec)] + [
            _num(col[last]) if last >= 0 else "nan"
            for col in (rec.train_loss, rec.test_loss, rec.cons_max, rec.u_sum)])
    path = out / "train_summary.csv"
    write_atomic(path, _csv(["kind", "m", "T", "train_loss_last", "test_loss_last", "cons_max_last",
                             "u_sum_last"], summary))
    return written + [path]


def _stability_series(ctx: Context, series: list[tuple], workers: int) -> list[list]:
    """series: (label, kind, m, n, schedule). Returns traces grouped per series."""
    k = ctx.cfg["stability.seeds"]
    cells = [StabCell(kind, m, n, sch, r) for (_, kind, m, n, sch) in series for r in range(k)]
    for _, kind, m, n, _ in series:
        if len(ctx.shards(m, n).pool) == 0:
            raise ConfigError(f"m={m}, n={n} uses every training sample; no held-out pool for replacements")
    traces = _run_cells(ctx, _stab_cell, cells, workers)
    return [traces[i * k:(i + 1) * k] for i in range(len(series))]


def cmd_stability(cfg: Config, seed: int, out: Path, workers: int) -> list[Path]:
    ctx = Context(cfg, seed)
    sched = schedule_from(cfg)
    series = [(f"{k}_m{m}", k, m, cfg["model.n"], sched) for k in cfg["topology.kinds"] for m in cfg["topology.m"]]
    groups = _stability_series(ctx, series, workers)
    stride = cfg["output.stride"]
    written = []
    for (label, *_), traces in zip(series, groups):
        rep = out / f"stability_{label}_replicates.csv"
        agg = out / f"stability_{label}_aggregate.csv"
        dat = out / f"stability_{label}.dat"
        write_atomic(rep, replicate_csv(traces, stride))
        write_atomic(agg, aggregate_csv(traces, stride))
        mean, se = mean_stderr([t.delta for t in traces])
        rows = _rows(len(mean) - 1, stride)
        write_atomic(dat, plot_data(rows, mean[rows], se[rows]))
        written += [rep, agg, dat]
    return written


def cmd_sweep(cfg: Config, seed: int, out: Path, workers: int) -> list[Path]:
    vary, values = cfg["sweep.vary"], cfg["sweep.values"]
    if not values:
        raise ConfigError("sweep.values is empty")
    kinds, ms, n = cfg["topology.kinds"], cfg["topology.m"], cfg["model.n"]
    if vary != "topology" and len(kinds) != 1:
        raise ConfigError("sweeping over a non-topology axis needs exactly one topology.kinds entry")
    if vary != "m" and len(ms) != 1:
        raise ConfigError("sweeping over a non-m axis needs exactly one topology.m entry")
    if vary == "m" and "topology.m" in cfg.explicit:
        raise ConfigError("sweep.vary = m conflicts with an explicit topology.m")
    if vary == "v" and cfg["schedule.kind"] != "diminishing":
        raise ConfigError("sweep.vary = v needs schedule.kind = diminishing")
    if vary == "gamma" and cfg["schedule.kind"] != "constant":
        raise ConfigError("sweep.vary = gamma needs schedule.kind = constant")
    series = []
    try:
        for raw in values:
            kind, m, sched = kinds[0], ms[0], schedule_from(cfg)
            if vary == "gamma":
                x = float(raw)
                sched = schedule_from(cfg, gamma=x)
            elif vary == "v":
                x = float(raw)
                sched = schedule_from(cfg, v=x)
            elif vary == "m":
                x = m = int(raw)
            else:
                x = kind = _kind(raw)
            nn = cfg["sweep.total"] // m if vary == "m" and cfg["sweep.budget"] == "fixed_total" else n
            _graph(kind, m)
            series.append((x, kind, m, nn, sched))
    except ValueError as exc:
        raise ConfigError(f"sweep.values: {exc}") from None
    ctx = Context(cfg, seed)
    groups = _stability_series(ctx, [(f"{vary}_{_tag(s[0])}",) + s[1:] for s in series], workers)
    stride = cfg["output.stride"]
    written, finals = [], []
    for (x, *_), traces in zip(series, groups):
        mean, se = mean_stderr([t.delta for t in traces])
        rows = _rows(len(mean) - 1, stride)
        path = out / f"sweep_{vary}_{_tag(x)}.dat"
        write_atomic(path, plot_data(rows, mean[rows], se[rows]))
        written.append(path)
        gm, gs = mean_stderr([t.gen_gap[-1] for t in traces])
        finals.append((x, mean[-1], se[-1], gm, gs))
    summary = out / f"sweep_{vary}_final.csv"
    write_atomic(summary, _csv([vary, "delta_T_mean", "delta_T_stderr", "gen_gap_mean", "gen_gap_stderr"],
                               [[_tag(x)] + [_num(v) for v in rest] for x, *rest in finals]))
    if vary != "topology":
        dat = out / f"sweep_{vary}_final.dat"
        write_atomic(dat, plot_data([f[0] for f in finals], [f[1] for f in finals], [f[2] for f in finals]))
        written.append(dat)
    return written + [summary]


BOUND_COLUMNS = ["stab_convex", "stab_convex_closed", "opt_convex", "opt_convex_closed", "excess_convex",
                 "stab_nonconvex", "stab_nonconvex_display", "stab_nonconvex_closed",
                 "opt_pl", "opt_pl_closed", "excess_pl"]


def bound_params(ctx: Context, kind: str, m: int) -> bd.BoundParams:
    cfg = ctx.cfg
    n = cfg["model.n"]
    data = ctx.shards(m, n)
    r = cfg["model.radius"]
    info = smoothness_info(ctx.model, data.train().X, r)
    prof = spectral_profile(_graph(kind, m), cfg["topology.horizon"])
    C_w0 = cfg["bounds.C_w0"]
    if C_w0 is None:
        C_w0 = initial_spread(init_state(m, data.d, derive_seed(ctx.seed, 0x7A11), cfg["run.init_scale"]))
    pick = lambda key, auto: auto if cfg[key] is None else cfg[key]
    alpha = pick("bounds.alpha", info.alpha or None)
    return bd.BoundParams(G=pick("bounds.G", info.G), L=pick("bounds.L", info.L), C=pick("bounds.C", prof.c_h),
                          C_w0=C_w0, r=r, delta=min(prof.delta, 1.0 / m), lam=prof.lam, m=m, n=n,
                          schedule=schedule_from(cfg), alpha=alpha, init_dist=cfg["bounds.init_dist"])


def _safe(fn, *args):
    try:
        return fn(*args)
    except (ValueError, OverflowError):
        return math.nan


def cmd_bounds(cfg: Config, seed: int, out: Path, workers: int) -> list[Path]:
    ctx = Context(cfg, seed)
    ctx.source()
    rows, stops, header = [], [], None
    for kind in cfg["topology.kinds"]:
        for m in cfg["topology.m"]:
            p = bound_params(ctx, kind, m)
            prow = p.as_row()
            if header is None:
                header = ["kind"] + list(prow)
            pvals = [kind] + ["" if v is None else (v if isinstance(v, (str, int)) else _num(v))
                              for v in prow.values()]
            for T in cfg["bounds.T"]:
                vals = []
                for name in BOUND_COLUMNS:
                    pl = name.endswith("pl")
                    vals.append(math.nan if pl and p.alpha is None else _safe(bd.BOUND_FUNCTIONS[name], p, T))
                rows.append(pvals + [T] + [_num(v) for v in vals])
            sc = _safe(bd.optimal_stop_convex, p)
            sp = _safe(bd.optimal_stop_pl, p) if p.alpha is not None else math.nan
            sc = sc if isinstance(sc, tuple) else (math.nan, math.nan)
            sp = sp if isinstance(sp, tuple) else (math.nan, math.nan)
            stops.append(pvals + [_num(v) for v in sc + sp])
    path = out / "bounds.csv"
    write_atomic(path, _csv(header + ["T"] + BOUND_COLUMNS, rows))
    stop_path = out / "optimal_stop.csv"
    write_atomic(stop_path, _csv(header + ["T_star_convex", "value_convex", "T_star_pl", "value_pl"], stops))
    return [path, stop_path]


COMMANDS = {"topology": cmd_topology, "train": cmd_train, "stability": cmd_stability,
            "bounds": cmd_bounds, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgpstab", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat 'section.key = value' file")
    ap.add_argument("--seed", type=int, help="top-level seed (overrides run.seed)")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        seed = cfg["run.seed"] if args.seed is None else args.seed
        out = Path(args.out) if args.out else Path(cfg["output.dir"])
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        for path in COMMANDS[args.command](cfg, seed, out, args.workers):
            log.info("wrote %s", path)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 2
    except (OSError, LibsvmError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
