"""Config-driven experiment runner: ``prwlab <subcommand> --config file.json``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .asymp import (
    compare,
    ell_conv_power,
    ell_grid,
    key_renewal_prediction,
    ladder_f_grid,
    predict_elementary,
    predict_exp_correction,
    predict_second_order,
    predict_third_order,
    Prediction,
    schedule,
)
from .branching import SimConfig, clt_statistic, simulate_ensemble
from .dist import FAMILIES, JointStepModel, moments
from .errors import ConfigError, PrwlabError
from .gamma import gamma_rate
from .gridfn import GridFunction, convolution_power, convolve_dri
from .renewal import build_tables

log = logging.getLogger("prwlab")

SUBCOMMANDS = ("tables", "simulate", "gamma", "verify", "clt")
THEOREMS = ("elementary", "exp_correction", "second_order", "third_order", "ell_power", "key_renewal", "blackwell")
P_MAX = 2 / 3
P_ELEM = 1 / 2  # window of the uncorrected predictor


@dataclass(frozen=True)
class GridSpec:
    h: float = 1e-2
    T: float = 200.0


@dataclass(frozen=True)
class GenerationSpec:
    jmax: int = 4
    p: float = 0.55


@dataclass(frozen=True)
class SimulateSpec:
    t: float = 10.0
    replicas: int = 100_000
    master_seed: int = 0
    max_nodes: int = 10**8
    track_height: bool = True


@dataclass(frozen=True)
class VerifySpec:
    theorems: tuple = ("elementary", "exp_correction", "second_order", "key_renewal", "blackwell")
    t_checkpoints: tuple = (100.0, 150.0, 200.0)


@dataclass(frozen=True)
class ExperimentConfig:
    model: JointStepModel
    grid: GridSpec = field(default_factory=GridSpec)
    generations: GenerationSpec = field(default_factory=GenerationSpec)
    simulate: SimulateSpec = field(default_factory=SimulateSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        d = {"model": self.model.to_config()}
        for name in ("grid", "generations", "simulate", "verify"):
            sec = asdict(getattr(self, name))
            d[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        d["j_schedule"] = f"floor(t^{self.generations.p!r})"
        d["output_dir"] = self.output_dir
        return d


def serialize(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("j_schedule")
    return json.dumps(d, indent=2, sort_keys=True)


# ---- parsing and validation


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key.split(".")[-1]}"'
    for n, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return n
    return None


def _section(raw: dict, name: str, spec_cls, text: str):
    block = raw.get(name, {})
    if not isinstance(block, dict):
        raise ConfigError(f"{name} must be an object", key=name, line=_line_of(text, name))
    known = spec_cls.__dataclass_fields__
    for k in block:
        if k not in known:
            raise ConfigError(f"unknown key {name}.{k}", key=f"{name}.{k}", line=_line_of(text, k))
    return block


def _num(block, name, key, default, text, kind=float, positive=True, allow_zero=False):
    v = block.get(key, default)
    full = f"{name}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{full} must be a number, got {v!r}", key=full, line=_line_of(text, key))
    if kind is int and float(v) != int(v):
        raise ConfigError(f"{full} must be an integer, got {v!r}", key=full, line=_line_of(text, key))
    if not math.isfinite(v) or (positive and not (v > 0 or (allow_zero and v == 0))):
        raise ConfigError(f"{full} must be positive, got {v!r}", key=full, line=_line_of(text, key))
    return kind(v)


def _check_alignment(model: JointStepModel, h: float, text: str) -> None:
    """Point masses must sit on grid nodes."""
    for coord in ("xi", "eta"):
        marg = getattr(model, coord)
        if type(marg).__name__ == "_Det":
            r = marg.c / h
            if abs(r - round(r)) > 1e-9 * max(1.0, r):
                raise ConfigError(
                    f"grid.h = {h} is not aligned with the lattice of {coord} (span {marg.c}); "
                    f"{marg.c}/{h} must be an integer",
                    key="grid.h",
                    line=_line_of(text, "h"),
                )


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", line=1)
    allowed = {"model", "grid", "generations", "simulate", "verify", "output_dir"}
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"unknown key {k}", key=k, line=_line_of(text, k))

    mb = raw.get("model")
    if isinstance(mb, str):
        mb = {"family": mb}
    if not isinstance(mb, dict) or "family" not in mb:
        raise ConfigError("model.family is required", key="model.family", line=_line_of(text, "model"))
    for k in mb:
        if k not in ("family", "params", "coupling"):
            raise ConfigError(f"unknown key model.{k}", key=f"model.{k}", line=_line_of(text, k))
    if mb["family"] not in FAMILIES:
        raise ConfigError(f"unknown family {mb['family']!r}", key="model.family", line=_line_of(text, "family"))
    try:
        model = JointStepModel.from_config(mb)
    except PrwlabError as e:
        raise ConfigError(str(e), key="model.params", line=_line_of(text, "params")) from None

    g = _section(raw, "grid", GridSpec, text)
    grid = GridSpec(_num(g, "grid", "h", 1e-2, text), _num(g, "grid", "T", 200.0, text))
    if grid.T < grid.h:
        raise ConfigError("grid.T must be at least grid.h", key="grid.T", line=_line_of(text, "T"))
    _check_alignment(model, grid.h, text)

    gb = _section(raw, "generations", GenerationSpec, text)
    gen = GenerationSpec(_num(gb, "generations", "jmax", 4, text, kind=int), _num(gb, "generations", "p", 0.55, text))
    if gen.p > P_MAX:
        raise ConfigError(f"generations.p = {gen.p} lies outside (0, 2/3]", key="generations.p",
                          line=_line_of(text, "p"))

    sb = _section(raw, "simulate", SimulateSpec, text)
    th = sb.get("track_height", True)
    if not isinstance(th, bool):
        raise ConfigError("simulate.track_height must be true or false", key="simulate.track_height",
                          line=_line_of(text, "track_height"))
    seed = sb.get("master_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("simulate.master_seed must be an integer in [0, 2^64)", key="simulate.master_seed",
                          line=_line_of(text, "master_seed"))
    sim = SimulateSpec(
        _num(sb, "simulate", "t", 10.0, text),
        _num(sb, "simulate", "replicas", 100_000, text, kind=int),
        seed,
        _num(sb, "simulate", "max_nodes", 10**8, text, kind=int),
        th,
    )

    vb = _section(raw, "verify", VerifySpec, text)
    thms = vb.get("theorems", list(VerifySpec.theorems))
    if not isinstance(thms, list) or any(x not in THEOREMS for x in thms):
        raise ConfigError(f"verify.theorems must be a list drawn from {THEOREMS}", key="verify.theorems",
                          line=_line_of(text, "theorems"))
    cps = vb.get("t_checkpoints", list(VerifySpec.t_checkpoints))
    if not isinstance(cps, list) or not cps:
        raise ConfigError("verify.t_checkpoints must be a nonempty list", key="verify.t_checkpoints",
                          line=_line_of(text, "t_checkpoints"))
    cps = [_num({"t": c}, "verify", "t", None, text) for c in cps]
    ver = VerifySpec(tuple(thms), tuple(float(c) for c in cps))
    if gen.p >= P_ELEM and "elementary" in ver.theorems:
        warnings.warn(f"generations.p = {gen.p} >= 1/2: the elementary predictor is used outside its window",
                      UserWarning, stacklevel=2)

    out = raw.get("output_dir", "out")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir must be a nonempty string", key="output_dir", line=_line_of(text, "output_dir"))
    return ExperimentConfig(model, grid, gen, sim, ver, out)


# ---- artifact writers


def _f(x) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(c if isinstance(c, str) else (str(c) if isinstance(c, (int, np.integer)) else _f(c))
                              for c in row) + "\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, float):
        return float(_f(x))
    if isinstance(x, (tuple, list)):
        return [_jsonable(v) for v in x]
    return x


class Runner:
    def __init__(self, cfg: ExperimentConfig, out: Path, dump: list[str] | None = None):
        self.cfg = cfg
        self.out = out
        self.dump = dump or []
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.written.append(p)
        return p

    # -- tables
    def _tables(self, T=None, jmax=None):
        c = self.cfg
        return build_tables(c.model, c.grid.h, T or c.grid.T, jmax or c.generations.jmax)

    def _dump(self, tables, extra: dict | None = None) -> None:
        named = {"U": tables.U, "V": tables.V}
        for j, v in enumerate(tables.Vj, 1):
            named[f"V_{j}"] = v
        V = tables.V
        named["eps"] = GridFunction(V.h, V.values - V.t / tables.m, name="eps")
        named.update(extra or {})
        for name in self.dump:
            if name not in named:
                raise ConfigError(f"--dump {name}: unknown grid function, choose from {sorted(named)}", key="dump")
            named[name].to_csv(self.path(f"{name}.csv"))

    def tables(self):
        tb = self._tables()
        cols = [tb.U.values, tb.V.values] + [v.values for v in tb.Vj[1:]]
        header = ["t", "U", "V"] + [f"V_{j}" for j in range(2, len(tb.Vj) + 1)]
        n = min(len(c) for c in cols)
        _write_csv(self.path("tables.csv"), header, zip(tb.U.t[:n], *[c[:n] for c in cols]))
        _write_json(self.path("scalars.json"), {k: _jsonable(getattr(tb, k)) for k in ("m", "gamma0", "c0", "cL", "tail_mass")})
        self._dump(tb)

    # -- simulation
    def _ensemble(self, track_height: bool):
        c, s = self.cfg, self.cfg.simulate
        return simulate_ensemble(SimConfig(c.model, s.t, c.generations.jmax, s.replicas, s.master_seed,
                                           s.max_nodes, track_height))

    def simulate(self):
        res = self._ensemble(self.cfg.simulate.track_height)
        R, J = res.counts.shape
        rows = ((r, j + 1, int(res.counts[r, j])) for r in range(R) for j in range(J))
        _write_csv(self.path("sim.csv"), ["replica", "j", "N_j"], rows)
        if res.heights is not None:
            _write_csv(self.path("heights.csv"), ["replica", "H"], ((r, int(res.heights[r])) for r in range(R)))
        self.summary = {"truncated_replicas": int(res.truncated_flags.sum())}

    def gamma(self):
        g = gamma_rate(self.cfg.model)
        obj = {"gamma": _jsonable(g.gamma), "mu_at_gamma": _jsonable(g.mu_at_gamma),
               "inner_minimizer_s": _jsonable(g.inner_minimizer_s), "bracket": _jsonable(list(g.bracket)),
               "iterations": g.iterations}
        _write_json(self.path("gamma.json"), obj)
        print(json.dumps(obj, sort_keys=True))

    def clt(self):
        c = self.cfg
        rep = moments(c.model)
        if not rep.s2:
            raise ConfigError("clt needs a step law with positive finite variance", key="model")
        j, t = c.generations.jmax, c.simulate.t
        tb = self._tables(T=max(t, c.grid.h), jmax=j)
        res = self._ensemble(False)
        z = clt_statistic(res, tb, j, t, rep.s2, rep.m)
        _write_csv(self.path("clt.csv"), ["clt"], ((v,) for v in z))
        lead = math.exp(j * math.log(t / rep.m) - math.lgamma(j + 1))
        scale = math.exp(0.5 * math.log(j) + math.lgamma(j)
                         - 0.5 * (math.log(rep.s2) - (2 * j + 1) * math.log(rep.m) + (2 * j - 1) * math.log(t)))
        _write_json(self.path("clt_summary.json"), {
            "j": j, "t": _jsonable(t), "replicas": int(z.size),
            "mean": _jsonable(float(z.mean())), "variance": _jsonable(float(z.var(ddof=1))),
            "V_j": _jsonable(tb.V_at(j, t)), "leading_term": _jsonable(lead),
            "shift_if_centered_by_leading_term": _jsonable((tb.V_at(j, t) - lead) * scale),
        })

    # -- verification sweep
    def verify(self):
        c = self.cfg
        thms = c.verify.theorems
        if not thms:
            return
        cps = c.verify.t_checkpoints
        need_T = max(cps) + 1.0
        if need_T > c.grid.T + 1e-9:
            raise ConfigError(f"grid.T = {c.grid.T} must reach the last checkpoint plus one ({need_T})",
                              key="verify.t_checkpoints")
        js = {t: schedule(t, c.generations.p) for t in cps}
        tb = self._tables(jmax=max(js.values()))
        m, g0 = tb.m, tb.gamma0
        rows = []
        tri = GridFunction.sample(lambda x: np.clip(1 - np.abs(2 * x - 1), 0, None), c.grid.h, 1.0, name="f")
        tri_int = 0.5
        for t in cps:
            j = js[t]
            vj = tb.V_at(j, t)
            vprev = tb.V_at(j - 1, t)
            for th in thms:
                if th in ("exp_correction", "second_order") and g0 is None:
                    continue
                if th == "elementary":
                    val, pred = vj, predict_elementary(j, t, m)
                elif th == "exp_correction":
                    val, pred = vj, predict_exp_correction(j, t, m, g0)
                elif th == "second_order":
                    val, pred = vj, predict_second_order(j, t, m, g0)
                elif th == "blackwell":
                    val = tb.V_at(j, t + 1.0) - vj
                    pred = key_renewal_prediction(1.0, m, vprev, j, t, label="blackwell")
                elif th == "key_renewal":
                    val = convolve_dri(tri, tb.Vj[j - 1], t)
                    pred = key_renewal_prediction(tri_int, m, vprev, j, t)
                elif th == "ell_power":
                    L = ell_grid(1.0 / m, g0 or 0.0, c.grid.h, t, j)
                    val = convolution_power(L, j).at(t)
                    lv = ell_conv_power(1.0 / m, g0 or 0.0, j, t)
                    pred = Prediction(math.log(lv) if lv > 0 else -math.inf, "ell_power", {"j": j, "t": t})
                else:  # third_order, for the ladder walk with steps distributed as xi
                    rep = tb.report
                    if rep.ex2 is None:
                        continue
                    f = ladder_f_grid(c.model, 1.0, c.grid.h, t)
                    val = convolution_power(f, j).at(t) * math.exp(math.lgamma(j + 1))
                    pred = predict_third_order(j, t, 1.0, -rep.m, rep.ex2)
                if not val > 0:
                    continue
                r = compare(val, pred)
                rows.append((th, t, j, math.log(val), pred.log_value, r.ratio))
        _write_csv(self.path("ratios.csv"), ["theorem", "t", "j", "table_value_log", "prediction_log", "ratio"], rows)

    def manifest(self, sub: str, wall: float):
        files = sorted(p.name for p in self.written)
        extra = getattr(self, "summary", {})
        _write_json(self.path("manifest.json"), {
            "subcommand": sub,
            "config": self.cfg.to_dict(),
            "seed": self.cfg.simulate.master_seed,
            "version": __version__,
            "wall_time_s": round(wall, 3),
            "files": files,
            **extra,
        })


def run(cfg: ExperimentConfig, subcommand: str, out: str | os.PathLike | None = None,
        dump: list[str] | None = None) -> list[Path]:
    """Run one subcommand and return the written artifacts; partial output is removed on failure."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}", key="subcommand")
    outdir = Path(out if out is not None else cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    runner = Runner(cfg, outdir, dump)
    t0 = time.perf_counter()
    try:
        getattr(runner, subcommand)()
        runner.manifest(subcommand, time.perf_counter() - t0)
    except BaseException:
        for p in runner.written:
            p.unlink(missing_ok=True)
        raise
    return runner.written


def _error_json(e: BaseException) -> str:
    d = {"error": type(e).__name__, "message": str(e)}
    for k in ("key", "line"):
        v = getattr(e, k, None)
        if v is not None:
            d[k] = v
    return json.dumps(d, sort_keys=True)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="prwlab", description=__doc__)
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment file")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides simulate.master_seed)")
    ap.add_argument("--dump", action="append", default=[], help="also write a grid function as t,value CSV")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(Path(args.config).read_text())
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must lie in [0, 2^64)", key="seed")
            cfg = ExperimentConfig(cfg.model, cfg.grid, cfg.generations,
                                   SimulateSpec(cfg.simulate.t, cfg.simulate.replicas, args.seed,
                                                cfg.simulate.max_nodes, cfg.simulate.track_height),
                                   cfg.verify, cfg.output_dir)
        run(cfg, args.subcommand, args.out, args.dump)
    except (PrwlabError, OSError) as e:
        print(_error_json(e), file=sys.stderr)
        return 2 if isinstance(e, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
