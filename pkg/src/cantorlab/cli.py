"""Command-line experiments: configuration, pipelines and reproducible reports.

Each subcommand writes its CSV/JSON outputs plus ``manifest.json`` (config
text and hash, seed, versions, output digests, assertion results) into the
output directory.  Exit codes: 0 all assertions pass, 1 an assertion failed,
2 usage or configuration error, 3 resource or convergence error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (AccuracyError, CantorLabError, CapacityError, ConvergenceError, CoverageError,
                     ParameterError)
from .geometry import MAX_DEPTH

EXIT_OK, EXIT_ASSERT, EXIT_USAGE, EXIT_RESOURCE = 0, 1, 2, 3
C_CK = 0.25


class ConfigError(ParameterError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


@dataclass(frozen=True)
class ExperimentConfig:
    depth: int = 4
    pole: tuple = (20.0, 0.0)
    r_out: float = 100.0
    n_walks: int = 100_000
    seed: int = 0
    window: tuple = (-0.5, -0.5, 1.5, 1.5)
    h: float = 1 / 256
    tol: float = 1e-9
    alpha: float = 2.0
    c_ball: float = 0.3
    eps_box: float = 1 / 20
    mu: float | None = None          # None means eps_box / 100
    k_max: int = 4
    trials: int = 64
    out: str = "out"

    @property
    def mu_value(self) -> float:
        return self.eps_box / 100 if self.mu is None else self.mu

    def validate(self, lines: dict | None = None) -> "ExperimentConfig":
        lines = lines or {}

        def need(ok, key, msg):
            if not ok:
                raise ConfigError(f"{key}: {msg}", lines.get(key))

        need(0 <= self.depth <= MAX_DEPTH, "depth", f"must lie in [0, {MAX_DEPTH}]")
        need(self.r_out > 2, "r_out", "must exceed 2")
        need(len(self.pole) == 2 and 2 < math.hypot(*self.pole) < self.r_out, "pole",
             "must lie outside [0,1]^2 by a margin and inside the outer circle")
        need(self.n_walks >= 1, "n_walks", "must be positive")
        need(0 <= self.seed < 2**63, "seed", "must lie in [0, 2^63)")
        need(len(self.window) == 4 and self.window[0] < self.window[2] and self.window[1] < self.window[3],
             "window", "must be x0, y0, x1, y1 with x0 < x1 and y0 < y1")
        need(0 < self.h <= 0.25, "h", "must lie in (0, 1/4]")
        need(0 < self.tol < 1, "tol", "must lie in (0, 1)")
        need(self.alpha > 0, "alpha", "must be positive")
        need(0 < self.c_ball < 0.5, "c_ball", "must lie in (0, 1/2)")
        need(0 < self.eps_box <= 1 / 7, "eps_box", "must lie in (0, 1/7]")
        need(0 < self.mu_value <= C_CK / 100, "mu", f"must lie in (0, {C_CK / 100}]")
        need(1 <= self.k_max <= 8, "k_max", "must lie in [1, 8]")
        need(self.trials >= 1, "trials", "must be positive")
        need(bool(self.out), "out", "must be nonempty")
        return self


_KINDS = {"depth": int, "n_walks": int, "seed": int, "k_max": int, "trials": int, "pole": (float, 2),
          "window": (float, 4), "out": str}
KEYS = [f.name for f in fields(ExperimentConfig)]


def _parse_value(key: str, text: str, line: int):
    kind = _KINDS.get(key, float)
    try:
        if isinstance(kind, tuple):
            parts = [p for p in text.replace(",", " ").split()]
            if len(parts) != kind[1]:
                raise ValueError(f"expected {kind[1]} numbers")
            return tuple(float(p) for p in parts)
        if kind is int:
            v = float(text)
            if v != int(v):
                raise ValueError("expected an integer")
            return int(v)
        if kind is str:
            return text
        if key == "mu" and text.lower() == "auto":
            return None
        if "/" in text:
            a, b = text.split("/")
            return float(a) / float(b)
        return float(text)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {text!r} ({e})", line) from None


def parse_config(text: str) -> ExperimentConfig:
    """``key = value`` lines; ``#`` starts a comment; unknown or repeated keys are errors."""
    vals, lines = {}, {}
    for n, raw in enumerate(text.splitlines(), 1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError("expected 'key = value'", n)
        key, value = (p.strip() for p in s.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", n)
        if key in vals:
            raise ConfigError(f"repeated key {key!r}", n)
        vals[key] = _parse_value(key, value, n)
        lines[key] = n
    return ExperimentConfig(**vals).validate(lines)


def emit(cfg: ExperimentConfig) -> str:
    """Canonical text: every key in declaration order, floats in repr form."""
    out = []
    for k in KEYS:
        v = getattr(cfg, k)
        if v is None:
            s = "auto"
        elif isinstance(v, tuple):
            s = ", ".join(repr(float(x)) for x in v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        out.append(f"{k} = {s}")
    return "\n".join(out) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of the canonical text without the output directory."""
    return hashlib.sha256(emit(replace(cfg, out="-")).encode()).hexdigest()


# ---------------------------------------------------------------- reports

@dataclass
class Run:
    command: str
    cfg: ExperimentConfig
    out: Path
    files: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(name)
        return p

    def check(self, name: str, ok: bool, detail=""):
        self.checks.append({"name": name, "pass": bool(ok), "detail": str(detail)})

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def manifest(self) -> dict:
        import scipy
        digests = {f: hashlib.sha256((self.out / f).read_bytes()).hexdigest() for f in self.files}
        return {"command": self.command, "config": emit(self.cfg), "config_hash": config_hash(self.cfg),
                "seed": self.cfg.seed, "versions": {"cantorlab": __version__, "numpy": np.__version__,
                                                    "scipy": scipy.__version__, "python": platform.python_version()},
                "outputs": digests, "checks": self.checks, "info": self.info, "passed": self.passed}


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


# ---------------------------------------------------------------- subcommands

def cmd_gen(run: Run, args):
    from .geometry import CantorGeometry
    g = CantorGeometry(run.cfg.depth, r_out=run.cfg.r_out)
    run.path("geometry.json").write_text(g.to_json() + "\n")
    run.check("square count", g.n_leaves == 4**g.depth, g.n_leaves)
    run.check("measure", math.fsum(g.leaf_weights) == 1.0)


def _table(run: Run, geom):
    from .solver.wos import harmonic_measure
    return harmonic_measure(run.cfg.pole, geom, run.cfg.n_walks, run.cfg.seed)


def cmd_measure(run: Run, args):
    from .geometry import CantorGeometry
    g = CantorGeometry(run.cfg.depth, r_out=run.cfg.r_out)
    t = _table(run, g)
    t.to_csv(run.path("hm_table.csv"))
    run.check("total mass", t.total_hits() == t.n_walks, f"{t.total_hits()} of {t.n_walks}")
    run.info["omega_E"] = t.estimate(g.root)


def cmd_lemma(run: Run, args):
    from .counterexample import verify_gradient_lemma
    from .geometry import CantorGeometry
    g = CantorGeometry(run.cfg.depth, r_out=run.cfg.r_out)
    t = _table(run, g)
    rep = verify_gradient_lemma(run.cfg.depth, t, method=args.method, h=run.cfg.h, c=run.cfg.c_ball,
                                seed=run.cfg.seed, geom=g)
    rep.to_csv(run.path("lemma42.csv"))
    run.info.update(min=rep.min, max=rep.max, geometric_mean=rep.geometric_mean, rms_factor=rep.rms_factor)
    run.check("ratios within [1/10, 10]", 0.1 <= rep.min and rep.max <= 10, f"[{rep.min:.4g}, {rep.max:.4g}]")
    run.check("mean vs rms within 3", rep.rms_factor <= 3, f"{rep.rms_factor:.4g}")


def cmd_nk(run: Run, args):
    from .counterexample import nk_experiment
    from .geometry import CantorGeometry
    g = CantorGeometry(run.cfg.depth, r_out=run.cfg.r_out)
    t = _table(run, g)
    rep = nk_experiment(run.cfg.k_max, run.cfg.depth, run.cfg.trials, run.cfg.seed, table=t, method=args.method,
                        c=run.cfg.c_ball, geom=g)
    rep.to_csv(run.path("nk_growth.csv"))
    for r in rep.rows:
        run.check(f"k={r.k} Paley-Zygmund >= 0.25", r.pz_min >= 0.25, f"{r.pz_min:.4g}")
        run.check(f"k={r.k} Khintchine in [0.5, 1.1]", 0.5 <= r.khintchine_min and r.khintchine_max <= 1.1,
                  f"[{r.khintchine_min:.4g}, {r.khintchine_max:.4g}]")
        if args.growth is not None and r.k > 1:
            run.check(f"k={r.k} growth >= {args.growth} sqrt(k)", r.sqrtk_ratio >= args.growth, f"{r.sqrtk_ratio:.4g}")
    run.info["rows"] = [r.__dict__ for r in rep.rows]


def cmd_boxscan(run: Run, args):
    from .boxes import box_partition_check, build_Bd, write_witness_csv
    from .geometry import CantorGeometry
    g = CantorGeometry(run.cfg.depth, r_out=run.cfg.r_out)
    mu = run.cfg.mu_value
    B = build_Bd(run.cfg.eps_box, mu, g, max(run.cfg.depth - 1, 0))
    write_witness_csv(run.path("witnesses.csv"), B, mu)
    run.info["survivors"] = len(B)
    for w in B[:8]:
        rep = box_partition_check(w.box, samples=20_000, seed=run.cfg.seed)
        run.check(f"partition of box {w.cube.label() or 'root'}", rep.ok)


def cmd_badfn(run: Run, args):
    from .badfn import (build_bad_function, build_f0, build_PQ, check_two_point, energy_check, fixture_names,
                        load_fixture, pi_gap)
    summary = {}
    for name in fixture_names():
        fx = load_fixture(name)
        f0 = build_f0(fx.box)
        for p in fx.probes:
            v = float(f0(fx.box.to_world(*p["local"])[None])[0])
            # zeros must be exact; other values up to rounding of the ramp arithmetic
            run.check(f"{name} f0 at {p['local']}", math.isclose(v, p["f0"] * fx.box.scale, rel_tol=1e-12), v)
        reg = build_PQ(fx.box, fx.geom, fx.mu)
        run.check(f"{name} classified as case {fx.case}", reg.case == fx.case, reg.tag)
        tp = check_two_point(build_bad_function(fx.box, []), fx.geom, fx.mu)
        run.check(f"{name} two-point ratio positive", tp.status == "ok", tp.c_tp)
        row = {"case": reg.case, "tag": reg.tag, "area": reg.area, "c_tp": tp.c_tp}
        if reg.case == 3:
            row["pi_gap"] = pi_gap(reg)
            run.check(f"{name} pi-gap", pi_gap(reg) >= fx.mu * 0.25 / 50, row["pi_gap"])
        if reg.case == 2:
            row["energy"] = energy_check(fx.box, build_bad_function(fx.box, []), fx.geom, reg)
            run.check(f"{name} energy positive", row["energy"] > 0, row["energy"])
        summary[name] = row
    _write_json(run.path("badfn.json"), summary)


def cmd_rellich(run: Run, args):
    from .badfn import rellich_failure_experiment
    rep = rellich_failure_experiment(run.cfg.k_max, run.cfg.depth, run.cfg.trials, run.cfg.seed,
                                     eps=args.eps, mu=run.cfg.mu_value)
    rep.to_csv(run.path("rellich_growth.csv"))
    for r in rep.rows:
        run.check(f"k={r.k} Khintchine step", r.khintchine_min >= 1 / math.sqrt(2), f"{r.khintchine_min:.4g}")
        if r.k > 1:
            g = rep.growth(r.k) / math.sqrt(r.k)
            run.check(f"k={r.k} growth >= 0.6 sqrt(k)", g >= 0.6, f"{g:.4g}")
    run.info["rows"] = [r.__dict__ for r in rep.rows]


def cmd_khintchine(run: Run, args):
    from fractions import Fraction
    from .stochastics import RademacherEnsemble, binomial_abs_mean, khintchine_ratio
    lines = ["m,exact,oracle,ratio,mc,mc_stderr"]
    for m in range(1, 17):
        ex = khintchine_ratio(np.ones(m))
        num, den = binomial_abs_mean(m)
        mc = khintchine_ratio(np.ones(m), RademacherEnsemble("mc", 4096, run.cfg.seed))
        run.check(f"m={m} exact", Fraction(ex.mean) == Fraction(num, den), ex.mean)
        run.check(f"m={m} mc within 3 stderr", abs(mc.mean - ex.mean) <= 3 * mc.stderr + 1e-15, mc.mean)
        lines.append(f"{m},{ex.mean!r},{num / den!r},{ex.ratio!r},{mc.mean!r},{mc.stderr!r}")
    run.path("khintchine.csv").write_text("\n".join(lines) + "\n")


def selftest_checks():
    """Closed-form checks: (name, passed) pairs."""
    from .badfn import build_f0
    from .boxes import EpsBox
    from .counterexample import bump_extension, f_basis
    from .functionals import BoundaryFunction, weak_l1_norm
    from .geometry import CantorGeometry, DyadicCube
    from .stochastics import khintchine_ratio, paley_zygmund_freq, rademacher_stream
    out = []
    for n in range(4):
        g = CantorGeometry(n)
        out.append((f"depth {n}: 4^n squares of side 4^-n", g.n_leaves == 4**n and np.all(
            g.rects[:, 2] - g.rects[:, 0] == 4.0**-n)))
    g = CantorGeometry(2)
    out.append(("f_basis(root) is 1", np.all(f_basis(g.root, g).values == 1.0)))
    q = DyadicCube(2, (1, 2))
    out.append(("f_basis(gen 2) is 1/16 on its leaf", f_basis(q, g).values.sum() == 1 / 16))
    b = bump_extension(q)
    out.append(("bump plateau", b(np.array(q.center)[None])[0] == q.side))
    out.append(("bump vanishes outside", b(np.array(q.center)[None] + q.side)[0] == 0.0))
    f0 = build_f0(EpsBox(0.1))
    out.append(("f0 at the interior floor", abs(f0(np.array([[0.0, 0.1]]))[0] - 8.0) < 1e-12))
    out.append(("f0 at heights 9eps and 10eps", np.all(f0(np.array([[0.0, 0.9], [0.0, 1.0]])) == 0.0)))
    out.append(("E|eps| = 1", khintchine_ratio([1.0]).mean == 1.0))
    out.append(("E|eps1 + eps2| = 1", khintchine_ratio([1.0, 1.0]).mean == 1.0))
    out.append(("PZ single sign", paley_zygmund_freq([1.0]) == 1.0))
    out.append(("stream determinism", np.array_equal(rademacher_stream(9, 3, 5), rademacher_stream(9, 3, 5))))
    f = BoundaryFunction(np.array([4.0, 0.0]), np.array([0.25, 0.75]))
    out.append(("weak-L1 of 4 on a quarter", weak_l1_norm(f) == 1.0))
    out.append(("empty config gives defaults", parse_config("") == ExperimentConfig()))
    return out


def cmd_selftest(run: Run, args):
    for name, ok in selftest_checks():
        run.check(name, ok)


COMMANDS = {"gen": cmd_gen, "measure": cmd_measure, "verify-lemma42": cmd_lemma, "nk-experiment": cmd_nk,
            "box-scan": cmd_boxscan, "badfn-build": cmd_badfn, "rellich-experiment": cmd_rellich,
            "khintchine": cmd_khintchine, "selftest": cmd_selftest}

_OVERRIDES = [("--depth", "depth", int, None), ("--pole", "pole", float, 2), ("--r-out", "r_out", float, None),
              ("--walks", "n_walks", int, None), ("--seed", "seed", int, None), ("--window", "window", float, 4),
              ("--h", "h", float, None), ("--tol", "tol", float, None), ("--alpha", "alpha", float, None),
              ("--c-ball", "c_ball", float, None), ("--eps-box", "eps_box", float, None),
              ("--mu", "mu", float, None), ("--kmax", "k_max", int, None), ("--trials", "trials", int, None),
              ("--out", "out", str, None)]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cantorlab", description="Cantor-set harmonic analysis experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="key = value configuration file")
        for flag, dest, typ, n in _OVERRIDES:
            s.add_argument(flag, dest=dest, type=typ, nargs=n, default=None)
        if name in ("verify-lemma42", "nk-experiment"):
            s.add_argument("--method", choices=("bie", "grid"), default="grid" if name == "verify-lemma42" else "bie")
        if name == "nk-experiment":
            s.add_argument("--growth", type=float, default=None,
                           help="also require mean_k/mean_1 >= GROWTH * sqrt(k)")
        if name == "rellich-experiment":
            s.add_argument("--eps", type=float, default=0.1, help="box parameter of the layered bad functions")
    return p


def _resolve(args) -> ExperimentConfig:
    cfg = parse_config(args.config.read_text(encoding="utf-8")) if args.config else ExperimentConfig()
    over = {}
    for _, dest, _, n in _OVERRIDES:
        v = getattr(args, dest)
        if v is not None:
            over[dest] = tuple(v) if n else v
    return replace(cfg, **over).validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        cfg = _resolve(args)
    except (ParameterError, OSError) as e:
        print(json.dumps({"status": "usage-error", "error": str(e)}), file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(args.command, cfg, out)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        COMMANDS[args.command](run, args)
    except (ConvergenceError, CapacityError, AccuracyError, CoverageError, MemoryError) as e:
        run.check("completed", False, f"{type(e).__name__}: {e}")
        code = EXIT_RESOURCE
    except ParameterError as e:
        run.check("completed", False, f"{type(e).__name__}: {e}")
        code = EXIT_USAGE
    except CantorLabError as e:
        run.check("completed", False, f"{type(e).__name__}: {e}")
        code = EXIT_ASSERT
    if code == EXIT_OK and not run.passed:
        code = EXIT_ASSERT
    secs = time.perf_counter() - t0     # kept out of the manifest, which must be reproducible
    _write_json(out / "manifest.json", run.manifest())
    failed = [c for c in run.checks if not c["pass"]]
    if failed:
        print(json.dumps({"status": "fail", "exit": code, "failed": failed}), file=sys.stderr)
    for c in run.checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}  {c['detail']}")
    print(f"{args.command}: {'ok' if code == 0 else 'exit ' + str(code)} in {secs:.1f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
