"""Command-line driver: ``pevo certify|calibrate|run|sweep --config FILE``.

The configuration is an INI file::

    [problem]
    preset = schrodinger_kb
    c = 1.0            ; any further keys are preset parameters
    T = 1.0

    [grid]
    L = 20
    N = 256

    [norm]
    s1 = 0
    s2 = 2

    [run]
    steps = 400
    R = 2.0
    C_cap = 100
    ; sigma = 0        ; override the loss exponent 2 M_{p-1}

    [calibration]
    ; h = 4            ; fix h instead of searching
    ; M = 0.9          ; comma-separated M_{p-1}, ..., M_1

    [sweep]
    axis = N           ; h, M, N or sigma
    values = 128, 256

Exit codes: 0 success, 1 invalid configuration, 2 hypothesis violation,
3 under-resolution, 4 h search failed, 5 boundary mass, 6 energy
verification failed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .conjugation import CalibrationResult, calibrate, conjugate_generator
from .errors import (BoundaryMassError, CalibrationError, HypothesisViolation, NeumannDivergence,
                     PevoError, UnderResolved)
from .evolve import assemble_generator, merge_resolutions, solve, verify_energy_estimate
from .garding import default_c_max, positivity_check
from .grid import NormSpec, make_grid
from .problems import PRESETS, certify, preset

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_UNDERRESOLVED = 0, 1, 2, 3
EXIT_CALIBRATION, EXIT_BOUNDARY, EXIT_ENERGY = 4, 5, 6

SWEEP_AXES = ("h", "M", "N", "sigma")


class ConfigError(PevoError):
    pass


def fmt(v) -> str:
    """Locale-free fixed formatting for CSV cells."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return f"{v:.10e}"
    return str(v)


def write_csv(path: str, header: list, rows: list):
    """Write atomically: a temporary file in the target directory, then rename."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".pevo-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in text:
        return [_value(t) for t in text.split(",") if t.strip()]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass
class RunConfig:
    preset: str
    params: dict
    L: float = 20.0
    N: int = 256
    s1: float = 0.0
    s2: float = 0.0
    T: float = 1.0
    steps: int = 400
    R: float = 2.0
    C_cap: float = 100.0
    sigma: float | None = None
    h: float | None = None
    M: list | None = None
    mode: str | None = None
    out: str = "."
    axis: str | None = None
    values: list = field(default_factory=list)

    def problem(self):
        kw = dict(self.params)
        kw["T"] = self.T
        if self.mode is not None:
            kw["mode"] = self.mode
        return preset(self.preset, **kw)

    def grid(self, N: int | None = None):
        return make_grid(self.L, self.N if N is None else N)

    @property
    def spec(self) -> NormSpec:
        return NormSpec(self.s1, self.s2)


def load_config(path: str, mode: str | None = None, out: str | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    if not cp.read(path):
        raise ConfigError(f"cannot read configuration {path!r}")
    if not cp.has_section("problem") or "preset" not in cp["problem"]:
        raise ConfigError("[problem] preset is required")
    prob = {k: _value(v) for k, v in cp["problem"].items()}
    name = prob.pop("preset")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    cfg_mode = prob.pop("mode", None)
    T = float(prob.pop("T", 1.0))

    def get(section, key, default, cast):
        if cp.has_section(section) and key in cp[section]:
            try:
                return cast(cp[section][key].strip())
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        return default

    M = get("calibration", "M", None, lambda s: [float(v) for v in s.split(",") if v.strip()])
    values = get("sweep", "values", [], lambda s: [float(v) for v in s.split(",") if v.strip()])
    rc = RunConfig(
        preset=name, params=prob, T=T,
        L=get("grid", "L", 20.0, float), N=get("grid", "N", 256, int),
        s1=get("norm", "s1", 0.0, float), s2=get("norm", "s2", 0.0, float),
        steps=get("run", "steps", 400, int), R=get("run", "R", 2.0, float),
        C_cap=get("run", "C_cap", 100.0, float), sigma=get("run", "sigma", None, float),
        h=get("calibration", "h", None, float), M=M,
        mode=mode if mode is not None else cfg_mode,
        out=out if out is not None else get("run", "out", ".", str),
        axis=get("sweep", "axis", None, str), values=values)
    if rc.N % 2 or rc.N < 32:
        raise ConfigError("[grid] N must be even and at least 32")
    if rc.steps < 1:
        raise ConfigError("[run] steps must be positive")
    try:
        rc.problem()
    except (PevoError, TypeError) as exc:
        raise ConfigError(f"invalid preset parameters: {exc}") from None
    return rc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_certify(rc: RunConfig) -> int:
    report = certify(rc.problem(), rc.grid(), rc.mode, R=rc.R)
    rows = [(r.level, r.alpha, r.beta, r.seminorm, r.ok) for r in report.rows]
    write_csv(os.path.join(rc.out, "certify.csv"),
              ["level", "alpha", "beta", "seminorm", "declared_order_ok"], rows)
    for msg in report.failures:
        print(f"certify: {msg}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_HYPOTHESIS


def _calibrate(rc: RunConfig, grid=None) -> CalibrationResult:
    return calibrate(rc.problem(), grid or rc.grid(), h=rc.h, Ms=rc.M, R=rc.R)


def calibration_rows(cal: CalibrationResult) -> list:
    rows = []
    for n, (C, M, rn, mg) in enumerate(zip(cal.C, cal.Ms, cal.remainder_norms, cal.margins), 1):
        rows.append((cal.p - n, C, M, cal.h, rn, mg))
    return rows


def cmd_calibrate(rc: RunConfig) -> int:
    report = certify(rc.problem(), rc.grid(), rc.mode, R=rc.R)
    if not report.passed:
        for msg in report.failures:
            print(f"certify: {msg}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    cal = _calibrate(rc)
    write_csv(os.path.join(rc.out, "calibration.csv"),
              ["level", "C_measured", "M_chosen", "h", "remainder_norm", "margin"],
              calibration_rows(cal))
    return EXIT_OK


@dataclass
class RunOutcome:
    sigma: float
    fitted_C: float
    positivity_bound: float
    passed: bool
    remainder_norm: float
    report: object = None


def execute_run(rc: RunConfig) -> RunOutcome:
    """Calibrate on the configured grid, then solve at N/2 and N."""
    problem = rc.problem()
    cal = _calibrate(rc)
    reports, gens = [], []
    for N in (rc.N // 2, rc.N):
        chain = cal.build_chain(rc.grid(N))
        _, rep = solve(problem, chain, rc.spec, rc.steps, sigma=rc.sigma)
        reports.append(rep)
        gens.append(conjugate_generator(assemble_generator(problem, chain.grid, 0.0), chain))
    report = merge_resolutions(reports)
    pos = positivity_check(gens[0], gens[1], default_c_max(max(cal.remainder_norms)))
    ver = verify_energy_estimate(report, rc.C_cap)
    return RunOutcome(report.sigma, report.C, pos.lower_bound, ver.passed,
                      max(cal.remainder_norms), report)


def cmd_run(rc: RunConfig) -> int:
    out = execute_run(rc)
    rep = out.report
    rows = [(t, a, b, r, c) for t, a, b, r, c in
            zip(rep.times.tolist(), rep.norm_u.tolist(), rep.norm_ulambda.tolist(),
                rep.rhs.tolist(), rep.running_C.tolist())]
    write_csv(os.path.join(rc.out, "energy.csv"),
              ["t", "norm_u_s1_s2_minus_sigma", "norm_ulambda", "rhs_functional", "running_C"], rows)
    write_csv(os.path.join(rc.out, "summary.csv"),
              ["sigma", "fitted_C", "positivity_bound", "pass"],
              [(out.sigma, out.fitted_C, out.positivity_bound, out.passed)])
    return EXIT_OK if out.passed else EXIT_ENERGY


def _sweep_config(rc: RunConfig, axis: str, value: float) -> RunConfig:
    if axis == "h":
        return replace(rc, h=float(value))
    if axis == "M":
        p = rc.problem().p
        return replace(rc, M=[float(value)] * (p - 1))
    if axis == "N":
        return replace(rc, N=int(value))
    return replace(rc, sigma=float(value))


def _sweep_one(args):
    rc, axis, value = args
    try:
        out = execute_run(_sweep_config(rc, axis, value))
        return (value, out.sigma, out.fitted_C, out.positivity_bound, out.passed,
                out.remainder_norm, "ok")
    except PevoError as exc:
        nan = float("nan")
        return (value, nan, nan, nan, False, nan, f"exit{exit_code_for(exc)}")


def cmd_sweep(rc: RunConfig, axis: str | None = None, values=None) -> int:
    axis = axis or rc.axis
    values = list(values if values is not None else rc.values)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    jobs = [(rc, axis, v) for v in values]
    workers = max(1, min(len(jobs), int(os.environ.get("PEVO_THREADS", os.cpu_count() or 1))))
    if workers == 1:
        rows = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    write_csv(os.path.join(rc.out, f"sweep_{axis}.csv"),
              ["value", "sigma", "fitted_C", "positivity_bound", "pass", "remainder_norm", "status"],
              rows)
    return EXIT_OK


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, HypothesisViolation):
        return EXIT_HYPOTHESIS
    if isinstance(exc, UnderResolved):
        return EXIT_UNDERRESOLVED
    if isinstance(exc, (CalibrationError, NeumannDivergence)):
        return EXIT_CALIBRATION
    if isinstance(exc, BoundaryMassError):
        return EXIT_BOUNDARY
    return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pevo", description="p-evolution energy laboratory")
    ap.add_argument("command", choices=["certify", "calibrate", "run", "sweep"])
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--out", default=None, help="output directory (default: [run] out or .)")
    ap.add_argument("--mode", choices=["full", "refined", "strengthened"], default=None)
    ap.add_argument("--axis", choices=SWEEP_AXES, default=None, help="sweep axis override")
    ap.add_argument("--values", default=None, help="comma-separated sweep values override")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = load_config(args.config, args.mode, args.out)
        if args.command == "certify":
            return cmd_certify(rc)
        if args.command == "calibrate":
            return cmd_calibrate(rc)
        if args.command == "run":
            return cmd_run(rc)
        values = [float(v) for v in args.values.split(",")] if args.values else None
        return cmd_sweep(rc, args.axis, values)
    except PevoError as exc:
        print(f"pevo: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
