"""Experiment configuration, dispatch and report writing."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from itertools import product

import numpy as np
import yaml

from . import diagnostics as dg
from .loops import LoopSpec, format_sigma, g_loop, parse_sigma
from .model import build_model, sample_rng
from .primitive import k_loop, k_tensor, primitive_ode_solve
from .propagator import (evolution_factor, profile_kernel, remove_zero_mode, theta_kernel,
                         zero_mode)
from .spectral import DEFAULT_KAPPA, boundary_m, flow_to_z

__all__ = [
    "FORMAT_VERSION",
    "KINDS",
    "MAX_N",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "run_experiment",
    "emit_report",
    "report_bytes",
]

FORMAT_VERSION = "bandloop-report/1"
MAX_N = 4096
KINDS = ("sample-loops", "compare-k", "scaling", "ward", "sumzero", "diffusion", "locallaw", "spectrum", "oracle")

DEFAULT_WINDOWS = {
    "ward_k_tol": 1e-10,
    "ward_k_n2_tol": 1e-12,
    "ward_loop_tol": 1e-9,
    "ward_resolvent_tol": 1e-9,
    "circulant_tol": 1e-12,
    "zero_mode_tol": 1e-10,
    "sumzero_tol": 1e-12,
    "sumzero_bound": 2.0,
    "oracle_closed_tol": 1e-6,
    "oracle_tree_tol": 1e-5,
    "loop_ratio": [0.05, 20.0],
    "doubling_factor": [2.8, 5.7],
    "entry_slope": [-0.75, -0.3],
    "partial_slope": [-1.4, -0.7],
    "diffusion_ratio_max": 10.0,
    "diffusion_shrink_factor": 3.0,
    "deloc_max_log": 25.0,
    "deloc_median_log": 8.0,
}

# execution settings: recorded on the config, left out of the report echo
_EXECUTION_FIELDS = ("threads", "out", "format", "overwrite", "timings")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class ExperimentConfig:
    kind: str
    W: list = field(default_factory=lambda: [16])
    L: list = field(default_factory=lambda: [8])
    E: list = field(default_factory=lambda: [0.0])
    t: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    n: list = field(default_factory=lambda: [2])
    sigma: list = field(default_factory=list)
    a: list = field(default_factory=list)
    samples: int = 0
    seed: int = 0
    threads: int = 1
    kappa: float = DEFAULT_KAPPA
    n_max: int = 4
    step: float = 1e-3
    sample_counts: list = field(default_factory=list)
    windows: dict = field(default_factory=dict)
    out: str | None = None
    format: str = "json"
    overwrite: bool = False
    timings: bool = False

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>: config must be a mapping")
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(f"{k}: unknown field")
        if "kind" not in d:
            raise ConfigError("kind: missing")
        cfg = cls(**copy.deepcopy(d))
        cfg.validate()
        return cfg

    def experiment_dict(self) -> dict:
        d = self.to_dict()
        for k in _EXECUTION_FIELDS:
            d.pop(k)
        d["windows"] = self.window_values()
        return d

    def window_values(self) -> dict:
        w = dict(DEFAULT_WINDOWS)
        w.update(self.windows)
        return w

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: must be one of {', '.join(KINDS)}, got {self.kind!r}")
        for name in ("W", "L", "E", "t", "eta", "n", "sigma", "a", "sample_counts"):
            if not isinstance(getattr(self, name), list):
                raise ConfigError(f"{name}: must be a list")
        for i, w in enumerate(self.W):
            if not _is_int(w) or w < 1:
                raise ConfigError(f"W[{i}]: must be a positive integer, got {w!r}")
        for i, l in enumerate(self.L):
            if not _is_int(l) or l < 3:
                raise ConfigError(f"L[{i}]: must be an integer >= 3, got {l!r}")
        for w in self.W:
            for l in self.L:
                if w * l > MAX_N:
                    raise ConfigError(f"W: N = {w}*{l} = {w * l} exceeds the ceiling N <= {MAX_N}")
        for i, e in enumerate(self.E):
            if not _is_num(e) or abs(e) >= 2 - self.kappa:
                raise ConfigError(f"E[{i}]: must lie in the bulk |E| < 2 - kappa, got {e!r}")
        for i, v in enumerate(self.t):
            if not _is_num(v) or not (0 < v < 1):
                raise ConfigError(f"t[{i}]: must lie in (0, 1), got {v!r}")
        for i, v in enumerate(self.eta):
            if not _is_num(v) or not (0 < v <= 1):
                raise ConfigError(f"eta[{i}]: must lie in (0, 1], got {v!r}")
        for i, v in enumerate(self.n):
            if not _is_int(v) or v < 1:
                raise ConfigError(f"n[{i}]: must be a positive integer, got {v!r}")
        for i, s in enumerate(self.sigma):
            try:
                parse_sigma(str(s))
            except ValueError:
                raise ConfigError(f"sigma[{i}]: charge words use '+' and '-', got {s!r}") from None
        for i, w in enumerate(self.a):
            if not isinstance(w, list) or not all(_is_int(x) and x >= 1 for x in w):
                raise ConfigError(f"a[{i}]: must be a list of 1-based block indices")
        for name in ("samples", "seed", "n_max"):
            v = getattr(self, name)
            if not _is_int(v) or v < 0:
                raise ConfigError(f"{name}: must be a nonnegative integer, got {v!r}")
        if not _is_int(self.threads) or self.threads < 1:
            raise ConfigError(f"threads: must be a positive integer, got {self.threads!r}")
        if not _is_num(self.step) or not (0 < self.step < 1):
            raise ConfigError(f"step: must lie in (0, 1), got {self.step!r}")
        if not _is_num(self.kappa) or not (0 < self.kappa < 1):
            raise ConfigError(f"kappa: must lie in (0, 1), got {self.kappa!r}")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"format: must be json or csv, got {self.format!r}")
        if not isinstance(self.windows, dict):
            raise ConfigError("windows: must be a mapping")
        for k in self.windows:
            if k not in DEFAULT_WINDOWS:
                raise ConfigError(f"windows.{k}: unknown window")
        needs_samples = {"sample-loops", "compare-k", "scaling", "diffusion", "locallaw", "spectrum"}
        if self.kind in needs_samples and self.samples < 1:
            raise ConfigError("samples: this experiment needs at least one sample")
        if self.kind in ("compare-k", "scaling", "diffusion", "locallaw", "sample-loops") and not self.eta:
            raise ConfigError("eta: this experiment needs at least one eta")
        if self.kind in ("ward", "oracle", "sumzero") and not self.t:
            raise ConfigError("t: this experiment needs at least one t")
        return self


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) and math.isfinite(v)


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config; ``overrides`` (from CLI flags) win over file values."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: invalid YAML: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("<root>: config must be a mapping")
    for k, v in (overrides or {}).items():
        if v is not None:
            d[k] = v
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------- report

@dataclass
class ExperimentReport:
    config: dict
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    columns: list = field(default_factory=list)
    format_version: str = FORMAT_VERSION

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def check(self, name, value, passed, threshold):
        self.checks.append({"name": name, "value": _clean(value), "threshold": _clean(threshold),
                            "passed": bool(passed)})

    def to_dict(self, timings: bool = False) -> dict:
        d = {"format_version": self.format_version, "config": self.config, "columns": self.columns,
             "records": self.records, "summary": self.summary, "checks": self.checks,
             "failures": self.failures, "passed": self.passed}
        if timings:
            d["timings"] = self.timings
        return _clean(d)


def _clean(x):
    """Convert numpy scalars and complex numbers into JSON-native values."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    return x


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def report_bytes(report: ExperimentReport, fmt: str = "json", timings: bool = False) -> bytes:
    d = report.to_dict(timings)
    if fmt == "json":
        return (json.dumps(d, indent=1, sort_keys=True) + "\n").encode("utf-8")
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    buf.write(f"# format_version: {FORMAT_VERSION}\n")
    buf.write("# config: " + json.dumps(d["config"], sort_keys=True) + "\n")
    for c in d["checks"]:
        buf.write(f"# check: {c['name']} passed={_fmt(c['passed'])} value={_fmt(c['value'])}\n")
    if timings:
        buf.write("# timings: " + json.dumps(d["timings"], sort_keys=True) + "\n")
    cols = d["columns"] or sorted({k for r in d["records"] for k in r})
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in d["records"]:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue().encode("utf-8")


def emit_report(report: ExperimentReport, path: str, format: str = "json", overwrite: bool = False,
                timings: bool = False) -> None:
    """Write ``report`` atomically; an existing file is replaced only with ``overwrite``."""
    if os.path.exists(path) and not overwrite:
        raise FileExistsError(f"{path} exists; pass overwrite to replace it")
    data = report_bytes(report, format, timings)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".bandloop-", dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# ---------------------------------------------------------------- dispatch

def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    config.validate()
    report = ExperimentReport(config=config.experiment_dict())
    _memory_note(config)
    t0 = time.perf_counter()
    _RUNNERS[config.kind](config, report)
    report.timings["total_s"] = time.perf_counter() - t0
    return report


def _memory_note(cfg):
    N = max((w * l for w in cfg.W for l in cfg.L), default=0)
    if cfg.kind in ("ward", "oracle", "sumzero") or N < 1024:
        return
    mb = 5 * 16 * N * N * max(cfg.threads, 1) / 2**20
    print(f"bandloop: N={N}, estimated peak memory {mb:.0f} MiB", file=sys.stderr)


def _windows(cfg):
    return cfg.window_values()


def _in(v, lo_hi):
    return lo_hi[0] <= v <= lo_hi[1]


# ward ------------------------------------------------------------

def _ward_k_tensor(model, t, sigma, E):
    """Max relative residual of the K Ward identity over all prefixes."""
    n = len(sigma)
    pt = flow_to_z(E, t, model.L)
    sp, sm = (1,) + sigma[1:-1], (-1,) + sigma[1:-1]
    K = k_tensor(model, t, sigma, E)
    lhs = K.sum(axis=-1)
    if n == 2:
        Kp = np.full(model.L, boundary_m(E))
        Km = np.conj(Kp)
    else:
        Kp, Km = k_tensor(model, t, sp, E), k_tensor(model, t, sm, E)
    rhs = (Kp - Km) / (2j * model.W * pt.eta_t)
    return float(np.abs(lhs - rhs).max() / np.abs(lhs).max()), lhs


def _ward_runner(cfg, rep):
    win = _windows(cfg)
    rep.columns = ["check", "n", "sigma", "W", "L", "E", "t", "residual"]
    worst = {}

    def add(check, n, sigma, W, L, E, t, res):
        rep.records.append({"check": check, "n": n, "sigma": sigma, "W": W, "L": L, "E": E, "t": t,
                            "residual": res})
        worst[check] = max(worst.get(check, 0.0), res)

    ns = sorted(set(cfg.n))
    for W, L, E, t in product(cfg.W, cfg.L, cfg.E, cfg.t):
        model = build_model(W, L)
        for n in ns:
            if n < 2:
                continue
            for mid in product((1, -1), repeat=n - 2):
                sigma = (1,) + mid + (-1,)
                res, lhs = _ward_k_tensor(model, t, sigma, E)
                add("ward_k", n, format_sigma(sigma), W, L, E, t, res)
                if n == 2:
                    dev = float(np.abs(lhs - 1.0 / (W * (1 - t))).max() * W * (1 - t))
                    add("ward_k_n2_sum", n, format_sigma(sigma), W, L, E, t, dev)
    # per-sample loop identities
    for W, L in product(cfg.W, cfg.L):
        if cfg.samples < 1:
            break
        model = build_model(W, L)
        pts = [flow_to_z(E, t, L) for E, t in product(cfg.E, cfg.t)]
        loop_ns = [n for n in ns if 2 <= n <= 3]

        def per_sample(cache, i):
            out = []
            for pt in pts:
                ct = cache.scaled(pt.t)
                out.append(("ward_resolvent", 0, "", pt, dg.resolvent_ward_residual(ct, pt.z_t)))
                for n in loop_ns:
                    for mid in product((1, -1), repeat=n - 2):
                        sigma = (1,) + mid + (-1,)
                        r = max(dg.ward_residual_loop(ct, pt, sigma, pre) for pre in product(range(L), repeat=n - 1))
                        out.append(("ward_loop", n, format_sigma(sigma), pt, r))
            return out

        res, fails = dg.map_samples(per_sample, model, cfg.seed, cfg.samples, cfg.threads)
        rep.failures += [asdict(f) for f in fails]
        for rows in res:
            for check, n, s, pt, r in rows:
                add(check, n, s, W, L, pt.E, pt.t, r)
    # circulant algebra and the zero-mode projector
    rng = sample_rng(cfg.seed, 0)
    for L in cfg.L:
        I = np.eye(L)
        S = profile_kernel(L).dense()
        for xi in (0.3, 0.7 * np.exp(0.9j), -0.95, 0.5j):
            Th = theta_kernel(xi, L)
            add("circulant_inverse", 0, "", 0, L, 0.0, 0.0, float(np.abs((I - xi * S) @ Th.dense() - I).max()))
            Th2 = theta_kernel(0.6 * np.conj(xi), L).dense()
            add("circulant_commute", 0, "", 0, L, 0.0, 0.0,
                float(np.abs(Th.dense() @ Th2 - Th2 @ Th.dense()).max()))
            if abs(xi) <= 1:
                f1, f2, f12 = (evolution_factor(0.1, 0.4, xi, L), evolution_factor(0.4, 0.8, xi, L),
                               evolution_factor(0.1, 0.8, xi, L))
                add("evolution_semigroup", 0, "", 0, L, 0.0, 0.0,
                    float(np.abs(f1.dense() @ f2.dense() - f12.dense()).max()))
        for t in cfg.t:
            for n in (2, 3):
                A = rng.standard_normal((L,) * n) + 1j * rng.standard_normal((L,) * n)
                Q = remove_zero_mode(t, A)
                add("zero_mode", n, "", 0, L, 0.0, t, float(np.abs(zero_mode(Q.values)).max() / np.abs(A).max()))
    tol = {"ward_k": win["ward_k_tol"], "ward_k_n2_sum": win["ward_k_n2_tol"], "ward_loop": win["ward_loop_tol"],
           "ward_resolvent": win["ward_resolvent_tol"], "circulant_inverse": win["circulant_tol"],
           "circulant_commute": win["circulant_tol"], "evolution_semigroup": win["circulant_tol"],
           "zero_mode": win["zero_mode_tol"]}
    for check in sorted(worst):
        rep.check(check, worst[check], worst[check] < tol[check], tol[check])
    rep.summary = {k: worst[k] for k in sorted(worst)}


# sum zero ------------------------------------------------------

def _sumzero_runner(cfg, rep):
    win = _windows(cfg)
    rep.columns = ["E", "t", "L", "value_re", "value_im", "closed", "residual", "bound_ratio"]
    worst, bound_ok = 0.0, True
    for L, E in product(cfg.L, cfg.E):
        rows, C = dg.sum_zero_scan(cfg.t, L, E)
        for t, v, closed in rows:
            res = abs(v - closed)
            worst = max(worst, res)
            ratio = abs(v) / (1 - t)
            if E == 0.0:
                bound_ok &= abs(v) <= win["sumzero_bound"] * (1 - t)
            rep.records.append({"E": E, "t": t, "L": L, "value_re": v.real, "value_im": v.imag,
                                "closed": closed, "residual": res, "bound_ratio": ratio})
    rep.check("sumzero_closed_value", worst, worst < win["sumzero_tol"], win["sumzero_tol"])
    if 0.0 in cfg.E:
        rep.check("sumzero_bound_E0", bound_ok, bound_ok, win["sumzero_bound"])
    rep.summary = {"max_residual": worst}


# oracle --------------------------------------------------------

def _oracle_runner(cfg, rep):
    win = _windows(cfg)
    rep.columns = ["W", "L", "E", "t", "n", "sigma", "reference", "rel_diff"]
    worst = {"closed": 0.0, "tree": 0.0}
    ts = sorted(cfg.t)
    for W, L, E in product(cfg.W, cfg.L, cfg.E):
        model = build_model(W, L)
        sols = primitive_ode_solve(model, ts[-1], cfg.n_max, cfg.step, E, record=ts[:-1])
        for t in ts:
            sol = sols[t]
            for sigma in sorted(sol, key=lambda s: (len(s), [-x for x in s])):
                n = len(sigma)
                if n <= 3:
                    ref = np.empty((L,) * n, dtype=np.complex128)
                    for a in product(range(L), repeat=n):
                        ref[a] = k_loop(model, t, sigma, a, E, method="closed")
                    kind = "closed"
                else:
                    ref = k_tensor(model, t, sigma, E)
                    kind = "tree"
                rel = float(np.abs(sol[sigma] - ref).max() / np.abs(ref).max())
                worst[kind] = max(worst[kind], rel)
                rep.records.append({"W": W, "L": L, "E": E, "t": t, "n": n, "sigma": format_sigma(sigma),
                                    "reference": kind, "rel_diff": rel})
    rep.check("oracle_closed", worst["closed"], worst["closed"] < win["oracle_closed_tol"], win["oracle_closed_tol"])
    if cfg.n_max >= 4:
        rep.check("oracle_tree", worst["tree"], worst["tree"] < win["oracle_tree_tol"], win["oracle_tree_tol"])
    rep.summary = worst


# loop errors ---------------------------------------------------

_SCALING_COLUMNS = ["W", "L", "E", "eta", "ell", "scale", "mean_err", "max_err", "stderr", "samples"]


def _loop_error_records(cfg, rep):
    sigmas = [parse_sigma(s) for s in (cfg.sigma or ["+-"])]
    recs = []
    for L, E, eta, sigma in product(cfg.L, cfg.E, cfg.eta, sigmas):
        r = dg.loop_vs_k_stats(cfg.W, L, complex(E, eta), sigma, cfg.samples, cfg.seed, cfg.threads, cfg.kappa)
        for p in r.points:
            rep.failures += p.pop("failed")
            rep.records.append(dict(p, sigma=r.sigma))
        recs.append(r)
    return recs


def _compare_k_runner(cfg, rep):
    win = _windows(cfg)
    rep.columns = _SCALING_COLUMNS + ["sigma", "ratio", "t", "eta_t", "ell_z"]
    recs = _loop_error_records(cfg, rep)
    ratios = [p["ratio"] for r in recs for p in r.points]
    ok = all(_in(x, win["loop_ratio"]) for x in ratios)
    rep.check("loop_ratio_window", ratios, ok, win["loop_ratio"])
    rep.summary = {"ratios": ratios}


def _scaling_runner(cfg, rep):
    win = _windows(cfg)
    rep.columns = _SCALING_COLUMNS + ["sigma", "ratio", "t", "eta_t", "ell_z"]
    recs = _loop_error_records(cfg, rep)
    ratios, factors, slopes = [], [], []
    for r in recs:
        pts = sorted(r.points, key=lambda p: p["W"])
        ratios += [p["ratio"] for p in pts]
        for p, q in zip(pts, pts[1:]):
            if q["W"] == 2 * p["W"]:
                factors.append(p["mean_err"] / q["mean_err"])
        slopes.append({"sigma": r.sigma, "slope": r.slope, "fit_residual": r.fit_residual})
    rep.check("loop_ratio_window", ratios, all(_in(x, win["loop_ratio"]) for x in ratios), win["loop_ratio"])
    if factors:
        rep.check("doubling_factor", factors, all(_in(x, win["doubling_factor"]) for x in factors),
                  win["doubling_factor"])
    rep.summary = {"ratios": ratios, "doubling_factors": factors, "fits": slopes}


# local law -----------------------------------------------------

def _locallaw_runner(cfg, rep):
    win = _windows(cfg)
    rep.columns = ["W", "L", "E", "eta", "ell", "ell_z", "entry_scale", "entry_mean", "entry_max", "entry_stderr",
                   "entry_ratio", "partial_scale", "partial_mean", "partial_max", "partial_stderr",
                   "partial_ratio", "samples"]
    fits = []
    for L, E, eta in product(cfg.L, cfg.E, cfg.eta):
        z = complex(E, eta)
        xs, ye, yp = [], [], []
        for W in cfg.W:
            model = build_model(W, L)
            res, fails = dg.map_samples(lambda c, i: dg.local_law_residuals(c, z, cfg.kappa), model, cfg.seed,
                                        cfg.samples, cfg.threads)
            rep.failures += [asdict(f) for f in fails]
            se = dg.summarize([r["entry_max"] for r in res])
            sp = dg.summarize([r["partial_max"] for r in res])
            r0 = res[0]
            rep.records.append({
                "W": W, "L": L, "E": E, "eta": eta, "ell": r0["ell"], "ell_z": r0["ell_z"],
                "entry_scale": r0["entry_scale"], "entry_mean": se["mean"], "entry_max": se["max"],
                "entry_stderr": se["stderr"], "entry_ratio": se["mean"] / r0["entry_scale"],
                "partial_scale": r0["partial_scale"], "partial_mean": sp["mean"], "partial_max": sp["max"],
                "partial_stderr": sp["stderr"], "partial_ratio": sp["mean"] / r0["partial_scale"],
                "samples": se["samples"]})
            xs.append(1.0 / r0["partial_scale"])
            ye.append(se["mean"])
            yp.append(sp["mean"])
        if len(xs) >= 2:
            s1, _, f1 = dg.loglog_fit(xs, ye)
            s2, _, f2 = dg.loglog_fit(xs, yp)
            fits.append({"L": L, "E": E, "eta": eta, "entry_slope": s1, "entry_fit_residual": f1,
                         "partial_slope": s2, "partial_fit_residual": f2})
    if fits:
        es = [f["entry_slope"] for f in fits]
        ps = [f["partial_slope"] for f in fits]
        rep.check("entry_slope", es, all(_in(s, win["entry_slope"]) for s in es), win["entry_slope"])
        rep.check("partial_slope", ps, all(_in(s, win["partial_slope"]) for s in ps), win["partial_slope"])
    rep.summary = {"fits": fits}


# diffusion -----------------------------------------------------

def _diffusion_runner(cfg, rep):
    win = _windows(cfg)
    rep.columns = ["W", "L", "E", "eta", "ell", "kind", "samples", "max_residual", "normalizer", "ratio"]
    checks_ratio, checks_shrink = [], []
    for W, L, E, eta in product(cfg.W, cfg.L, cfg.E, cfg.eta):
        z = complex(E, eta)
        model = build_model(W, L)
        _, _, pt = dg.flow_point(z, L, cfg.kappa)
        norm = (W * pt.ell_t * eta) ** -2 / W

        def per_sample(cache, i):
            return dg.diffusion_matrix(cache, z, "adjoint"), dg.diffusion_matrix(cache, z, "plain")

        res, fails = dg.map_samples(per_sample, model, cfg.seed, cfg.samples, cfg.threads)
        rep.failures += [asdict(f) for f in fails]
        counts = sorted(set(c for c in (cfg.sample_counts or []) if 0 < c < len(res)) | {len(res)})
        for j, kind in enumerate(("adjoint", "plain")):
            pred = dg.diffusion_prediction(z, L, W, kind)
            stack = np.array([r[j] for r in res])
            by_k = {}
            for k in counts:
                R = stack[:k].mean(axis=0) - pred
                by_k[k] = float(np.abs(R).max())
                rep.records.append({"W": W, "L": L, "E": E, "eta": eta, "ell": pt.ell_t, "kind": kind,
                                    "samples": k, "max_residual": by_k[k], "normalizer": norm,
                                    "ratio": by_k[k] / norm})
            if kind == "adjoint":
                checks_ratio.append(by_k[counts[-1]] / norm)
                if len(counts) >= 2:
                    k0, k1 = counts[0], counts[-1]
                    # observed shrink over the K^{-1/2} prediction
                    checks_shrink.append((by_k[k0] / by_k[k1]) / math.sqrt(k1 / k0))
    rep.check("diffusion_ratio", checks_ratio, all(r <= win["diffusion_ratio_max"] for r in checks_ratio),
              win["diffusion_ratio_max"])
    if checks_shrink:
        f = win["diffusion_shrink_factor"]
        rep.check("diffusion_shrink", checks_shrink, all(1 / f <= s <= f for s in checks_shrink), [1 / f, f])
    rep.summary = {"ratios": checks_ratio, "shrink_vs_prediction": checks_shrink}


# spectrum ------------------------------------------------------

def _spectrum_runner(cfg, rep):
    win = _windows(cfg)
    rep.columns = ["W", "L", "N", "samples", "sup_max", "sup_median", "log_N", "sup_max_over_log",
                   "sup_median_over_log", "que_var_median", "que_var_mean", "que_var_stderr",
                   "window_size_mean", "widen_max"]
    deloc_ok = True
    for L in cfg.L:
        medians = []
        for W in cfg.W:
            model = build_model(W, L)
            E0 = cfg.E[0] if cfg.E else 0.0

            def per_sample(cache, i):
                st = dg.eigenvector_stats(cache, cfg.kappa, E0)
                return st.sup_norm[st.bulk], dg.que_variance(st, L), st.window.size, st.widen

            res, fails = dg.map_samples(per_sample, model, cfg.seed, cfg.samples, cfg.threads)
            rep.failures += [asdict(f) for f in fails]
            sup = np.concatenate([r[0] for r in res])
            qv = dg.summarize([r[1] for r in res])
            logN = math.log(model.N)
            rec = {"W": W, "L": L, "N": model.N, "samples": len(res), "sup_max": float(sup.max()),
                   "sup_median": float(np.median(sup)), "log_N": logN,
                   "sup_max_over_log": float(sup.max()) / logN, "sup_median_over_log": float(np.median(sup)) / logN,
                   "que_var_median": qv["median"], "que_var_mean": qv["mean"], "que_var_stderr": qv["stderr"],
                   "window_size_mean": float(np.mean([r[2] for r in res])),
                   "widen_max": float(max(r[3] for r in res))}
            rep.records.append(rec)
            deloc_ok &= rec["sup_max_over_log"] <= win["deloc_max_log"]
            deloc_ok &= rec["sup_median_over_log"] <= win["deloc_median_log"]
            medians.append(qv["median"])
        if len(medians) >= 2:
            dec = all(b < a for a, b in zip(medians, medians[1:]))
            rep.check(f"que_decreasing_L{L}", medians, dec, "strict decrease in W")
    rep.check("delocalization", [[r["sup_max_over_log"], r["sup_median_over_log"]] for r in rep.records], deloc_ok,
              [win["deloc_max_log"], win["deloc_median_log"]])
    rep.summary = {"records": len(rep.records)}


# sample loops --------------------------------------------------

def _sample_loops_runner(cfg, rep):
    rep.columns = ["W", "L", "E", "eta", "t", "sigma", "a", "mean_re", "mean_im", "stderr_re", "stderr_im",
                   "K_re", "K_im", "samples"]
    sigmas = [parse_sigma(s) for s in (cfg.sigma or ["+-"])]
    for W, L, E, eta in product(cfg.W, cfg.L, cfg.E, cfg.eta):
        model = build_model(W, L)
        Ef, t, pt = dg.flow_point(complex(E, eta), L, cfg.kappa)
        specs = []
        for s in sigmas:
            words = [tuple(x - 1 for x in w) for w in cfg.a if len(w) == len(s)] or [(0,) * len(s)]
            specs += [LoopSpec(s, w).validate(L) for w in words]

        def per_sample(cache, i):
            ct = cache.scaled(t)
            return [g_loop(ct, pt, sp) for sp in specs]

        res, fails = dg.map_samples(per_sample, model, cfg.seed, cfg.samples, cfg.threads)
        rep.failures += [asdict(f) for f in fails]
        vals = np.array(res)
        for j, sp in enumerate(specs):
            v = vals[:, j]
            k = v.size
            se = (lambda x: float(x.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan)
            K = k_loop(model, t, sp.sigma, sp.a, Ef)
            rep.records.append({"W": W, "L": L, "E": E, "eta": eta, "t": t, "sigma": format_sigma(sp.sigma),
                                "a": " ".join(str(x + 1) for x in sp.a), "mean_re": float(v.real.mean()),
                                "mean_im": float(v.imag.mean()), "stderr_re": se(v.real), "stderr_im": se(v.imag),
                                "K_re": K.real, "K_im": K.imag, "samples": k})


_RUNNERS = {
    "ward": _ward_runner,
    "sumzero": _sumzero_runner,
    "oracle": _oracle_runner,
    "compare-k": _compare_k_runner,
    "scaling": _scaling_runner,
    "locallaw": _locallaw_runner,
    "diffusion": _diffusion_runner,
    "spectrum": _spectrum_runner,
    "sample-loops": _sample_loops_runner,
}
