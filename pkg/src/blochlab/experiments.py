"""Experiment presets, YAML configs, scaling fits, CSV output and the command line."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import yaml

from .errors import (BlochLabError, ConfigInvalid, InsufficientPoints, NonPositiveValues,
                     UnknownExperiment)
from .models import build_model

CSV_HEADER = ["experiment", "L", "quantity", "value", "gap", "p", "residual", "seed"]


# -- fits ----------------------------------------------------------------------

@dataclass
class DecayFit:
    exponent: float          # power law: value ~ prefactor * L^exponent
    prefactor: float
    r2_power: float
    rate: float              # exponential: value ~ A exp(-rate L)
    r2_exp: float
    aic_power: float
    aic_exp: float
    local_slopes: np.ndarray = field(repr=False)   # d log v / d log L between neighbours
    L: np.ndarray = field(repr=False)

    @property
    def preferred(self) -> str:
        return "exponential" if self.aic_exp < self.aic_power else "power"


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1 - rss / tss if tss > 0 else 1.0
    return coef, rss, r2


def _aic(rss, n, k=2):
    return n * math.log(max(rss, 1e-300) / n) + 2 * k


def fit_decay(L, values) -> DecayFit:
    """Least-squares power-law and exponential fits of |values| against L."""
    L = np.asarray(L, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(L) < 4:
        raise InsufficientPoints("decay fits need at least 4 points")
    if np.any(v <= 0):
        raise NonPositiveValues("decay fits need positive values")
    y = np.log(v)
    (b, a), rss_p, r2_p = _linfit(np.log(L), y)
    (k, c), rss_e, r2_e = _linfit(L, y)
    n = len(L)
    slopes = np.diff(y) / np.diff(np.log(L))
    return DecayFit(float(b), float(math.exp(a)), r2_p, float(-k), r2_e,
                    _aic(rss_p, n), _aic(rss_e, n), slopes, L)


def fit_power_grouped(L, values, groups) -> tuple[float, dict, float]:
    """Common exponent, one prefactor per group, in log-log coordinates.

    Returns (exponent, {group: prefactor}, R^2).
    """
    L = np.asarray(L, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        raise NonPositiveValues("power fits need positive values")
    keys = sorted(set(groups))
    if len(L) < len(keys) + 1:
        raise InsufficientPoints("not enough points for a grouped fit")
    A = np.zeros((len(L), 1 + len(keys)))
    A[:, 0] = np.log(L)
    for i, g in enumerate(groups):
        A[i, 1 + keys.index(g)] = 1.0
    y = np.log(v)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1 - float(resid @ resid) / tss if tss > 0 else 1.0
    return float(coef[0]), {g: float(math.exp(coef[1 + i])) for i, g in enumerate(keys)}, r2


# -- results -----------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ScalingSeries:
    experiment: str
    seed: int = 0
    rows: list[dict] = field(default_factory=list)
    fits: dict[str, Any] = field(default_factory=dict)

    def add(self, L, quantity, value, gap=None, p=None, residual=None):
        self.rows.append(dict(experiment=self.experiment, L=L, quantity=quantity, value=value,
                              gap=gap, p=p, residual=residual, seed=self.seed))

    def values(self, quantity):
        rows = [r for r in self.rows if r["quantity"] == quantity and r["L"] is not None]
        return np.array([r["L"] for r in rows]), np.array([r["value"] for r in rows], dtype=float)

    def rank_changes(self) -> list[tuple]:
        """(quantity, L, p_before, p_after) wherever a series' ground-space rank changes with L."""
        ranks: dict[str, dict] = {}
        for r in self.rows:
            if r["L"] is not None and r["p"] is not None:
                ranks.setdefault(r["quantity"], {})[r["L"]] = r["p"]
        out = []
        for q, by_L in ranks.items():
            Ls = sorted(by_L)
            out += [(q, b, by_L[a], by_L[b]) for a, b in zip(Ls, Ls[1:]) if by_L[a] != by_L[b]]
        return out

    def to_csv(self, fh=None) -> str:
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in CSV_HEADER])
        return out.getvalue() if fh is None else ""


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


@dataclass
class Outcome:
    series: ScalingSeries
    checks: list[Check]
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


# -- configuration -------------------------------------------------------------

PRESETS: dict[str, dict] = {
    "mesoscopic-ring": dict(
        configs=[[101, 1 / 3, math.pi / 2], [501, 1 / 3, math.pi / 2], [1001, 1 / 5, 1.0]],
        sweep=[100, 2000], fit_L=[100, 200, 400, 800, 1600], fit_rho=1 / 3, fit_phi=math.pi / 2,
        tolerances=dict(remainder_factor=5.0, exponent_min=-1.1, exponent_max=-0.9)),
    "gapless-1d": dict(
        model="tv_ring", params=dict(t_hop=1.0, V=1.0, phi=1.0), L=[8, 10, 12, 14], filling="half",
        tolerances=dict(exponent_min=-1.3, exponent_max=-0.7)),
    "thermal-1d": dict(
        model="tv_ring", params=dict(t_hop=1.0, V=1.0, phi=1.0), L=[8, 10, 12], filling="half", beta=2.0,
        tolerances=dict(exponent_min=-1.3, exponent_max=-0.7)),
    "gapped-1d": dict(
        model="dimerized_ring", params=dict(t1=1.0, t2=0.5, phi=1.0), L=list(range(20, 401, 20)),
        interacting=dict(L=[8, 10, 12, 14], V_gapped=4.0, V_gapless=1.0, rank=2),
        tolerances=dict(local_slope_max=-3.0, slope_beyond=100)),
    "torus-gapped": dict(
        model="torus_hopping", params=dict(t_hop=1.0, phi=1.0, mu_pattern=4.0), L=[3, 4], filling="half",
        tolerances=dict(ratio_max=0.1)),
    "k-operator": dict(
        model="dimerized_ring", params=dict(t1=1.0, t2=0.1, phi=1.0), L=[8, 10, 12], filling="half",
        filter="linear", strip_width=1, time_domain_L=8,
        tolerances=dict(commutator=1e-9, offgap=1e-12, time_domain=1e-6, decay_drop=1e3)),
    "index-bloch": dict(
        model="dimerized_ring", params=dict(t1=1.0, t2=0.1, phi=1.0), L=[10], filling="half",
        times=[round(0.1 * k, 10) for k in range(1, 11)],
        tolerances=dict(distance=1e-5)),
    "pump": dict(
        L=60, filling=30, cycle=dict(t0=1.0, delta=0.5, stagger=1.0), trivial_offset=0.8, n_steps=200,
        tolerances=dict(integer=1e-3, trivial=1e-3)),
}

_KNOWN_KEYS = {"experiment", "model", "params", "L", "filling", "flux", "tolerances", "output", "seed",
               "workers", "beta", "configs", "sweep", "fit_L", "fit_rho", "fit_phi", "interacting",
               "filter", "strip_width", "time_domain_L", "times", "cycle", "trivial_offset", "n_steps"}


@dataclass
class ExperimentConfig:
    experiment: str
    settings: dict
    output: str | None = None
    seed: int = 0
    workers: int = 1

    def __getitem__(self, key):
        return self.settings[key]

    def get(self, key, default=None):
        return self.settings.get(key, default)

    @property
    def tolerances(self) -> dict:
        return self.settings.get("tolerances", {})


def _line_index(text: str) -> dict[str, int]:
    """Top-level (and one nested level) key -> 1-based line number."""
    lines = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            lines[k.value] = k.start_mark.line + 1
            if isinstance(v, yaml.MappingNode):
                for k2, _ in v.value:
                    lines[f"{k.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def parse_config(text: str) -> ExperimentConfig:
    """Parse a YAML experiment config and merge it over its preset."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigInvalid(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                            line=None if mark is None else mark.line + 1) from exc
    lines = _line_index(text)
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping", line=1)
    name = raw.get("experiment")
    if name is None:
        raise ConfigInvalid("missing experiment name", field="experiment")
    if name not in PRESETS:
        raise UnknownExperiment(f"unknown experiment {name!r}; known: {sorted(PRESETS)}")
    for key in raw:
        if key not in _KNOWN_KEYS:
            raise ConfigInvalid(f"unknown key {key!r}", field=key, line=lines.get(key))
    settings = {k: v for k, v in PRESETS[name].items()}
    for key, val in raw.items():
        if key in ("params", "tolerances", "interacting", "cycle") and isinstance(val, dict):
            settings[key] = {**settings.get(key, {}), **val}
        elif key not in ("experiment", "output", "seed", "workers"):
            settings[key] = val
    _validate(name, settings, lines)
    try:
        seed = int(raw.get("seed", 0))
        workers = int(raw.get("workers", 1))
    except (TypeError, ValueError) as exc:
        bad = "seed" if not str(raw.get("seed", 0)).lstrip("-").isdigit() else "workers"
        raise ConfigInvalid(f"{bad} must be an integer", field=bad, line=lines.get(bad)) from exc
    if workers < 1:
        raise ConfigInvalid("workers must be >= 1", field="workers", line=lines.get("workers"))
    return ExperimentConfig(name, settings, raw.get("output"), seed, workers)


def _validate(name, settings, lines):
    L = settings.get("L")
    if isinstance(L, list):
        if not L or not all(isinstance(x, int) and x >= 2 for x in L):
            raise ConfigInvalid("L must be a list of integers >= 2", field="L", line=lines.get("L"))
        if L != sorted(L):
            raise ConfigInvalid("L list must be sorted ascending", field="L", line=lines.get("L"))
    elif L is not None and not isinstance(L, int):
        raise ConfigInvalid("L must be an integer or a list", field="L", line=lines.get("L"))
    if "model" in settings:
        try:
            probe_L = (L[0] if isinstance(L, list) else L) or 4
            build_model(settings["model"], probe_L, **_model_params(settings))
        except KeyError as exc:
            raise ConfigInvalid(str(exc), field="model", line=lines.get("model")) from exc
        except TypeError as exc:
            raise ConfigInvalid(f"bad model parameters: {exc}", field="params",
                                line=lines.get("params")) from exc
    filling = settings.get("filling", "half")
    if not (filling == "half" or isinstance(filling, int)):
        raise ConfigInvalid("filling must be 'half' or an integer", field="filling",
                            line=lines.get("filling"))
    for k, v in settings.get("tolerances", {}).items():
        if not isinstance(v, (int, float)):
            raise ConfigInvalid("tolerances must be numbers", field=f"tolerances.{k}",
                                line=lines.get(f"tolerances.{k}"))


def _model_params(settings):
    return dict(settings.get("params", {}))


def load_config(source: str) -> ExperimentConfig:
    """Config from a YAML file path, or a bare preset name."""
    if source in PRESETS:
        return parse_config(f"experiment: {source}\n")
    try:
        with open(source) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from exc
    return parse_config(text)


# -- experiment bodies ---------------------------------------------------------

def _filling(cfg, L, n_sites):
    f = cfg.get("filling", "half")
    return n_sites // 2 if f == "half" else int(f)


def _pool_map(fn, items, workers):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _spectrum(model, N, full_limit=1000, k=4):
    from .spectral import diagonalize
    basis = model.basis(N)
    H = model.hamiltonian(basis)
    mode = "full" if basis.dim <= full_limit else "lowest"
    return diagonalize(H, mode=mode, k=k)


def _tol(cfg, key, scale):
    return cfg.tolerances[key] * scale


def exp_mesoscopic_ring(cfg, series, workers, tol_scale):
    from .freefermion import fermi_current, odd_filling, remainder_constant
    checks = []
    lo, hi = cfg["sweep"]
    factor = cfg.tolerances.get("remainder_factor", 5.0)
    for L, rho, phi in cfg["configs"]:
        N = odd_filling(L, rho)
        fc = fermi_current(L, phi, N, rho=rho)
        c = remainder_constant(phi, rho, range(lo, hi + 1))
        series.add(L, "exact", fc.exact)
        series.add(L, "asymptotic", fc.asymptotic)
        series.add(L, "remainder", fc.remainder)
        series.add(L, "remainder_constant", c)
        ok = abs(fc.remainder) <= factor * c / L ** 2 * tol_scale
        checks.append(Check(f"closed form L={L}", ok,
                            f"|r|={abs(fc.remainder):.3e} vs {factor}c/L^2={factor * c / L ** 2:.3e}"))
    Ls = cfg["fit_L"]
    vals = []
    for L in Ls:
        v = abs(fermi_current(L, cfg["fit_phi"], odd_filling(L, cfg["fit_rho"]), rho=cfg["fit_rho"]).exact)
        series.add(L, "flux_ring_current", v)
        vals.append(v)
    fit = fit_decay(Ls, vals)
    series.fits["flux_ring"] = fit
    series.add(None, "fit_exponent", fit.exponent)
    lo_e, hi_e = cfg.tolerances["exponent_min"], cfg.tolerances["exponent_max"]
    checks.append(Check("flux-ring exponent", lo_e <= fit.exponent <= hi_e, f"exponent {fit.exponent:.4f}"))
    return checks


def exp_gapless_1d(cfg, series, workers, tol_scale):
    from .observables import bloch_bound_1d
    params = _model_params(cfg)

    def point(L):
        model = build_model(cfg["model"], L, **params)
        N = _filling(cfg, L, model.n_sites)
        spec = _spectrum(model, N)
        return L, N, bloch_bound_1d(model, spec)

    results = _pool_map(point, cfg["L"], workers)
    checks = []
    Ls, cur, groups = [], [], []
    for L, N, r in results:
        series.add(L, "current", r.current, r.gap, r.p)
        series.add(L, "bound", r.bound, r.gap, r.p)
        series.add(L, "norm_bound", r.norm_bound, r.gap, r.p)
        checks.append(Check(f"current <= bound L={L}", r.holds, f"{r.current:.4e} <= {r.bound:.4e}"))
        Ls.append(L)
        cur.append(r.current)
        groups.append(N % 2)
    naive = fit_decay(Ls, cur) if len(Ls) >= 4 else None
    if naive is not None:
        series.add(None, "fit_exponent_naive", naive.exponent)
    expo, pref, r2 = fit_power_grouped(Ls, cur, groups)
    series.add(None, "fit_exponent", expo)
    series.fits.update(grouped=(expo, pref, r2), naive=naive)
    lo_e, hi_e = cfg.tolerances["exponent_min"], cfg.tolerances["exponent_max"]
    checks.append(Check("current exponent (common slope, prefactor per particle-number parity)",
                        lo_e <= expo <= hi_e, f"exponent {expo:.3f}"
                        + (f"; single-line fit {naive.exponent:.3f}" if naive else "")))
    return checks


def exp_thermal_1d(cfg, series, workers, tol_scale):
    from .observables import thermal_bloch_bound
    from .spectral import diagonalize
    params = _model_params(cfg)
    beta = float(cfg["beta"])

    def point(L):
        model = build_model(cfg["model"], L, **params)
        N = _filling(cfg, L, model.n_sites)
        spec = diagonalize(model.hamiltonian(model.basis(N)), mode="full")
        return L, thermal_bloch_bound(model, spec, beta)

    checks = []
    Ls, cur, bnd = [], [], []
    for L, r in _pool_map(point, cfg["L"], workers):
        series.add(L, "thermal_current", r.current)
        series.add(L, "thermal_bound", r.bound)
        checks.append(Check(f"|tr(rho j)| <= bound L={L}", r.holds, f"{r.current:.4e} <= {r.bound:.4e}"))
        Ls.append(L)
        cur.append(r.current)
        bnd.append(r.bound)
    (b_exp, _), _, _ = _linfit(np.log(Ls), np.log(bnd))
    (c_exp, _), _, _ = _linfit(np.log(Ls), np.log(cur))
    series.add(None, "bound_exponent", float(b_exp))
    series.add(None, "current_exponent", float(c_exp))
    lo_e, hi_e = cfg.tolerances["exponent_min"], cfg.tolerances["exponent_max"]
    checks.append(Check("bound exponent", lo_e <= b_exp <= hi_e, f"exponent {b_exp:.3f}"))
    checks.append(Check("current decays at least like the bound", c_exp <= hi_e, f"exponent {c_exp:.3f}"))
    return checks


def exp_gapped_1d(cfg, series, workers, tol_scale):
    from .freefermion import dimerized_bloch_current
    from .observables import edge_currents
    from .spectral import ground_projector
    params = _model_params(cfg)
    t0 = time.perf_counter()
    Ls = cfg["L"]
    vals = _pool_map(lambda L: abs(dimerized_bloch_current(L, params.get("t1", 1.0), params.get("t2", 0.5),
                                                           params.get("phi", 1.0),
                                                           params.get("stagger", 0.0))), Ls, workers)
    elapsed = time.perf_counter() - t0
    for L, v in zip(Ls, vals):
        series.add(L, "quadratic_current", v)
    fit = fit_decay(Ls, vals)
    series.fits["quadratic"] = fit
    series.add(None, "fit_exponent", fit.exponent)
    series.add(None, "fit_rate", fit.rate)
    series.add(None, "quadratic_runtime_s", elapsed)
    beyond = cfg.tolerances.get("slope_beyond", 100)
    slopes = [s for s, L in zip(fit.local_slopes, Ls[1:]) if L > beyond]
    worst = max(slopes) if slopes else -math.inf
    checks = [Check("exponential fit preferred", fit.preferred == "exponential",
                    f"AIC exp {fit.aic_exp:.1f} vs power {fit.aic_power:.1f}"),
              Check(f"local power-law slopes beyond L={beyond}", worst < cfg.tolerances["local_slope_max"],
                    f"largest slope {worst:.1f}")]
    inter = cfg.get("interacting")
    if inter:
        base = dict(params)
        worse = []
        for L in inter["L"]:
            row = {}
            for label, V, rank in (("gapped", inter["V_gapped"], inter.get("rank")),
                                   ("gapless", inter["V_gapless"], None)):
                model = build_model("tv_ring", L, t_hop=1.0, V=V, phi=base.get("phi", 1.0))
                spec = _spectrum(model, L // 2)
                ground = ground_projector(spec, rank=rank)
                J = edge_currents(model, basis=spec.basis).J_minus
                val = abs(ground.trace(J).real) / ground.p
                series.add(L, f"{label}_trPJ_over_p", val, ground.gap, ground.p)
                row[label] = val
            if not row["gapped"] < row["gapless"]:
                worse.append(L)
        checks.append(Check("interacting gapped current below gapless series", not worse,
                            f"violations at L={worse}" if worse else "all L"))
    return checks


def exp_torus_gapped(cfg, series, workers, tol_scale):
    from .observables import edge_currents, quasi1d_bound
    params = _model_params(cfg)
    checks = []
    bounds = []
    for L in cfg["L"]:
        model = build_model(cfg["model"], L, **params)
        N = _filling(cfg, L, model.n_sites)
        spec = _spectrum(model, N)
        r = quasi1d_bound(model, spec)
        series.add(L, "slab_current", r.current, r.gap, r.p)
        series.add(L, "slab_bound", r.bound, r.gap, r.p)
        series.add(L, "slab_norm_bound", r.norm_bound, r.gap, r.p)
        bounds.append(r.norm_bound)
        checks.append(Check(f"slab current <= bound L={L}", r.holds, f"{r.current:.3e} <= {r.bound:.3e}"))
        ratio_max = cfg.tolerances["ratio_max"] * tol_scale
        checks.append(Check(f"gapped slab current well below bound L={L}", r.current <= ratio_max * r.bound,
                            f"ratio {r.current / r.bound:.2e}"))
    if len(bounds) > 1:
        checks.append(Check("norm bound does not decay with L (W = L rows)",
                            bounds[-1] >= 0.99 * bounds[0], f"{bounds}"))
    return checks


def exp_k_operator(cfg, series, workers, tol_scale):
    from .lattice import strip
    from .manybody import charge_operator, commutator
    from .quasiadiabatic import (FilterSpec, apply_filter, build_dressed_charge, gapped_bloch_check,
                                 time_domain_filter)
    from .spectral import diagonalize, ground_projector
    params = _model_params(cfg)
    w = int(cfg.get("strip_width", 1))
    tol = cfg.tolerances
    checks = []
    residuals = []
    last = None
    for L in cfg["L"]:
        model = build_model(cfg["model"], L, **params)
        N = _filling(cfg, L, model.n_sites)
        spec = diagonalize(model.hamiltonian(model.basis(N)), mode="full")
        ground = ground_projector(spec)
        filt = FilterSpec(ground.gap, cfg.get("filter", "linear"))
        lat = model.lattice
        dressed = build_dressed_charge(model, spec, strips=(strip(lat, 0, w), strip(lat, L // 2, w)),
                                       filt=filt, ground=ground, decay=(L == cfg["L"][-1]))
        d = dressed.diagnostics
        gb = gapped_bloch_check(model, spec, dressed)
        residuals.append(gb.residual)
        for q in ("qbar_p_commutator", "kp_minus_qp", "offgap_max", "qbar_p_commutator_alt",
                  "k_norm_constant"):
            series.add(L, q, d[q], ground.gap, ground.p)
        series.add(L, "trPJ", gb.trPJ, ground.gap, ground.p, gb.residual)
        series.add(L, "proof_line_residual", gb.residual, ground.gap, ground.p)
        qn = d["q_norm"]
        checks.append(Check(f"[K,P] = [Q,P] L={L}", d["kp_minus_qp"] <= tol["commutator"] * qn * tol_scale,
                            f"{d['kp_minus_qp']:.2e}"))
        checks.append(Check(f"[Q_bar,P] = 0 L={L}", d["qbar_p_commutator"] <= tol["commutator"] * tol_scale,
                            f"{d['qbar_p_commutator']:.2e} (other sign convention {d['qbar_p_commutator_alt']:.2e})"))
        checks.append(Check(f"off-gap K = Q L={L}", d["offgap_max"] <= tol["offgap"] * tol_scale,
                            f"{d['offgap_max']:.2e}"))
        if "decay_minus" in d:
            last = (L, d["decay_minus"])
    mono = all(b < a for a, b in zip(residuals, residuals[1:]))
    checks.append(Check("proof-line residual strictly decreasing in L", mono,
                        " > ".join(f"{r:.2e}" for r in residuals)))
    if last is not None:
        L, table = last
        dist, prof = table.profile()
        for dd, v in zip(dist, prof):
            series.add(L, f"k_minus_commutator_d{dd}", v)
        checks.append(Check(f"||[K_-, q_x]|| monotone beyond distance {2 * w} (L={L})",
                            table.monotone_after(2 * w), " ".join(f"{v:.2e}" for v in prof)))
        checks.append(Check(f"||[K_-, q_x]|| drops by >= {tol['decay_drop']:.0e} (L={L})",
                            table.drop() >= tol["decay_drop"], f"drop {table.drop():.1f}"))
    tdL = cfg.get("time_domain_L")
    if tdL:
        model = build_model(cfg["model"], tdL, **params)
        spec = diagonalize(model.hamiltonian(model.basis(_filling(cfg, tdL, model.n_sites))), mode="full")
        ground = ground_projector(spec)
        Q = charge_operator(range(tdL // 2 + 1), spec.basis)
        A = commutator(model.hamiltonian(spec.basis), Q) * 1j
        smooth = FilterSpec(ground.gap, "smooth")
        td = time_domain_filter(spec, A, smooth)
        dev = float(np.linalg.norm(td.K.dense() - apply_filter(spec, A, smooth).dense(), 2))
        series.add(tdL, "time_domain_deviation", dev, ground.gap, ground.p, td.quadrature_error)
        checks.append(Check(f"time-domain K agrees with spectral K L={tdL}",
                            dev <= tol["time_domain"] * (tdL // 2 + 1) * tol_scale, f"{dev:.2e}"))
    return checks


def exp_index_bloch(cfg, series, workers, tol_scale):
    from .spectral import diagonalize
    from .transport import bloch_sweep
    params = _model_params(cfg)
    checks = []
    for L in cfg["L"]:
        model = build_model(cfg["model"], L, **params)
        spec = diagonalize(model.hamiltonian(model.basis(_filling(cfg, L, model.n_sites))), mode="full")
        sw = bloch_sweep(model, spec, cfg["times"])
        series.add(L, "trPJ", sw.trPJ)
        series.add(L, "max_distance", sw.max_distance)
        series.add(L, "transport_slope", sw.slope)
        checks.append(Check(f"max_t dist(t tr(PJ), Z) L={L}",
                            sw.max_distance <= cfg.tolerances["distance"] * tol_scale,
                            f"{sw.max_distance:.2e}"))
    return checks


def exp_pump(cfg, series, workers, tol_scale):
    from .freefermion import pump, rice_mele_path
    L, N = cfg["L"], cfg["filling"]
    cyc = cfg["cycle"]
    n = int(cfg.get("n_steps", 200))
    runs = {
        "pumped_charge": rice_mele_path(L, **cyc),
        "reversed_charge": rice_mele_path(L, **cyc, reverse=True),
        "trivial_charge": rice_mele_path(L, **cyc, offset=cfg["trivial_offset"]),
    }
    res = dict(zip(runs, _pool_map(lambda k: pump(runs[k], N, n_steps=n), runs, workers)))
    for k, r in res.items():
        series.add(L, k, r.charge, r.min_gap, 1, r.projector_defect)
    tol = cfg.tolerances
    q, qr, q0 = (res[k].charge for k in ("pumped_charge", "reversed_charge", "trivial_charge"))
    return [
        Check("pumped charge is a nonzero integer", abs(round(q)) >= 1 and res["pumped_charge"].distance
              <= tol["integer"] * tol_scale, f"{q:.8f}"),
        Check("reversed cycle flips the sign", abs(q + qr) <= 2 * tol["integer"] * tol_scale, f"{qr:.8f}"),
        Check("trivial cycle transports nothing", abs(q0) <= tol["trivial"] * tol_scale, f"{q0:.2e}"),
    ]


EXPERIMENTS: dict[str, Callable] = {
    "mesoscopic-ring": exp_mesoscopic_ring,
    "gapless-1d": exp_gapless_1d,
    "thermal-1d": exp_thermal_1d,
    "gapped-1d": exp_gapped_1d,
    "torus-gapped": exp_torus_gapped,
    "k-operator": exp_k_operator,
    "index-bloch": exp_index_bloch,
    "pump": exp_pump,
}


def run(config: ExperimentConfig | str, workers: int | None = None, tol_scale: float = 1.0,
        out: str | None = None) -> Outcome:
    """Run one experiment; write its CSV when an output path is known."""
    cfg = load_config(config) if isinstance(config, str) else config
    if cfg.experiment not in EXPERIMENTS:
        raise UnknownExperiment(cfg.experiment)
    series = ScalingSeries(cfg.experiment, cfg.seed)
    t0 = time.perf_counter()
    checks = EXPERIMENTS[cfg.experiment](cfg, series, workers or cfg.workers, tol_scale)
    for q, L, before, after in series.rank_changes():
        warnings.warn(f"{cfg.experiment}: ground-space rank of {q} changes from {before} to {after} at L={L}")
    outcome = Outcome(series, checks, time.perf_counter() - t0)
    path = out or cfg.output
    if path:
        with open(path, "w", newline="") as fh:
            series.to_csv(fh)
    return outcome


# -- command line -------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="blochlab",
                                     description="Persistent-current experiments on lattice fermions.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a YAML config or a preset name")
    p_run.add_argument("config")
    sub.add_parser("list-presets", help="list experiment presets")
    p_acc = sub.add_parser("accept", help="run the acceptance suite")
    p_acc.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    for p in (p_run, p_acc):
        p.add_argument("--out", help="CSV output path (run) or directory (accept)")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--tol-scale", type=float, default=1.0)
    args = parser.parse_args(argv)

    if args.command == "list-presets":
        for name, preset in PRESETS.items():
            summary = ", ".join(f"{k}={v}" for k, v in preset.items() if k in ("model", "L", "params"))
            print(f"{name}: {summary}")
        return 0
    if args.command == "run":
        try:
            outcome = run(args.config, args.workers, args.tol_scale, args.out)
        except BlochLabError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if not (args.out or load_config(args.config).output):
            sys.stdout.write(outcome.series.to_csv())
        for c in outcome.checks:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}", file=sys.stderr)
        return outcome.exit_code
    from .acceptance import run_all
    results = run_all(args.only, tol_scale=args.tol_scale, workers=args.workers or 1, out_dir=args.out)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
