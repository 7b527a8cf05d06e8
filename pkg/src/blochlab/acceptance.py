"""Acceptance suite: one pass/fail result per criterion, built on the experiment presets."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .experiments import Outcome, load_config, run


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name} ({self.runtime:.1f} s): {self.detail}"


_PRESET_RUNS: dict[tuple, Outcome] = {}


def _preset(name: str, tol_scale: float = 1.0, workers: int = 1) -> Outcome:
    # criteria 6-8 share one k-operator run
    key = (name, tol_scale, workers)
    if key not in _PRESET_RUNS:
        _PRESET_RUNS[key] = run(load_config(name), workers=workers, tol_scale=tol_scale)
    return _PRESET_RUNS[key]


def _from_checks(number, name, checks, runtime, keep=lambda c: True):
    sel = [c for c in checks if keep(c)]
    failed = [c for c in sel if not c.passed]
    shown = failed if failed else sel
    if len(shown) > 4:
        shown = shown[:2] + shown[-2:]      # the fit checks come last
    detail = "; ".join(f"{c.name}: {c.detail}" for c in shown)
    return CriterionResult(number, name, not failed, detail, runtime)


def criterion_1(tol_scale=1.0, workers=1):
    from .freefermion import fermi_current, odd_filling, remainder_constant
    configs = [(101, 1 / 3, math.pi / 2), (501, 1 / 3, math.pi / 2), (1001, 1 / 5, 1.0)]
    consts = {(rho, phi): remainder_constant(phi, rho, range(100, 2001)) for _, rho, phi in configs}
    t0 = time.perf_counter()
    rows = [(L, fermi_current(L, phi, odd_filling(L, rho), rho=rho), consts[(rho, phi)])
            for L, rho, phi in configs]
    elapsed = time.perf_counter() - t0
    ok = [abs(fc.remainder) <= 5 * c / L ** 2 * tol_scale for L, fc, c in rows]
    detail = ", ".join(f"L={L}: |r|L^2={abs(fc.remainder) * L * L:.3f} (c={c:.3f})" for L, fc, c in rows)
    return CriterionResult(1, "mesoscopic ring closed form", all(ok) and elapsed < 1.0,
                           f"{detail}; evaluation {elapsed * 1e3:.1f} ms", elapsed)


def criterion_2(tol_scale=1.0, workers=1):
    from .freefermion import mode_current, mode_current_fd
    t0 = time.perf_counter()
    phi = 1.0
    steps = (1e-2, 5e-3)
    worst_ratio = 0.0
    errs = {h: 0.0 for h in steps}
    for L in range(2, 65):
        k = np.arange(L)
        exact = mode_current(L, phi, k)
        third = 2.0 / L ** 3          # max |d^3 E_k / d phi^3|
        for h in steps:
            err = np.abs(mode_current_fd(L, phi, k, h) - exact).max()
            errs[h] = max(errs[h], err)
            # truncation h^2 |E'''|/6 plus rounding of two evaluations with |E| <= 2
            rounding = 2 * np.finfo(float).eps * 2 / h
            worst_ratio = max(worst_ratio, err / (h * h * third / 6 + rounding))
    order = math.log(errs[steps[0]] / errs[steps[1]]) / math.log(steps[0] / steps[1])
    elapsed = time.perf_counter() - t0
    ok = worst_ratio <= 1.0 * tol_scale and order >= 1.9 and elapsed < 1.0
    return CriterionResult(2, "mode current identity", ok,
                           f"max err / error bound = {worst_ratio:.3f}, order {order:.3f}", elapsed)


def criterion_3(tol_scale=1.0, workers=1):
    out = _preset("gapless-1d", tol_scale, workers)
    return _from_checks(3, "gapless 1D Bloch bound", out.checks, out.runtime)


def criterion_4(tol_scale=1.0, workers=1):
    out = _preset("thermal-1d", tol_scale, workers)
    return _from_checks(4, "thermal Bloch bound", out.checks, out.runtime)


def criterion_5(tol_scale=1.0, workers=1):
    out = _preset("gapped-1d", tol_scale, workers)
    r = _from_checks(5, "gapped superpolynomial decay", out.checks, out.runtime)
    quad = [row["value"] for row in out.series.rows if row["quantity"] == "quadratic_runtime_s"][0]
    r.passed = r.passed and quad < 10.0
    r.detail += f"; quadratic sweep {quad:.2f} s"
    return r


def criterion_6(tol_scale=1.0, workers=1):
    out = _preset("k-operator", tol_scale, workers)
    keys = ("[K,P]", "[Q_bar,P]", "off-gap")
    return _from_checks(6, "K-operator exactness", out.checks, out.runtime,
                        lambda c: c.name.startswith(keys))


def criterion_7(tol_scale=1.0, workers=1):
    out = _preset("k-operator", tol_scale, workers)
    return _from_checks(7, "K locality", out.checks, 0.0, lambda c: c.name.startswith("||[K_-"))


def criterion_8(tol_scale=1.0, workers=1):
    out = _preset("k-operator", tol_scale, workers)
    return _from_checks(8, "proof-line decomposition", out.checks, 0.0,
                        lambda c: c.name.startswith("proof-line"))


def criterion_9(tol_scale=1.0, workers=1):
    a = _preset("index-bloch", tol_scale, workers)
    b = _preset("pump", tol_scale, workers)
    return _from_checks(9, "index theorem (Bloch and pump pathways)", a.checks + b.checks,
                        a.runtime + b.runtime)


def criterion_10(tol_scale=1.0, workers=1):
    """V = 0 many-body energy, <j> and tr(P J_-) against the quadratic engine."""
    from .freefermion import SingleParticleModel, fermi_sea, single_particle_edge_current
    from .lattice import half_torus
    from .models import build_model
    from .observables import current_density, default_strips, edge_currents
    from .spectral import diagonalize, ground_projector
    t0 = time.perf_counter()
    cases = [("tv_ring", L, N, dict(t_hop=1.0, V=0.0, phi=1.0)) for L in (6, 8, 10, 12) for N in (3, L // 2)]
    cases += [("dimerized_ring", L, L // 2, dict(t1=1.0, t2=t2, phi=1.0, V=0.0))
              for L in (8, 10, 12) for t2 in (0.1, 0.5)]
    worst = 0.0
    compared = 0
    for name, L, N, params in cases:
        model = build_model(name, L, **params)
        spm = SingleParticleModel.from_model(model, N)
        sea = fermi_sea(spm.h, N)
        spec = diagonalize(model.hamiltonian(model.basis(N)), mode="full")
        ground = ground_projector(spec, cluster_tol=1e-10)
        if ground.p != 1 or sea.gap < 1e-8:
            continue        # a degenerate Fermi level has no unique ground state to compare
        dec = edge_currents(model, basis=spec.basis)
        region = half_torus(model.lattice).sites
        J1 = single_particle_edge_current(model, region, default_strips(model)[0].sites)
        pairs = [(ground.energies[0], sea.energy),
                 (ground.trace(current_density(model, spec.basis)).real, sea.expectation(spm.current).real),
                 (ground.trace(dec.J_minus).real, sea.expectation(J1).real)]
        worst = max(worst, max(abs(a - b) for a, b in pairs))
        compared += 1
    elapsed = time.perf_counter() - t0
    return CriterionResult(10, "cross-engine oracle", compared > 0 and worst <= 1e-9 * tol_scale,
                           f"max deviation {worst:.2e} over {compared} of {len(cases)} cases"
                           + ("" if compared == len(cases) else " (others have a degenerate Fermi level)"), elapsed)


def criterion_11(tol_scale=1.0, workers=1):
    """CAR, gauge-average idempotence, sector block structure and the twist identity on n <= 8."""
    from .manybody import (FockBasis, LocalTerm, annihilation_operator, creation_operator, gauge_average,
                           gauge_unitary, realize)
    from .models import build_model
    from .observables import TwistFamily
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    errs = {}
    n = 6
    full = FockBasis(n)
    a = [annihilation_operator(x, full).dense() for x in range(n)]
    ad = [creation_operator(x, full).dense() for x in range(n)]
    eye = np.eye(full.dim)
    car = 0.0
    for x in range(n):
        for y in range(n):
            car = max(car, np.abs(a[x] @ ad[y] + ad[y] @ a[x] - (x == y) * eye).max(),
                      np.abs(a[x] @ a[y] + a[y] @ a[x]).max())
    errs["CAR"] = car
    idem = 0.0
    block = 0.0
    charges = full.charges
    for _ in range(20):
        monos = []
        for _ in range(3):
            k = 2 * int(rng.integers(1, 3))
            sites = rng.choice(n, size=k, replace=False)
            daggers = rng.integers(0, 2, size=k).astype(bool)
            c = complex(rng.normal(), rng.normal())
            monos.append((c, tuple((int(s), bool(d)) for s, d in zip(sites, daggers))))
        term = LocalTerm(tuple(monos), frozenset(s for _, f in monos for s, _ in f))
        g = gauge_average(term)
        gg = gauge_average(g)
        idem = max(idem, np.abs(realize(g, full).dense() - realize(gg, full).dense()).max())
        if g.monomials:
            m = realize(g, full).dense()
            off = charges[:, None] != charges[None, :]
            block = max(block, np.abs(m[off]).max() if off.any() else 0.0)
    errs["gauge average"] = idem
    errs["sector blocks"] = block
    twist = 0.0
    for L in (4, 6, 8):
        model = build_model("tv_ring", L, t_hop=1.0, V=1.3, phi=0.7)
        basis = FockBasis(L)
        U = gauge_unitary([2 * np.pi * x / L for x in range(L)], basis).dense()
        H = model.hamiltonian(basis).dense()
        Ht = TwistFamily(model, basis).hamiltonian(2 * np.pi / L).dense()
        twist = max(twist, np.abs(U.conj().T @ H @ U - Ht).max())
    errs["twist identity"] = twist
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-12 * tol_scale for v in errs.values())
    return CriterionResult(11, "algebra properties", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()),
                           elapsed)


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 12)}


def run_all(only=None, tol_scale: float = 1.0, workers: int = 1, out_dir: str | None = None):
    results = []
    for k in sorted(only or CRITERIA):
        t0 = time.perf_counter()
        res = CRITERIA[k](tol_scale, workers)
        if res.runtime == 0.0:
            res.runtime = time.perf_counter() - t0
        results.append(res)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for (name, *_), outcome in _PRESET_RUNS.items():
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
                outcome.series.to_csv(fh)
    return results
