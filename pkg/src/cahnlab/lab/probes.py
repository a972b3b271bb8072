"""Analytic probes: nonlocal Poincare constants, difference quotients, gradient control."""

from __future__ import annotations

import math

import numpy as np

from ..dynamics import Trajectory
from ..jko import ProbeReport
from ..mollifier import DiscreteKernel, build_kernel
from ..operators import ponce_spectral_array
from ..torus import PeriodicGrid, random_band_limited, shift_array, spectral_gradient_array


def poincare_corpus(grid: PeriodicGrid, size: int, seed: int) -> list[np.ndarray]:
    """Random band-limited fields with nonzero mean."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(size):
        kmax = 1 + i % 4
        mean = rng.uniform(0.2, 2.0) * rng.choice([-1.0, 1.0])
        out.append(random_band_limited(grid, rng, kmax=kmax, amplitude=1.0, mean=mean).values)
    return out


def _poincare_constants(k: DiscreteKernel, delta: float, corpus, gradient: bool) -> np.ndarray:
    g = k.grid
    hd = g.cell_volume
    out = []
    for f in corpus:
        l1 = hd * float(np.sum(np.abs(f)))
        if gradient:
            comps = spectral_gradient_array(f, g)
            lhs = hd * sum(float(np.sum(c * c)) for c in comps)
            pair = sum(ponce_spectral_array(k, c) for c in comps)
        else:
            lhs = hd * float(np.sum(f * f))
            pair = ponce_spectral_array(k, f)
        out.append((lhs - delta * pair) / l1**2)
    return np.array(out)


def poincare_constant(k: DiscreteKernel, delta: float, corpus, gradient: bool = False) -> float:
    """Smallest C making the inequality hold on every corpus member (0 if none needs it)."""
    return max(0.0, float(np.max(_poincare_constants(k, delta, corpus, gradient))))


def poincare_probe(
    k: DiscreteKernel,
    delta: float,
    corpus_size: int = 64,
    seed: int = 0,
    gradient: bool = False,
    stability_rtol: float = 0.1,
) -> ProbeReport:
    """Empirical C(delta) at eps and at eps/2.

    The inequality is meant to hold uniformly for small eps, so the probe
    passes when halving eps does not raise the constant by more than
    ``stability_rtol`` (relative).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    corpus = poincare_corpus(k.grid, corpus_size, seed)
    c_eps = poincare_constant(k, delta, corpus, gradient)
    values = {"delta": delta, "eps": k.eps, "C": c_eps}
    half = k.eps / 2
    if half > 2 * k.grid.h:
        k_half = build_kernel(k.spec, half, k.grid)
        c_half = poincare_constant(k_half, delta, corpus, gradient)
        growth = (c_half - c_eps) / max(c_eps, 1e-300) if c_half > c_eps else 0.0
        values.update({"C_half_eps": c_half, "relative_growth": growth})
        stable = growth <= stability_rtol
        note = ""
    else:
        stable = True
        note = "eps/2 not resolved on this grid; stability not checked"
    name = "poincare_gradient" if gradient else "poincare"
    return ProbeReport(name, values, passed=stable, note=note)


def gradient_control_defect(traj: Trajectory, k: DiscreteKernel, delta: float, c_grad: float) -> float:
    """max_t of |grad u|^2 - delta P(grad u) - C |u|_1^2 over both species (<= 0 when controlled)."""
    g = k.grid
    hd = g.cell_volume
    worst = -math.inf
    for s in traj.states:
        for u in (s.rho.values, s.eta.values):
            comps = spectral_gradient_array(u, g)
            lhs = hd * sum(float(np.sum(c * c)) for c in comps)
            pair = sum(ponce_spectral_array(k, c) for c in comps)
            l1 = hd * float(np.sum(np.abs(u)))
            worst = max(worst, lhs - delta * pair - c_grad * l1**2)
    return worst


def _pick_offsets(k: DiscreteKernel, max_offsets: int):
    idx = k.index_offsets
    w = k.weights
    nz = np.any(idx != 0, axis=1)
    idx, w = idx[nz], w[nz]
    if len(w) > max_offsets:
        sel = np.linspace(0, len(w) - 1, max_offsets).round().astype(int)
        idx, w = idx[sel], w[sel]
    return idx * k.grid.h / k.eps, w / w.sum()


def diff_quotient_probe(
    traj: Trajectory,
    k: DiscreteKernel,
    factors=(1.0, 0.5, 0.25, 0.125),
    max_offsets: int = 12,
    max_states: int = 6,
    pairing_rtol: float = 0.02,
) -> ProbeReport:
    """Strong and weak convergence of difference quotients along a trajectory.

    For unit-scale offsets z (kernel offsets divided by eps) and scales
    e = factor * eps:
      strong: || (u(x - e z) - u(x)) / e + grad u . z ||, L2 in x, weighted mean in z, L2 in t
      weak:   < phi(z) (grad eta(x) - grad eta(x - e z)) / e, psi >  vs  < phi(z) D^2 eta z, psi >
    with phi(z) = z_1 and psi(x) = 1 + cos(2 pi x_1).
    """
    g = k.grid
    hd = g.cell_volume
    z, wz = _pick_offsets(k, max_offsets)
    stride = max(1, (len(traj.states) - 1) // max(1, max_states - 1))
    states = traj.states[::stride]
    times = np.array([s.time for s in states])
    scales = [f * k.eps for f in factors]
    psi = 1.0 + np.cos(2 * np.pi * g.coords()[0])
    phi = z[:, 0]

    strong = []
    pair_num, pair_ref = np.zeros(len(scales)), 0.0
    for e in scales:
        per_t = []
        for s in states:
            acc = 0.0
            for u in (s.rho.values, s.eta.values):
                grad = spectral_gradient_array(u, g)
                for zj, wj in zip(z, wz):
                    q = (shift_array(u, g, e * zj) - u) / e + sum(c * zc for c, zc in zip(grad, zj))
                    acc += wj * hd * float(np.sum(q * q))
            per_t.append(acc)
        per_t = np.array(per_t)
        total = float(np.trapezoid(per_t, times)) if len(times) > 1 else float(per_t[0])
        strong.append(math.sqrt(total))

    # weak pairing on the last recorded state (eta, first component)
    eta = states[-1].eta.values
    grad = spectral_gradient_array(eta, g)
    hess = [spectral_gradient_array(c, g) for c in grad]
    for zj, wj, ph in zip(z, wz, phi):
        d2z = sum(hess[0][b] * zj[b] for b in range(g.dim))
        pair_ref += wj * ph * hd * float(np.sum(d2z * psi))
    for i, e in enumerate(scales):
        for zj, wj, ph in zip(z, wz, phi):
            q = (grad[0] - shift_array(grad[0], g, e * zj)) / e
            pair_num[i] += wj * ph * hd * float(np.sum(q * psi))

    strong = np.array(strong)
    if np.all(strong > 0) and len(scales) > 1:
        slope = float(np.polyfit(np.log(scales), np.log(strong), 1)[0])
    else:
        slope = float("nan")
    if abs(pair_ref) > 0:
        pair_err = np.abs(pair_num - pair_ref) / abs(pair_ref)
    else:
        pair_err = np.abs(pair_num)
    values = {
        "scales": scales,
        "strong_error": strong.tolist(),
        "strong_slope": slope,
        "pairing": pair_num.tolist(),
        "pairing_reference": pair_ref,
        "pairing_relative_error": pair_err.tolist(),
    }
    trivial = float(np.max(strong)) == 0.0
    passed = trivial or (slope >= 0.9 and float(pair_err[-1]) <= pairing_rtol)
    return ProbeReport("diff_quotient", values, passed)
