"""Discrete signed measures in R^3.

A measure is a finite cloud of weighted atoms, each standing for a panel of
effective radius rho.  Everything downstream (Birman-Schwinger assembly,
Kato norms, dimension profiles) consumes this representation.  Singular
kernel factors 1/|x-y| are regularized inside a panel by the exact flat-disc
average 2/rho, which keeps suprema finite and refinement-convergent.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DiscreteMeasure",
    "DimensionProfile",
    "make_shell_measure",
    "make_ball_measure",
    "make_cantor_measure",
    "total_variation",
    "kato_norm",
    "local_kato_modulus",
    "local_kato_majorant",
    "dimension_profile",
    "dimension_kato_bound_check",
    "averaged_measure",
    "form_bound_probe",
    "translated",
    "combined",
    "save_measure",
    "load_measure",
    "measure_hash",
]

CANTOR_ATOM_BUDGET = 300_000


@dataclass
class DiscreteMeasure:
    """Signed atomic measure sum_j w_j delta_{x_j} with panel radii rho_j."""

    positions: np.ndarray  # (n, 3)
    weights: np.ndarray  # (n,) signed
    panel_radii: np.ndarray  # (n,) positive
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.panel_radii = np.asarray(self.panel_radii, dtype=float).reshape(-1)
        n = self.positions.shape[0]
        if n < 1:
            raise ValueError("measure needs at least one atom")
        if self.weights.shape != (n,) or self.panel_radii.shape != (n,):
            raise ValueError("atom field lengths disagree")
        if not (
            np.all(np.isfinite(self.positions))
            and np.all(np.isfinite(self.weights))
            and np.all(np.isfinite(self.panel_radii))
        ):
            raise ValueError("non-finite atom data")
        if np.any(self.panel_radii <= 0):
            raise ValueError("panel radii must be positive")

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def diameter(self) -> float:
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(
            self.positions.copy(), self.weights * factor, self.panel_radii.copy(), dict(self.meta)
        )


@dataclass
class DimensionProfile:
    """Max ball mass sup_x |mu|(B(x, r)) sampled on a radius grid, with the
    log-log fit mass ~ C r^alpha."""

    radii: np.ndarray
    max_ball_mass: np.ndarray
    alpha_est: float
    c_est: float

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.max_ball_mass = np.asarray(self.max_ball_mass, dtype=float)
        if np.any(np.diff(self.max_ball_mass) < -1e-12):
            raise ValueError("ball mass must be nondecreasing in r")

    def envelope_constant(self) -> float:
        """Smallest C such that mass(r) <= C r^alpha on the sampled radii."""
        return float(np.max(self.max_ball_mass / self.radii**self.alpha_est))


def make_shell_measure(radius: float, coupling: float, n_panels: int) -> DiscreteMeasure:
    """Quasi-uniform sphere sampling via the golden-angle generalized spiral.

    Each atom carries weight coupling * 4 pi radius^2 / n and a panel radius
    fixed by area tiling, pi rho^2 = 4 pi radius^2 / n.
    """
    if not (np.isfinite(radius) and radius > 0 and np.isfinite(coupling)):
        raise ValueError("non-finite or nonpositive shell parameters")
    if n_panels < 1:
        raise ValueError("need at least one panel")
    k = np.arange(n_panels)
    z = 1.0 - (2.0 * k + 1.0) / n_panels
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    pts = radius * np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    w = np.full(n_panels, coupling * 4.0 * np.pi * radius * radius / n_panels)
    rho = np.full(n_panels, 2.0 * radius / np.sqrt(n_panels))
    meta = {"kind": "shell", "radius": radius, "coupling": coupling, "n_panels": n_panels}
    return DiscreteMeasure(pts, w, rho, meta)


def make_ball_measure(
    radius: float, total_mass: float, n_atoms: int, seed: int = 0
) -> DiscreteMeasure:
    """Uniform ball sample: n seeded points, equal weights, volume-tiling rho."""
    if radius <= 0 or n_atoms < 1:
        raise ValueError("bad ball parameters")
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n_atoms, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    pts *= radius * rng.uniform(size=(n_atoms, 1)) ** (1.0 / 3.0)
    w = np.full(n_atoms, total_mass / n_atoms)
    rho = np.full(n_atoms, radius * (1.0 / n_atoms) ** (1.0 / 3.0))
    meta = {"kind": "ball", "radius": radius, "total_mass": total_mass, "n_atoms": n_atoms, "seed": seed}
    return DiscreteMeasure(pts, w, rho, meta)


def make_cantor_measure(contraction: float, depth: int, total_mass: float) -> DiscreteMeasure:
    """Corner-Cantor product set in [0,1]^3: eight similitudes of ratio s.

    Atoms sit at cell centers of level `depth`, equal weights, panel radius
    s^depth / 2.  Similarity dimension 3 log 2 / log(1/s).
    """
    s = float(contraction)
    if not 0 < s <= 0.5:
        raise ValueError("contraction must lie in (0, 1/2] (cells must not overlap)")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if 8**depth > CANTOR_ATOM_BUDGET:
        raise ValueError(f"8^{depth} atoms exceed the budget of {CANTOR_ATOM_BUDGET}")
    corners = np.array([[i, j, k] for i in (0.0, 1.0) for j in (0.0, 1.0) for k in (0.0, 1.0)])
    pts = np.zeros((1, 3))
    for level in range(depth):
        offs = corners * (1.0 - s) * s**level
        pts = (pts[:, None, :] + offs[None, :, :]).reshape(-1, 3)
    pts = pts + s**depth / 2.0
    n = pts.shape[0]
    w = np.full(n, total_mass / n)
    rho = np.full(n, s**depth / 2.0)
    meta = {"kind": "cantor", "contraction": s, "depth": depth, "total_mass": total_mass}
    return DiscreteMeasure(pts, w, rho, meta)


def total_variation(mu: DiscreteMeasure) -> float:
    return float(np.sum(np.abs(mu.weights)))


def translated(mu: DiscreteMeasure, shift) -> DiscreteMeasure:
    shift = np.asarray(shift, dtype=float).reshape(3)
    return DiscreteMeasure(mu.positions + shift, mu.weights.copy(), mu.panel_radii.copy(), dict(mu.meta))


def combined(mu_a: DiscreteMeasure, mu_b: DiscreteMeasure) -> DiscreteMeasure:
    return DiscreteMeasure(
        np.vstack([mu_a.positions, mu_b.positions]),
        np.concatenate([mu_a.weights, mu_b.weights]),
        np.concatenate([mu_a.panel_radii, mu_b.panel_radii]),
        {"kind": "union"},
    )


def _kato_values(
    mu: DiscreteMeasure, probes: np.ndarray, r_cut: float | None = None, clearance: bool = False
):
    """sum_j |w_j| k_reg(|x_j - y|, rho_j) per probe y; k_reg = 1/r outside the
    panel, the flat-disc average 2/rho inside.  Chunked over probes.

    With clearance=True also returns min_j |x_j - y|/rho_j per probe, the
    panel-overlap indicator used to keep search points out of the zone where
    several caps stack (values there reflect panel-scale corrugation of the
    discretization, not the potential the measure represents).
    """
    probes = np.asarray(probes, dtype=float).reshape(-1, 3)
    absw = np.abs(mu.weights)
    rho = mu.panel_radii
    out = np.empty(probes.shape[0])
    clear = np.empty(probes.shape[0])
    chunk = max(1, int(4e6 // max(mu.n_atoms, 1)))
    for lo in range(0, probes.shape[0], chunk):
        block = probes[lo : lo + chunk]
        d = np.linalg.norm(block[:, None, :] - mu.positions[None, :, :], axis=2)
        reg = np.where(d >= rho[None, :], 1.0 / np.maximum(d, 1e-300), 2.0 / rho[None, :])
        if r_cut is not None:
            reg = np.where(d < r_cut, reg, 0.0)
        out[lo : lo + chunk] = reg @ absw
        if clearance:
            clear[lo : lo + chunk] = np.min(d / rho[None, :], axis=1)
    return (out, clear) if clearance else out


def _default_probes(mu: DiscreteMeasure, seed: int, n_jitter: int) -> np.ndarray:
    """Atom positions plus jittered neighbors at 1..2 panel radii, keeping only
    jitters clear of every other panel (sub-panel overlap zones are noise)."""
    rng = np.random.default_rng(seed)
    blocks = [mu.positions]
    for _ in range(n_jitter):
        u = rng.normal(size=(mu.n_atoms, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        scale = mu.panel_radii * rng.uniform(1.0, 2.0, size=mu.n_atoms)
        cand = mu.positions + scale[:, None] * u
        _, clear = _kato_values(mu, cand, clearance=True)
        blocks.append(cand[clear >= 1.0])
    return np.vstack(blocks)


def _pattern_search(fun, start: np.ndarray, step0: float, iters: int = 40) -> float:
    """Local pattern search maximizing fun over R^3.  fun returns (values,
    clearance); moves into clearance < 1 (inside some panel) are rejected,
    but the starting value stands even if the start is on an atom."""
    best_x = start.copy()
    best = fun(best_x[None, :])[0][0]
    step = step0
    dirs = np.vstack([np.eye(3), -np.eye(3)])
    for _ in range(iters):
        cand = best_x[None, :] + step * dirs
        vals, clear = fun(cand)
        vals = np.where(clear >= 1.0, vals, -np.inf)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best = vals[k]
            best_x = cand[k]
        else:
            step *= 0.5
            if step < 1e-9 * max(step0, 1e-12):
                break
    return float(best)


def kato_norm(
    mu: DiscreteMeasure,
    probes: np.ndarray | None = None,
    seed: int = 0,
    n_jitter: int = 2,
    refine: bool = True,
) -> float:
    """Global Kato norm sup_y sum_j |w_j| k_reg(|x_j - y|, rho_j).

    The supremum is probed at atom positions plus jittered neighbors (the
    maxima of Newtonian potentials of surface measures sit on or near the
    support) and then sharpened by a local pattern search.  The search stays
    out of multi-panel overlap zones, where the capped kernel stacks and
    overstates the represented potential by a few percent.
    """
    if probes is None:
        probes = _default_probes(mu, seed, n_jitter)
    probes = np.asarray(probes, dtype=float).reshape(-1, 3)
    if probes.shape[0] == 0:
        raise ValueError("empty probe grid")
    vals = _kato_values(mu, probes)
    best = float(np.max(vals))
    if refine:
        start = probes[int(np.argmax(vals))]
        step0 = float(np.median(mu.panel_radii))
        fun = lambda p: _kato_values(mu, p, clearance=True)
        best = max(best, _pattern_search(fun, start, step0))
    return best


def local_kato_modulus(
    mu: DiscreteMeasure,
    r: float,
    probes: np.ndarray | None = None,
    seed: int = 0,
    n_jitter: int = 2,
    refine: bool = True,
) -> float:
    """Truncated Kato norm: only atoms within distance r of the probe count."""
    if r <= 0:
        raise ValueError("truncation radius must be positive")
    if probes is None:
        probes = _default_probes(mu, seed, n_jitter)
    probes = np.asarray(probes, dtype=float).reshape(-1, 3)
    if probes.shape[0] == 0:
        raise ValueError("empty probe grid")
    vals = _kato_values(mu, probes, r_cut=r)
    best = float(np.max(vals))
    if refine:
        start = probes[int(np.argmax(vals))]
        step0 = float(np.median(mu.panel_radii))
        fun = lambda p: _kato_values(mu, p, r_cut=r, clearance=True)
        best = max(best, _pattern_search(fun, start, step0))
    return best


def dimension_profile(
    mu: DiscreteMeasure,
    radii,
    n_probes: int = 256,
    n_jitter: int = 1,
    seed: int = 0,
) -> DimensionProfile:
    """Max ball mass over probe centers per radius, with a log-log fit.

    Radii must span at least 1.5 decades and stay above twice the largest
    panel radius; below panel scale the cloud is atomic and would bias the
    fit toward alpha = 0.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    if radii.size < 3:
        raise ValueError("need at least 3 radii")
    if radii[-1] / radii[0] < 10**1.5 * (1 - 1e-12):
        raise ValueError("radii must span at least 1.5 decades")
    if radii[0] < 2.0 * float(np.max(mu.panel_radii)):
        raise ValueError("smallest radius must be >= 2x max panel radius")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(mu.n_atoms)[: min(n_probes, mu.n_atoms)]
    blocks = [mu.positions[idx]]
    for _ in range(n_jitter):
        u = rng.normal(size=(idx.size, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        u *= rng.uniform(size=(idx.size, 1)) ** (1.0 / 3.0)
        blocks.append(mu.positions[idx] + mu.panel_radii[idx][:, None] * u)
    probes = np.vstack(blocks)

    absw = np.abs(mu.weights)
    best = np.zeros(radii.size)
    chunk = max(1, int(4e6 // max(mu.n_atoms, 1)))
    for lo in range(0, probes.shape[0], chunk):
        block = probes[lo : lo + chunk]
        d = np.linalg.norm(block[:, None, :] - mu.positions[None, :, :], axis=2)
        for i, r in enumerate(radii):
            masses = (d < r) @ absw
            m = float(np.max(masses))
            if m > best[i]:
                best[i] = m
    coeffs = np.polyfit(np.log(radii), np.log(np.maximum(best, 1e-300)), 1)
    return DimensionProfile(radii, best, float(coeffs[0]), float(np.exp(coeffs[1])))


def _dyadic_majorant(c: float, alpha: float, m_prime: int) -> float:
    """sum_{k>=0} 2^{-k} min(c 2^{alpha k}, c 2^{alpha m_prime}), exactly."""
    if alpha <= 1.0:
        raise ValueError("dimension hypothesis violated: alpha must exceed 1")
    head = sum(2.0 ** ((alpha - 1.0) * k) for k in range(m_prime))
    tail = 2.0 ** (alpha * m_prime) * 2.0 ** (1 - m_prime)
    return c * (head + tail)


def dimension_kato_bound_check(mu: DiscreteMeasure, profile: DimensionProfile, m_exp: int) -> dict:
    """Compare the measured Kato norm against the dyadic majorant implied by
    the ball-mass growth law.

    The majorant uses the envelope constant (smallest C with mass <= C r^alpha
    on the sampled radii) rather than the least-squares constant, so the
    premise of the bound actually holds on the data.  m_exp is the dyadic
    support exponent: supp mu inside B(0, 2^m_exp).
    """
    if float(np.max(np.linalg.norm(mu.positions, axis=1))) > 2.0**m_exp * (1 + 1e-12):
        raise ValueError("support not contained in B(0, 2^m_exp)")
    c_env = profile.envelope_constant()
    majorant = _dyadic_majorant(c_env, profile.alpha_est, m_exp + 2)
    measured = kato_norm(mu)
    return {
        "kato_norm": measured,
        "majorant": majorant,
        "alpha": profile.alpha_est,
        "c_envelope": c_env,
        "passed": bool(measured <= majorant),
    }


def local_kato_majorant(profile: DimensionProfile, r: float) -> float:
    """Dyadic-shell bound for the truncated Kato integral at radius r:
    2C sum_{k >= k0} 2^{(1-alpha) k} with 2^{-k0} the first dyadic scale
    covering r.  Uses the envelope constant."""
    alpha = profile.alpha_est
    if alpha <= 1.0:
        raise ValueError("dimension hypothesis violated: alpha must exceed 1")
    c_env = profile.envelope_constant()
    k0 = math.floor(-math.log2(r))
    ratio = 2.0 ** (1.0 - alpha)
    return 2.0 * c_env * ratio**k0 / (1.0 - ratio)


def averaged_measure(mu: DiscreteMeasure, r: float, eval_points) -> np.ndarray:
    """Ball averages V^r(x) = r^{-3} mu(B(x, r)), with the sup bound
    sup |V^r| <= r^{-2} kato_norm asserted on the way out."""
    if r <= 0:
        raise ValueError("averaging radius must be positive")
    if r <= 2.0 * float(np.max(mu.panel_radii)):
        raise ValueError("averaging radius must exceed 2x max panel radius")
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 3)
    out = np.empty(pts.shape[0])
    chunk = max(1, int(4e6 // max(mu.n_atoms, 1)))
    for lo in range(0, pts.shape[0], chunk):
        block = pts[lo : lo + chunk]
        d = np.linalg.norm(block[:, None, :] - mu.positions[None, :, :], axis=2)
        out[lo : lo + chunk] = ((d < r) @ mu.weights) / r**3
    bound = kato_norm(mu) / r**2 * (1.0 + 1e-6)
    if np.max(np.abs(out)) > bound:
        raise AssertionError(f"averaged-measure bound violated: {np.max(np.abs(out))} > {bound}")
    return out


def form_bound_probe(mu: DiscreteMeasure, test_family: list[dict], r: float) -> tuple[float, float]:
    """Smallest (a, b) with int |phi|^2 d|V| <= a ||grad phi||^2 + b ||phi||^2
    over a Gaussian test family, on the line b = r^{-2} kato_norm.

    Each family entry is a dict with keys center, sigma, amplitude.  Gaussian
    Dirichlet and mass norms are closed forms.  The family must span widths
    from below r/4 to above 4x the support diameter, otherwise the probe
    cannot see both the concentration and the spread regime.
    """
    if not test_family:
        raise ValueError("empty test family")
    sigmas = [float(rec["sigma"]) for rec in test_family]
    if min(sigmas) > r / 4.0 or max(sigmas) < 4.0 * mu.diameter():
        raise ValueError("test family widths must span r/4 .. 4*diameter")
    b = kato_norm(mu) / r**2
    absw = np.abs(mu.weights)
    a_needed = 0.0
    for rec in test_family:
        c = np.asarray(rec["center"], dtype=float).reshape(3)
        sig = float(rec["sigma"])
        amp = float(rec["amplitude"])
        d2 = np.sum((mu.positions - c[None, :]) ** 2, axis=1)
        q_v = float(np.sum(absw * amp**2 * np.exp(-d2 / sig**2)))
        l2 = amp**2 * np.pi**1.5 * sig**3
        dirichlet = 1.5 / sig**2 * l2
        a_needed = max(a_needed, (q_v - b * l2) / dirichlet)
    return max(a_needed, 0.0), b


# ---------------------------------------------------------------------------
# Serialization: {"atoms": [{"x": [...], "w": ..., "rho": ...}], "meta": {...}}
# ---------------------------------------------------------------------------


def _measure_doc(mu: DiscreteMeasure) -> dict:
    atoms = [
        {"x": [float(v) for v in x], "w": float(w), "rho": float(r)}
        for x, w, r in zip(mu.positions, mu.weights, mu.panel_radii)
    ]
    return {"atoms": atoms, "meta": mu.meta}


def save_measure(mu: DiscreteMeasure, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_measure_doc(mu), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _reject_constant(token: str):
    raise ValueError(f"non-finite value {token!r} in measure file")


def load_measure(path: str) -> DiscreteMeasure:
    with open(path) as fh:
        doc = json.load(fh, parse_constant=_reject_constant)
    atoms = doc["atoms"]
    pts = np.array([a["x"] for a in atoms], dtype=float)
    w = np.array([a["w"] for a in atoms], dtype=float)
    rho = np.array([a["rho"] for a in atoms], dtype=float)
    return DiscreteMeasure(pts, w, rho, doc.get("meta", {}))


def measure_hash(mu: DiscreteMeasure) -> str:
    payload = json.dumps(_measure_doc(mu), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]
