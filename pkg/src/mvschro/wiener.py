"""Delay-line convolution algebra for the cutoff resolvent family.

The frequency cutoff eta(lam/L) turns the oscillating kernel family into a
rho-line kernel K_L(rho)[j, k] = L w_j ceta(L(rho + r_jk))/(4 pi r_jk) whose
rho-marginal is exactly |w_j|/(4 pi r_jk).  This module computes the algebra
norm of that kernel, its tail beyond a delay radius, the translation modulus
of its N-th convolution power, and packages the five quantities the uniform
inversion argument needs.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial.distance import cdist

from .measures import DiscreteMeasure, kato_norm
from .propagator import triangle_cutoff
from .resolvent import SpectralParameter, assemble_bs_matrix
from .spectral import SpectralScan, embedded_scan


def fejer_ceta(rho) -> np.ndarray:
    """Inverse transform of the triangle window under the convention
    ceta(rho) = (1/2pi) int e^{i lam rho} eta(lam) dlam: the Fejer kernel
    (1/2pi)(sin(rho/2)/(rho/2))^2, nonnegative with unit integral."""
    x = np.asarray(rho, dtype=float) / (2.0 * np.pi)
    return np.sinc(x) ** 2 / (2.0 * np.pi)


@dataclass(frozen=True)
class CutoffPair:
    eta: object
    ceta: object
    l1_norm_ceta: float


FEJER_PAIR = CutoffPair(triangle_cutoff, fejer_ceta, 1.0)

# rho-grid margins, in units of 1/L: the Fejer tail beyond u carries mass
# ~ (2/pi)/u, so 700 keeps truncation under 0.1% and 7000 under 1e-4
MARGIN_NORM = 700.0
MARGIN_EXACT = 7000.0


def kernel_K_L(mu: DiscreteMeasure, L: float, rho, j: int, y) -> np.ndarray:
    """rho-line kernel row j against a point source y."""
    y = np.asarray(y, dtype=float).reshape(3)
    r = float(np.linalg.norm(mu.positions[j] - y))
    if r <= 0.0:
        raise ValueError("source point coincides with the target atom")
    rho = np.asarray(rho, dtype=float)
    return L * mu.weights[j] * fejer_ceta(L * (rho + r)) / (4.0 * np.pi * r)


def _rho_span(mu: DiscreteMeasure) -> float:
    """Orientation-independent bound on the atom delays: twice the largest
    distance to the centroid.  The grid extents must not move under rigid
    motions, or the truncated Fejer tail breaks the norm's invariance."""
    c = mu.positions.mean(axis=0)
    return 2.0 * float(np.max(np.linalg.norm(mu.positions - c[None, :], axis=1)))


def default_rho_grid(mu: DiscreteMeasure, L: float, margin: float = MARGIN_NORM) -> np.ndarray:
    """Uniform grid at spacing 1/(8L) covering [-span - margin/L, margin/L]."""
    h = 1.0 / (8.0 * L)
    lo = -_rho_span(mu) - margin / L
    hi = margin / L
    n = int(np.ceil((hi - lo) / h)) + 1
    return lo + h * np.arange(n)


def _validate_grid(mu: DiscreteMeasure, L: float, grid: np.ndarray) -> float:
    h = float(np.max(np.diff(grid)))
    if h > (1.0 / (8.0 * L)) * (1 + 1e-9):
        raise ValueError(f"rho grid spacing {h:.3g} coarser than 1/(8L)")
    if grid[0] > -_rho_span(mu) - 10.0 / L + 1e-12 or grid[-1] < 10.0 / L - 1e-12:
        raise ValueError("rho grid must cover [-span - 10/L, +10/L]")
    return h


def probe_sources(mu: DiscreteMeasure, count: int = 32) -> np.ndarray:
    """Deterministic off-atom source points: atoms pushed 1.5 panel radii
    away from the weighted centroid.  Purely geometric, so every estimate
    built on them is exactly covariant under rigid motions."""
    w = np.abs(mu.weights)
    center = (w[:, None] * mu.positions).sum(axis=0) / max(w.sum(), 1e-300)
    out_dir = mu.positions - center[None, :]
    nrm = np.linalg.norm(out_dir, axis=1)
    out_dir[nrm < 1e-12] = (1.0, 0.0, 0.0)
    nrm = np.maximum(nrm, 1e-12)
    pts = mu.positions + 1.5 * mu.panel_radii[:, None] * out_dir / nrm[:, None]
    stride = max(1, mu.n_atoms // count)
    pts = pts[::stride][:count]
    # keep sources clear of every panel; a fully-shielded measure keeps all
    d = cdist(pts, mu.positions) / mu.panel_radii[None, :]
    clear = np.min(d, axis=1) >= 1.0 - 1e-9
    return pts[clear] if np.any(clear) else pts


def _column_profiles(mu: DiscreteMeasure, L: float, grid: np.ndarray, source: np.ndarray) -> np.ndarray:
    """(n_atoms, n_grid) rho-kernel column against one source point."""
    r = np.linalg.norm(mu.positions - source[None, :], axis=1)
    if np.any(r <= 0.0):
        raise ValueError("source point coincides with an atom")
    arg = L * (grid[None, :] + r[:, None])
    return (L * mu.weights / (4.0 * np.pi * r))[:, None] * fejer_ceta(arg)


def w_norm_estimate(mu: DiscreteMeasure, L: float, rho_grid=None, sources=None) -> float:
    """Algebra norm of the cutoff kernel: max over unit sources of the
    rho-integral of the absolute column sum.  Asserts the closed-form bound
    kato_norm/(4 pi) (the rho-marginal is exact and ceta has unit mass)."""
    if rho_grid is None:
        rho_grid = default_rho_grid(mu, L)
    rho_grid = np.asarray(rho_grid, dtype=float)
    h = _validate_grid(mu, L, rho_grid)
    if sources is None:
        sources = probe_sources(mu)
    best = 0.0
    for src in np.asarray(sources, dtype=float).reshape(-1, 3):
        prof = _column_profiles(mu, L, rho_grid, src)
        best = max(best, float(h * np.sum(np.abs(prof))))
    bound = FEJER_PAIR.l1_norm_ceta * kato_norm(mu) / (4.0 * np.pi)
    if best > bound * (1 + 1e-6):
        raise AssertionError(f"w norm {best:.6g} exceeds the marginal bound {bound:.6g}")
    return best


def tail_norm(mu: DiscreteMeasure, L: float, R: float, sources=None) -> float:
    """Same integral as w_norm_estimate restricted to |rho| >= R."""
    if R < 2.0:
        raise ValueError("tail radius must be at least 2")
    h = 1.0 / (8.0 * L)
    lo = -_rho_span(mu) - max(MARGIN_NORM / L, R + 10.0 / L)
    hi = max(MARGIN_NORM / L, R + 10.0 / L)
    grid = lo + h * np.arange(int(np.ceil((hi - lo) / h)) + 1)
    mask = np.abs(grid) >= R
    if sources is None:
        sources = probe_sources(mu, count=16)
    worst = 0.0
    for src in np.asarray(sources, dtype=float).reshape(-1, 3):
        prof = np.abs(_column_profiles(mu, L, grid, src))
        worst = max(worst, float(h * np.sum(prof[:, mask])))
    return worst


def select_R(mu: DiscreteMeasure, L: float, K: float, alpha_sup: float, r_max: int = 80) -> float:
    """Smallest integer delay radius R >= 3 with tail_norm <= 1/(K alpha_sup)."""
    target = 1.0 / (K * alpha_sup)
    h = 1.0 / (8.0 * L)
    lo = -_rho_span(mu) - (r_max + MARGIN_NORM / L)
    hi = r_max + MARGIN_NORM / L
    grid = lo + h * np.arange(int(np.ceil((hi - lo) / h)) + 1)
    sources = probe_sources(mu, count=16)
    # cumulative sums give every candidate R in one pass per source
    r_values = np.arange(3, r_max + 1)
    tails = np.zeros(r_values.size)
    for src in sources:
        prof = np.abs(_column_profiles(mu, L, grid, src)).sum(axis=0)
        csum = np.concatenate([[0.0], np.cumsum(prof)]) * h
        total = csum[-1]
        for i, r in enumerate(r_values):
            inner = np.searchsorted(grid, [-r, r])
            kept = total - (csum[inner[1]] - csum[inner[0]])
            tails[i] = max(tails[i], kept)
    ok = np.nonzero(tails <= target)[0]
    if ok.size == 0:
        need = L * tails[-1] / target
        raise ValueError(
            f"tail target {target:.3g} unreachable at cutoff {L}; needs cutoff >= ~{need:.0f}"
        )
    return float(r_values[ok[0]])


# ---------------------------------------------------------------------------
# convolution powers and the translation modulus
# ---------------------------------------------------------------------------

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _diag_profile(mu: DiscreteMeasure, L: float, grid: np.ndarray) -> np.ndarray:
    """(n_atoms, n_grid) diagonal rho-kernel: the flat-disc mean of shifted
    Fejer profiles over each panel, w/(2 pi rho_p^2) int_0^{rho_p} Lceta ds."""
    rho_p = mu.panel_radii
    s = 0.5 * rho_p[:, None] * (_GAUSS_NODES[None, :] + 1.0)  # (n, 8)
    wgt = 0.5 * rho_p[:, None] * _GAUSS_WEIGHTS[None, :]
    vals = np.zeros((mu.n_atoms, grid.size))
    for g in range(_GAUSS_NODES.size):
        vals += wgt[:, g : g + 1] * L * fejer_ceta(L * (grid[None, :] + s[:, g : g + 1]))
    return (mu.weights / (2.0 * np.pi * rho_p**2))[:, None] * vals


def _apply_kernel(mu: DiscreteMeasure, L: float, grid: np.ndarray, col: np.ndarray,
                  base: np.ndarray, base_half: int, dists: np.ndarray,
                  diag_cache: dict) -> np.ndarray:
    """One rho-convolution of the matrix kernel with a column: for each pair
    the shifted base profile rides the scalar convolution q_k = base * col_k,
    gathered at rho + r_jk by linear interpolation; the diagonal panel term
    convolves against its own disc-mean profile."""
    h = grid[1] - grid[0]
    n, m = col.shape
    q = fftconvolve(col, base[None, :], axes=1)[:, base_half : base_half + m] * h
    out = np.zeros_like(col)
    pos = dists / h
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    pad = np.concatenate([q, np.zeros((n, int(np.max(i0)) + 2))], axis=1)
    idx = np.arange(m)
    for k in range(n):
        w_col = mu.weights / (4.0 * np.pi * np.maximum(dists[:, k], 1e-300))
        take0 = pad[k][idx[None, :] + i0[:, k][:, None]]
        take1 = pad[k][idx[None, :] + i0[:, k][:, None] + 1]
        gathered = take0 * (1.0 - frac[:, k][:, None]) + take1 * frac[:, k][:, None]
        gathered[k] = 0.0  # panel self-interaction handled below
        out += w_col[:, None] * gathered
    if "prof" not in diag_cache:
        half = int(np.ceil(MARGIN_NORM / (L * h)))
        supp = h * np.arange(-half, half + 1)
        diag_cache["prof"] = _diag_profile(mu, L, supp)
        diag_cache["half"] = half
    dp, half = diag_cache["prof"], diag_cache["half"]
    for k in range(n):
        out[k] += fftconvolve(col[k], dp[k])[half : half + m] * h
    return out


def _power_columns(mu: DiscreteMeasure, L: float, N: int, n_sources: int = 4,
                   h: float | None = None):
    """Columns of the N-th convolution power against a few probe sources.
    Returns (grid, list of (n_atoms, n_grid) arrays)."""
    if mu.n_atoms > 256:
        raise ValueError("convolution powers are a desk-scale check: n_atoms <= 256")
    if h is None:
        h = 1.0 / (8.0 * L)
    pad = 60.0 / L
    lo = -N * (_rho_span(mu) + pad) - pad
    hi = N * pad + pad
    grid = lo + h * np.arange(int(np.ceil((hi - lo) / h)) + 1)
    base_half = int(np.ceil(MARGIN_NORM / (L * h)))
    base = L * fejer_ceta(L * h * np.arange(-base_half, base_half + 1))
    dists = cdist(mu.positions, mu.positions)
    np.fill_diagonal(dists, 0.0)
    cols = []
    cache = {}
    for src in probe_sources(mu, count=n_sources):
        c = _column_profiles(mu, L, grid, src)
        for _ in range(N - 1):
            c = _apply_kernel(mu, L, grid, c, base, base_half, dists, cache)
        cols.append(c)
    return grid, cols


def _shift_modulus(grid: np.ndarray, cols, delta: float) -> float:
    """W-norm of P(.) - P(. - delta), delta rounded to the grid."""
    h = grid[1] - grid[0]
    k = int(round(delta / h))
    if k == 0:
        return 0.0
    worst = 0.0
    for c in cols:
        shifted = np.zeros_like(c)
        shifted[:, k:] = c[:, :-k]
        worst = max(worst, float(h * np.sum(np.abs(c - shifted))))
    return worst


def translation_modulus(mu: DiscreteMeasure, L: float, delta: float, N: int,
                        n_sources: int = 4) -> float:
    """W-norm modulus of continuity of the N-th power at shift delta.

    The internal grid refines to delta/4 when the shift is finer than the
    default 1/(8L) spacing, so the rounded shift stays within 12.5% of the
    requested one; shifts too small to grid affordably are rejected."""
    if delta == 0.0:
        return 0.0
    if not (0.0 < delta < 1.0):
        raise ValueError("shift must lie in (0, 1)")
    h = min(1.0 / (8.0 * L), delta / 4.0)
    span = N * (_rho_span(mu) + 120.0 / L) + 120.0 / L
    if span / h > 4e6:
        raise ValueError(f"grid spacing {h:.3g} cannot resolve shift {delta:.3g}")
    grid, cols = _power_columns(mu, L, N, n_sources, h=h)
    return _shift_modulus(grid, cols, delta)


# ---------------------------------------------------------------------------
# transform consistency and the five-parameter report
# ---------------------------------------------------------------------------


def fourier_transform_check(mu: DiscreteMeasure, L: float, lam_probe: float,
                            margin: float = MARGIN_EXACT, oversample: float = 1.0) -> float:
    """Transform the rho-kernel at lam_probe and compare entrywise against
    eta(lam/L) times the frequency-domain matrix; relative deviation over
    entries above 1e-8, absolute deviation below.

    oversample scales the grid density; fractions coarsen the grid, which is
    how the refinement-order property is observed."""
    if mu.n_atoms > 256:
        raise ValueError("transform check is a desk-scale check: n_atoms <= 256")
    if oversample <= 0:
        raise ValueError("oversample must be positive")
    h = 1.0 / (8.0 * L * oversample)
    lo_edge = -_rho_span(mu) - margin / L
    grid = lo_edge + h * np.arange(int(np.ceil((margin / L - lo_edge) / h)) + 1)
    dists = cdist(mu.positions, mu.positions)
    np.fill_diagonal(dists, 1.0)  # placeholder; diagonal handled separately
    coef = mu.weights[:, None] / (4.0 * np.pi * dists)
    got = np.zeros((mu.n_atoms, mu.n_atoms), dtype=complex)
    chunk = max(8, int(1e7 // (mu.n_atoms * mu.n_atoms)))
    for lo in range(0, grid.size, chunk):
        g = grid[lo : lo + chunk]
        phase = np.exp(-1j * lam_probe * g) * h
        block = fejer_ceta(L * (g[None, None, :] + dists[:, :, None]))
        got += L * coef * np.einsum("jkr,r->jk", block, phase)
    dprof = _diag_profile(mu, L, grid)
    got[np.diag_indices(mu.n_atoms)] = dprof @ (np.exp(-1j * lam_probe * grid) * h)
    ref = float(triangle_cutoff(np.array(lam_probe / L))) * assemble_bs_matrix(
        mu, SpectralParameter.real(abs(lam_probe))
    ).entries
    if lam_probe < 0:
        ref = np.conj(ref)
    dev = np.abs(got - ref)
    big = np.abs(ref) > 1e-8
    worst = float(np.max(dev[~big])) if np.any(~big) else 0.0
    if np.any(big):
        worst = max(worst, float(np.max(dev[big] / np.abs(ref[big]))))
    return worst


@dataclass(frozen=True)
class WienerParameters:
    w_norm: float
    alpha_sup: float
    R: float
    N: int
    delta: float
    K: float
    L: float
    eps_fit: float

    def __post_init__(self):
        vals = (self.w_norm, self.alpha_sup, self.R, self.N, self.delta, self.K, self.L,
                self.eps_fit)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError("every reported parameter must be positive and finite")

    def to_json_dict(self) -> dict:
        return {
            "w_norm": self.w_norm,
            "alpha_sup": self.alpha_sup,
            "R": self.R,
            "N": self.N,
            "delta": self.delta,
            "K": self.K,
            "L": self.L,
            "eps_fit": self.eps_fit,
        }


def smoothing_power(eps_fit: float) -> int:
    """Smallest integer N with (N - 1) eps_fit > 2."""
    if eps_fit <= 0:
        raise ValueError("decay rate must be positive")
    n = 2
    while (n - 1) * eps_fit <= 2.0:
        n += 1
    return n


def parameter_report(mu: DiscreteMeasure, L: float, lam_grid, eps_fit: float,
                     K: float = 8.0, scan: SpectralScan | None = None) -> WienerParameters:
    """Assemble the five uniform-inversion parameters at cutoff L.

    alpha_sup comes from the positive-energy scan (resolvent inverse in the
    measure norm), R from the tail rule 1/(K alpha), N from the decay rate,
    delta as the largest grid shift keeping the N-th power's translation
    modulus under 3/K."""
    w_norm = w_norm_estimate(mu, L)
    if scan is None:
        scan = embedded_scan(mu, lam_grid)
    alpha_sup = float(np.max(scan.inv_norm_tv))
    if not np.isfinite(alpha_sup):
        raise ArithmeticError("inverse norm diverges on the scan grid: resonance present")
    r_sel = select_R(mu, L, K, alpha_sup)
    n_pow = smoothing_power(eps_fit)
    grid, cols = _power_columns(mu, L, n_pow)
    h = 1.0 / (8.0 * L)
    target = 3.0 / K
    k_lo, k_hi = 0, int(8.0 * L) - 1  # delta = k h < 1
    if _shift_modulus(grid, cols, h) > target:
        raise ArithmeticError(f"translation modulus exceeds {target:.3g} at the smallest shift")
    while k_hi - k_lo > 1:
        mid = (k_lo + k_hi) // 2
        if _shift_modulus(grid, cols, mid * h) <= target:
            k_lo = mid
        else:
            k_hi = mid
    if _shift_modulus(grid, cols, k_hi * h) <= target:
        k_lo = k_hi
    return WienerParameters(w_norm, alpha_sup, float(r_sel), n_pow, k_lo * h, K, L, eps_fit)
