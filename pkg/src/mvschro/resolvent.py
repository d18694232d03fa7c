"""Free-resolvent kernel and Birman-Schwinger matrices on discrete measures.

The kernel of (-lap - (lam + i0)^2)^{-1} in three dimensions is
exp(i lam r)/(4 pi r); on the imaginary axis lam = i kappa it becomes
exp(-kappa r)/(4 pi r).  A discrete measure turns the operator V R0 into the
row-weighted matrix entry[j][k] = w_j * kernel(|x_j - x_k|), with the diagonal
regularized by the exact mean of the kernel over a flat disc of panel radius.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .measures import DiscreteMeasure, measure_hash, total_variation

REAL_KIND = "real_plus_i0"
IMAG_KIND = "imaginary"
DIAG_RULE = "flat-disc-mean"


@dataclass(frozen=True)
class SpectralParameter:
    """Point on the scan contour: lam + i0 on the real axis, or i kappa."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in (REAL_KIND, IMAG_KIND):
            raise ValueError(f"unknown spectral kind {self.kind!r}")
        if not np.isfinite(self.value):
            raise ValueError("spectral value must be finite")
        if self.kind == IMAG_KIND and self.value <= 0:
            raise ValueError("imaginary-axis parameter needs kappa > 0")

    @staticmethod
    def real(lam: float) -> "SpectralParameter":
        return SpectralParameter(REAL_KIND, float(lam))

    @staticmethod
    def bound_side(kappa: float) -> "SpectralParameter":
        return SpectralParameter(IMAG_KIND, float(kappa))

    @property
    def wavenumber(self) -> complex:
        return 1j * self.value if self.kind == IMAG_KIND else complex(self.value)


def kernel_values(param: SpectralParameter, r) -> np.ndarray:
    """exp(i lam r)/(4 pi r) elementwise; r must be positive."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("kernel needs positive separation; use the panel self-term at r=0")
    if param.kind == IMAG_KIND:
        return np.exp(-param.value * r) / (4.0 * np.pi * r) + 0j
    return np.exp(1j * param.value * r) / (4.0 * np.pi * r)


def free_resolvent_kernel(param: SpectralParameter, x, y) -> complex:
    x = np.asarray(x, dtype=float).reshape(3)
    y = np.asarray(y, dtype=float).reshape(3)
    r = float(np.linalg.norm(x - y))
    if r == 0.0:
        raise ValueError("coincident points; use the panel self-term")
    return complex(kernel_values(param, r))


def panel_self_term(param: SpectralParameter, rho) -> np.ndarray:
    """Mean of the kernel over a flat disc of radius rho.

    Closed form (exp(i lam rho) - 1)/(2 pi i lam rho^2), with the lam -> 0
    limit 1/(2 pi rho); on the imaginary axis (1 - exp(-kappa rho))/(2 pi
    kappa rho^2), manifestly real and decaying in kappa.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("panel radius must be positive")
    base = 1.0 / (2.0 * np.pi * rho)
    if param.kind == IMAG_KIND:
        v = param.value * rho
        return base * (-np.expm1(-v)) / v + 0j
    u = param.value * rho
    small = np.abs(u) < 1e-6
    u_safe = np.where(small, 1.0, u)
    full = (np.exp(1j * u_safe) - 1.0) / (1j * u_safe)
    series = 1.0 + 1j * u / 2.0 - u * u / 6.0
    return base * np.where(small, series, full)


@dataclass
class BSMatrix:
    """Row-weighted Birman-Schwinger matrix V R0 on atom coefficient vectors."""

    param: SpectralParameter
    entries: np.ndarray  # complex (n, n)
    diag_rule: str = DIAG_RULE
    source_hash: str = ""

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def _distance_matrix(mu: DiscreteMeasure) -> np.ndarray:
    d = cdist(mu.positions, mu.positions)
    if mu.n_atoms > 1:
        off = d + np.diag(np.full(mu.n_atoms, np.inf))
        if np.min(off) < 1e-12 * max(mu.diameter(), 1.0):
            raise ValueError("coincident distinct atoms; matrix assembly is ill-posed")
    return d


def assemble_bs_matrix(mu: DiscreteMeasure, param: SpectralParameter) -> BSMatrix:
    d = _distance_matrix(mu)
    np.fill_diagonal(d, 1.0)
    kernel = kernel_values(param, d)
    np.fill_diagonal(kernel, panel_self_term(param, mu.panel_radii))
    entries = mu.weights[:, None] * kernel
    return BSMatrix(param, entries, DIAG_RULE, measure_hash(mu))


def export_bs_matrix(bsm: BSMatrix, path: str) -> None:
    """Row-major CSV of interleaved real/imag entries with a provenance header."""
    with open(path, "w") as fh:
        fh.write(f"# param_kind={bsm.param.kind} param_value={bsm.param.value!r}\n")
        fh.write(f"# diag_rule={bsm.diag_rule}\n")
        fh.write(f"# measure_hash={bsm.source_hash}\n")
        for row in bsm.entries:
            fh.write(",".join(f"{v.real:.17g},{v.imag:.17g}" for v in row))
            fh.write("\n")


def apply_resolvent_to_measure(
    param: SpectralParameter, mu: DiscreteMeasure, eval_points, coefficients=None
) -> np.ndarray:
    """(R0 m)(x) = sum_j kernel(x, x_j) m_j; defaults m to the atom weights.

    Points closer than 1e-9 to an atom pick up that atom's panel self-term
    instead of the singular kernel value.
    """
    m = mu.weights if coefficients is None else np.asarray(coefficients)
    if m.shape != (mu.n_atoms,) or not np.all(np.isfinite(m)):
        raise ValueError("coefficient vector must be finite, one entry per atom")
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 3)
    self_terms = panel_self_term(param, mu.panel_radii)
    out = np.empty(pts.shape[0], dtype=complex)
    chunk = max(1, int(4e6 // max(mu.n_atoms, 1)))
    for lo in range(0, pts.shape[0], chunk):
        d = cdist(pts[lo : lo + chunk], mu.positions)
        near = d < 1e-9
        k = kernel_values(param, np.where(near, 1.0, d))
        k = np.where(near, self_terms[None, :], k)
        out[lo : lo + chunk] = k @ m
    return out


def tv_operator_norm(matrix: np.ndarray) -> float:
    """Exact operator norm on atom mass vectors with the TV norm: the max
    column sum of absolute entries."""
    return float(np.max(np.sum(np.abs(matrix), axis=0)))


@dataclass
class ContinuityDefect:
    measured: float  # off-diagonal TV-norm difference
    bound: float  # total_variation * |dlam| / (4 pi)
    diag_defect: float  # diagonal difference, reported separately


def continuity_defect(mu: DiscreteMeasure, lam1: float, lam2: float) -> ContinuityDefect:
    """TV-norm modulus of continuity of the matrix in lam, off-diagonal part
    checked against the Lipschitz bound TV(mu) |lam1 - lam2| / (4 pi)."""
    a1 = assemble_bs_matrix(mu, SpectralParameter.real(lam1)).entries
    a2 = assemble_bs_matrix(mu, SpectralParameter.real(lam2)).entries
    diff = a1 - a2
    diag = np.abs(np.diag(diff))
    np.fill_diagonal(diff, 0.0)
    measured = tv_operator_norm(diff)
    bound = total_variation(mu) * abs(lam1 - lam2) / (4.0 * np.pi)
    if measured > bound * (1.0 + 1e-9):
        raise AssertionError(f"continuity bound violated: {measured} > {bound}")
    return ContinuityDefect(measured, bound, float(np.max(diag)))


def sphere_directions(n: int) -> np.ndarray:
    """Quasi-uniform unit vectors via the golden-angle spiral."""
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def fourier_on_sphere(mu: DiscreteMeasure, lam: float, directions) -> np.ndarray:
    """mu_hat(lam * omega) = sum_j w_j exp(-i lam omega . x_j) per direction."""
    if lam < 0:
        raise ValueError("sphere radius must be nonnegative")
    dirs = np.asarray(directions, dtype=float).reshape(-1, 3)
    phases = np.exp(-1j * lam * (dirs @ mu.positions.T))
    return phases @ mu.weights


def _covariant_frame(mu: DiscreteMeasure) -> np.ndarray:
    """Orthonormal frame built from the atom cloud itself, so that rotating
    the measure rotates the frame identically (keeps quadrature-node layouts,
    hence quadrature errors, exactly invariant under rigid rotation)."""
    center = np.average(mu.positions, axis=0, weights=np.abs(mu.weights) + 1e-300)
    rel = mu.positions - center
    norms = np.linalg.norm(rel, axis=1)
    if np.max(norms) < 1e-12:
        return np.eye(3)
    e1 = rel[int(np.argmax(norms))]
    e1 = e1 / np.linalg.norm(e1)
    rej = rel - np.outer(rel @ e1, e1)
    rn = np.linalg.norm(rej, axis=1)
    if np.max(rn) < 1e-12:
        e2 = np.array([1.0, 0.0, 0.0]) if abs(e1[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e2 = e2 - (e2 @ e1) * e1
    else:
        e2 = rej[int(np.argmax(rn))]
    e2 = e2 / np.linalg.norm(e2)
    return np.column_stack([e1, e2, np.cross(e1, e2)])


def imaginary_pairing_check(mu: DiscreteMeasure, lam: float, n_nodes: int | None = None) -> dict:
    """Im <R0 mu, mu> against lam^{-1} int_{lam S^2} |mu_hat|^2 dS.

    The ratio of the two sides is a universal constant (measured, not
    asserted, since only lam-independence and positivity are structural);
    self-terms are included in the pairing.
    """
    if lam <= 0:
        raise ValueError("pairing check needs lam > 0")
    param = SpectralParameter.real(lam)
    d = _distance_matrix(mu)
    np.fill_diagonal(d, 1.0)
    kernel = kernel_values(param, d)
    np.fill_diagonal(kernel, panel_self_term(param, mu.panel_radii))
    m = mu.weights
    im_pairing = float(np.imag(m @ kernel @ m))
    if n_nodes is None:
        n_nodes = max(400, int(np.ceil(8.0 * (lam * mu.diameter()) ** 2)))
    nodes = sphere_directions(n_nodes) @ _covariant_frame(mu).T
    muhat = fourier_on_sphere(mu, lam, nodes)
    sphere_integral = lam * (4.0 * np.pi / n_nodes) * float(np.sum(np.abs(muhat) ** 2))
    ratio = im_pairing / sphere_integral if sphere_integral > 1e-14 else float("nan")
    return {"im_pairing": im_pairing, "sphere_integral": sphere_integral, "ratio": ratio}


def extension_norm(mu: DiscreteMeasure, r_values, mc_samples: int, seed: int = 0):
    """Monte-Carlo estimate of the L^2(annulus) -> L^2(|V|) extension norm.

    Band-limited test functions live on mc_samples random frequency nodes in
    the annulus R-1 < |xi| < R+1; the norm of coefficients -> inverse-FT
    values on the atoms reduces to a largest singular value.  Returns the
    norm per R and the log-log slope over the R grid.
    """
    if mc_samples < 8:
        raise ValueError("need at least 8 Monte-Carlo samples")
    r_values = np.sort(np.asarray(r_values, dtype=float))
    if r_values[0] <= 1.0:
        raise ValueError("annulus radii must exceed 1")
    if r_values[-1] / r_values[0] < 10.0 * (1 - 1e-12):
        raise ValueError("R grid must span at least one decade")
    rng = np.random.default_rng(seed)
    sqrt_w = np.sqrt(np.abs(mu.weights))
    norms = np.empty(r_values.size)
    for i, rr in enumerate(r_values):
        lo3, hi3 = (rr - 1.0) ** 3, (rr + 1.0) ** 3
        vol = 4.0 * np.pi / 3.0 * (hi3 - lo3)
        u = rng.normal(size=(mc_samples, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = (lo3 + rng.uniform(size=mc_samples) * (hi3 - lo3)) ** (1.0 / 3.0)
        xi = u * rad[:, None]
        mat = sqrt_w[:, None] * np.exp(1j * (mu.positions @ xi.T))
        sigma = np.linalg.svd(mat, compute_uv=False)[0]
        norms[i] = (2.0 * np.pi) ** -3 * np.sqrt(vol / mc_samples) * sigma
    beta_fit = float(np.polyfit(np.log(r_values), np.log(norms), 1)[0])
    return norms, beta_fit
