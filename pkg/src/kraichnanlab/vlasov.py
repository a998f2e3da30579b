"""Limit diffusion matrices in b-space and the Fokker-Planck solver.

The b-diffusion matrix emerging from the vector-advection noise is

    L(b) = (8 pi chi log2 / 15) (2|b|^2 I - b (x) b),

with eigenvalue c_L |b|^2 along b and 2 c_L |b|^2 (doubly) orthogonal to b,
where c_L = 8 pi chi log2 / 15.  Its finite-shell counterpart is the exact
lattice sum

    L^n(b) = chi sum_{n <= |k| <= 2n} ((b.k)^2 / |k|^5) (I - k (x) k / |k|^2).

Both have divergence-free columns, so the weak-form generator acts as
div_b(L grad_b f) = L : hess f.  The evolution law for the value distribution,

    d/dt mu = div_b(L(b) grad_b mu),

is solved on a bounded b-box by a conservative finite-volume scheme with
no-flux boundaries.  Matrix-valued functions here take b with a trailing
component axis (shape (..., 3)) and return (..., 3, 3) arrays.
"""

from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import ConfigurationError, ResolutionError
from .noise import shell_vectors

TWO_PI = 2.0 * np.pi


def diffusion_constant(chi=1.0):
    """c_L = 8 pi chi log2 / 15."""
    return 8.0 * np.pi * chi * np.log(2.0) / 15.0


def moment_growth_rate(chi=1.0):
    """Relative growth rate of int |b|^2 mu: 16 pi chi log2 / 3 = 2 Tr L / |b|^2."""
    return 16.0 * np.pi * chi * np.log(2.0) / 3.0


def L_matrix(b, chi=1.0):
    """Closed-form limit diffusion matrix; positive semidefinite, L(0) = 0."""
    b = np.asarray(b, dtype=np.float64)
    c_l = diffusion_constant(chi)
    b2 = np.sum(b * b, axis=-1)
    eye = np.eye(3)
    return c_l * (2.0 * b2[..., None, None] * eye - b[..., :, None] * b[..., None, :])


def A_matrix(b, chi=1.0):
    """Symmetric PSD square root of L: A(b) A(b) = L(b).

    A = sqrt(c_L)|b| P_b + sqrt(2 c_L)|b| (I - P_b); zero at b = 0 by
    continuity (and non-differentiable there).  Lipschitz with linear growth.
    """
    b = np.asarray(b, dtype=np.float64)
    c_l = diffusion_constant(chi)
    b2 = np.sum(b * b, axis=-1)
    norm = np.sqrt(b2)
    safe = np.where(b2 == 0.0, 1.0, b2)
    proj = b[..., :, None] * b[..., None, :] / safe[..., None, None]
    eye = np.eye(3)
    para = np.sqrt(c_l) * norm[..., None, None]
    perp = np.sqrt(2.0 * c_l) * norm[..., None, None]
    return para * proj + perp * (eye - proj)


_LN_TENSOR_CACHE = {}


def ln_shell_tensors(n):
    """Exact lattice tensors S2 = sum kk/|k|^5 and S4 = sum kkkk/|k|^7."""
    if n not in _LN_TENSOR_CACHE:
        ks = shell_vectors(n, 3).astype(np.float64)
        k2 = np.sum(ks * ks, axis=1)
        s2 = np.einsum("ma,mb,m->ab", ks, ks, k2**-2.5)
        s4 = np.einsum("ma,mb,mc,md,m->abcd", ks, ks, ks, ks, k2**-3.5)
        _LN_TENSOR_CACHE[n] = (s2, s4)
    return _LN_TENSOR_CACHE[n]


def Ln_matrix(b, n, chi=1.0):
    """Finite-shell diffusion matrix by exact lattice summation."""
    if n < 1:
        raise ValueError("n must be >= 1")
    b = np.asarray(b, dtype=np.float64)
    s2, s4 = ln_shell_tensors(n)
    bs2b = np.einsum("...a,ab,...b->...", b, s2, b)
    s4bb = np.einsum("abcd,...a,...b->...cd", s4, b, b)
    eye = np.eye(3)
    return chi * (bs2b[..., None, None] * eye - s4bb)


def Ln_matrix_bruteforce(b, n, chi=1.0):
    """Independent double-loop oracle for Ln_matrix (slow; tests only)."""
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((3, 3))
    rng = range(-2 * n, 2 * n + 1)
    for kx in rng:
        for ky in rng:
            for kz in rng:
                k2 = kx * kx + ky * ky + kz * kz
                if k2 < n * n or k2 > 4 * n * n or k2 == 0:
                    continue
                k = np.array([kx, ky, kz], dtype=np.float64)
                bk = float(b @ k)
                out += (bk * bk / k2**2.5) * (np.eye(3) - np.outer(k, k) / k2)
    return chi * out


# ---------------------------------------------------------------------------
# Finite-volume Fokker-Planck solver on a b-box
# ---------------------------------------------------------------------------

FP_CFL_CONSTANT = 0.25


@dataclass
class BGridDensity:
    """Finite-volume density on the cube [-half_width, half_width]^3.

    values holds cell averages on a uniform m^3 grid; no-flux boundaries.
    """

    half_width: float
    m: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.m,) * 3:
            raise ValueError("values shape does not match the grid")

    @property
    def h(self):
        return 2.0 * self.half_width / self.m

    def axis_centers(self):
        return -self.half_width + self.h * (np.arange(self.m) + 0.5)

    def centers(self):
        ax = self.axis_centers()
        grids = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack(grids, axis=-1)

    def cell_volume(self):
        return self.h**3

    def mass(self):
        return float(np.sum(self.values) * self.cell_volume())

    def second_moment(self):
        ax = self.axis_centers()
        b2 = (
            ax[:, None, None] ** 2
            + ax[None, :, None] ** 2
            + ax[None, None, :] ** 2
        )
        return float(np.sum(self.values * b2) * self.cell_volume())

    def boundary_mass(self):
        v = self.values
        inner = v[1:-1, 1:-1, 1:-1]
        return float((np.sum(v) - np.sum(inner)) * self.cell_volume())

    def copy(self):
        return BGridDensity(self.half_width, self.m, self.values.copy())


def gaussian_density(half_width, m, center, sigma):
    """Normalized isotropic Gaussian bump (the discretized point mass)."""
    rho = BGridDensity(half_width, m, np.zeros((m,) * 3))
    c = np.asarray(center, dtype=np.float64)
    pts = rho.centers()
    r2 = np.sum((pts - c) ** 2, axis=-1)
    vals = np.exp(-0.5 * r2 / sigma**2)
    total = np.sum(vals) * rho.cell_volume()
    if total <= 0:
        raise ValueError("degenerate initial density")
    rho.values = vals / total
    return rho


_FP_FACE_CACHE = {}


def _fp_face_matrices(half_width, m, chi):
    """Face diffusivities: arithmetic average of L at adjacent cell centers."""
    key = (half_width, m, chi)
    if key not in _FP_FACE_CACHE:
        probe = BGridDensity(half_width, m, np.zeros((m,) * 3))
        L = L_matrix(probe.centers(), chi)          # (m, m, m, 3, 3)
        faces = []
        for axis in range(3):
            sl_lo = [slice(None)] * 3
            sl_hi = [slice(None)] * 3
            sl_lo[axis] = slice(0, m - 1)
            sl_hi[axis] = slice(1, m)
            faces.append(0.5 * (L[tuple(sl_lo)] + L[tuple(sl_hi)]))
        tr_max = float(np.max(np.trace(L, axis1=-2, axis2=-1)))
        _FP_FACE_CACHE[key] = (faces, tr_max)
    return _FP_FACE_CACHE[key]


def _transverse_gradient(values, axis, h):
    """Cell-centered central derivative along `axis` with edge replication."""
    padded = np.pad(values, [(1, 1) if a == axis else (0, 0) for a in range(3)], mode="edge")
    sl_hi = [slice(None)] * 3
    sl_lo = [slice(None)] * 3
    sl_hi[axis] = slice(2, None)
    sl_lo[axis] = slice(0, -2)
    return (padded[tuple(sl_hi)] - padded[tuple(sl_lo)]) / (2.0 * h)


def fp_step(rho, dt, chi=1.0):
    """One conservative explicit step of d rho/dt = div_b(L(b) grad_b rho).

    Face fluxes F_i = sum_j L_ij(b_face) d_j rho with no-flux boundaries;
    mass is conserved to round-off and a mass-preserving limiter removes
    negative undershoots.
    """
    m, h = rho.m, rho.h
    faces, tr_max = _fp_face_matrices(rho.half_width, rho.m, chi)
    if dt * tr_max / h**2 > FP_CFL_CONSTANT:
        raise ConfigurationError(
            f"CFL violation: dt <= {FP_CFL_CONSTANT * h**2 / tr_max:.3e} required"
        )
    v = rho.values
    grads = [_transverse_gradient(v, a, h) for a in range(3)]
    new = v.copy()
    for axis in range(3):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(0, m - 1)
        sl_hi[axis] = slice(1, m)
        sl_lo, sl_hi = tuple(sl_lo), tuple(sl_hi)
        normal = (v[sl_hi] - v[sl_lo]) / h
        flux = faces[axis][..., axis, axis] * normal
        for j in range(3):
            if j == axis:
                continue
            trans = 0.5 * (grads[j][sl_lo] + grads[j][sl_hi])
            flux = flux + faces[axis][..., axis, j] * trans
        # cell below the face gains +F, cell above loses it
        new[sl_lo] += dt / h * flux
        new[sl_hi] -= dt / h * flux
    neg = new < 0.0
    if np.any(neg):
        clipped = np.where(neg, 0.0, new)
        total = np.sum(clipped)
        if total > 0:
            clipped *= np.sum(new) / total
        new = clipped
    return BGridDensity(rho.half_width, rho.m, new)


def fp_run(rho0, t_end, dt, chi=1.0, record_every=0):
    """Advance to t_end; returns (rho_T, record) where record rows are
    (t, mass, m2, boundary_mass)."""
    n_steps = int(round(t_end / dt))
    rho = rho0.copy()
    rows = [(0.0, rho.mass(), rho.second_moment(), rho.boundary_mass())]
    for s in range(n_steps):
        rho = fp_step(rho, dt, chi)
        if record_every and ((s + 1) % record_every == 0 or s + 1 == n_steps):
            rows.append(((s + 1) * dt, rho.mass(), rho.second_moment(), rho.boundary_mass()))
    if not record_every:
        rows.append((t_end, rho.mass(), rho.second_moment(), rho.boundary_mass()))
    return rho, np.array(rows)


# ---------------------------------------------------------------------------
# Scalar limit measure and weak-form residuals
# ---------------------------------------------------------------------------


def scalar_limit_pairing(theta0, t, kappa_t, phi, psi, ngrid=None):
    """Pairing of the limit scalar Young measure with phi(theta) psi(x).

    The limit measure is the heat-kernel smearing of delta_{theta0(y)}, so
    int phi psi dmu = <e^{kappa_T t Lap}(phi o theta0), psi>, evaluated with
    the exact spectral semigroup on the full sampling grid (the mean mode is
    preserved).  phi acts pointwise on values; psi is a callable on x.
    """
    if t < 0:
        raise ValueError("negative time not allowed")
    d = theta0.d
    ngrid = ngrid or spectral.next_fast_len(4 * theta0.k_max + 4)
    vals = theta0.values(ngrid)
    g = np.asarray(phi(vals), dtype=np.float64)
    x = spectral.grid_points(ngrid, d)
    psi_vals = np.asarray(psi(x), dtype=np.float64)
    g_hat = np.fft.fftn(g) / ngrid**d
    freqs = np.fft.fftfreq(ngrid, d=1.0 / ngrid)
    k2 = sum(
        np.meshgrid(*([freqs**2] * d), indexing="ij")[i] for i in range(d)
    )
    g_hat *= np.exp(-kappa_t * k2 * t)
    psi_hat = np.fft.fftn(psi_vals) / ngrid**d
    return float(TWO_PI**d * np.real(np.sum(g_hat * np.conj(psi_hat))))


class TestFunctionB:
    """C^2 test function on R^3 given by vectorized callables.

    value(b) -> (...,), grad(b) -> (..., 3), hess(b) -> (..., 3, 3), where b
    has shape (..., 3).
    """

    def __init__(self, value, grad, hess):
        self.value = value
        self.grad = grad
        self.hess = hess


def smooth_bump_b2(radius):
    """|b|^2 smoothly truncated to vanish (C^2) outside |b| = radius."""

    def window(r2):
        u = r2 / radius**2
        w = np.where(u < 1.0, (1.0 - u) ** 3, 0.0)
        return w

    def value(b):
        r2 = np.sum(b * b, axis=-1)
        return r2 * window(r2)

    def grad(b):
        r2 = np.sum(b * b, axis=-1)
        u = r2 / radius**2
        w = np.where(u < 1.0, (1.0 - u) ** 3, 0.0)
        dw = np.where(u < 1.0, -3.0 * (1.0 - u) ** 2 / radius**2, 0.0)
        coef = 2.0 * (w + r2 * dw)
        return coef[..., None] * b

    def hess(b):
        r2 = np.sum(b * b, axis=-1)
        u = r2 / radius**2
        w = np.where(u < 1.0, (1.0 - u) ** 3, 0.0)
        dw = np.where(u < 1.0, -3.0 * (1.0 - u) ** 2 / radius**2, 0.0)
        d2w = np.where(u < 1.0, 6.0 * (1.0 - u) / radius**4, 0.0)
        coef1 = 2.0 * (w + r2 * dw)
        coef2 = 4.0 * (2.0 * dw + r2 * d2w)
        eye = np.eye(3)
        return coef1[..., None, None] * eye + coef2[..., None, None] * (
            b[..., :, None] * b[..., None, :]
        )

    return TestFunctionB(value, grad, hess)


def weak_form_residual(snapshots, times, f, chi=1.0):
    """|[int f rho(t2) - int f rho(t1)] - int int (L : hess f) rho dt|.

    snapshots: list of BGridDensity at the given times (uniformly spaced is
    not required; the time integral uses the trapezoid rule).  f must be
    supported strictly inside the box.
    """
    if len(snapshots) != len(times) or len(snapshots) < 2:
        raise ValueError("need matching snapshot and time lists (>= 2)")
    rho0 = snapshots[0]
    pts = rho0.centers()
    fv = np.asarray(f.value(pts))
    shell = np.ones(rho0.values.shape, dtype=bool)
    shell[1:-1, 1:-1, 1:-1] = False
    if np.max(np.abs(fv[shell])) > 1e-12 * max(np.max(np.abs(fv)), 1e-300):
        raise ResolutionError("test function support touches the box boundary")
    L = L_matrix(pts, chi)
    hf = np.asarray(f.hess(pts))
    lhess = np.einsum("...ij,...ij->...", L, hf)
    vol = rho0.cell_volume()

    def pair(rho, grid_vals):
        return float(np.sum(rho.values * grid_vals) * vol)

    lhs = pair(snapshots[-1], fv) - pair(snapshots[0], fv)
    gen = np.array([pair(s, lhess) for s in snapshots])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    rhs = float(trapezoid(gen, np.asarray(times)))
    return abs(lhs - rhs)
