"""Spectral solver for the stochastic passive vector field (transport + stretching).

Ito dynamics on the 3-torus:

    dB = (2/3) chi eta_n Lap(B) dt
         + sum_{k,j} (sigma_{k,j} . grad B - B . grad sigma_{k,j}) dW^{k,j},
    div B = 0.

The stretching term breaks skew-symmetry, so there is no exactly conservative
scheme; the primary stepper is Euler-Maruyama on the Ito form (the Ito energy
identity being the test target).  Fields are Leray-projected after every step.

Also implemented here: the pathwise energy identity

    d||B||^2 = -2 sum <B.grad sigma_{k,j}, B> dW^{k,j}
               + 2 sum ||B.grad sigma_{k,j}||^2 dt

and the pathwise weak-form identity for int f(x, B_t(x)) dx against C^2 test
functions on T^3 x R^3 (the finite-n Vlasov residual), whose b-diffusion term
uses the shell matrix from `vlasov.Ln_matrix`.
"""

from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import ConfigurationError, ContractViolation
from .noise import RngStream, increment_field_coeffs, sample_increments, shell_sums, vector_modes
from .vlasov import ln_shell_tensors

TWO_PI = 2.0 * np.pi

HEAT_STABILITY_BOUND = 2.0


@dataclass
class SpectralVectorField:
    """Truncated Fourier representation of a real, zero-mean, div-free field.

    coeffs has shape (3,) + cube; axis 0 is the vector component.
    """

    coeffs: np.ndarray
    k_max: int

    d = 3

    def copy(self):
        return SpectralVectorField(self.coeffs.copy(), self.k_max)

    def normalize(self):
        c = spectral.enforce_reality(self.coeffs, 3)
        c = spectral.zero_mean(c, self.k_max, 3)
        c = c * spectral.ball_mask(self.k_max, 3)
        c = spectral.leray_project_coeffs(c, self.k_max)
        return SpectralVectorField(c, self.k_max)

    def divergence_max(self):
        kv = spectral.wavevectors(self.k_max, 3)
        return float(np.max(np.abs(np.sum(kv * self.coeffs, axis=0))))

    def values(self, ngrid):
        return spectral.to_physical(self.coeffs, self.k_max, 3, ngrid).real


def zero_vector_field(k_max):
    side = 2 * k_max + 1
    return SpectralVectorField(np.zeros((3,) + (side,) * 3, dtype=np.complex128), k_max)


def vector_field_from_modes(k_max, mode_dict):
    """Field from {k: 3-vector amplitude}; mirror modes and the Leray
    projection are applied automatically."""
    f = zero_vector_field(k_max)
    for k, amp in mode_dict.items():
        amp = np.asarray(amp, dtype=np.complex128)
        idx = (slice(None),) + tuple(np.asarray(k) + k_max)
        midx = (slice(None),) + tuple(-np.asarray(k) + k_max)
        f.coeffs[idx] += amp
        f.coeffs[midx] += np.conj(amp)
    return f.normalize()


def random_vector_field(k_max, bandwidth, seed, decay=2.0):
    rng = np.random.default_rng(seed)
    f = zero_vector_field(k_max)
    k2 = spectral.k_squared(k_max, 3)
    mask = (k2 > 0) & (k2 <= bandwidth**2)
    amp = np.zeros_like(k2)
    amp[mask] = k2[mask] ** (-decay / 2.0)
    phase = rng.standard_normal((3,) + k2.shape) + 1j * rng.standard_normal((3,) + k2.shape)
    f.coeffs = amp[np.newaxis] * phase
    return f.normalize()


@dataclass
class VectorRunConfig:
    """Parameters of a vector advection run."""

    n: int
    chi: float
    k_max: int
    dt: float
    t_end: float
    seed: int
    gamma: int = 4
    grid_size: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("shell parameter n must be >= 1")
        if self.chi <= 0:
            raise ConfigurationError("chi must be positive")
        if self.k_max < 2 * self.n:
            raise ConfigurationError("k_max must resolve the noise shell (k_max >= 2n)")
        if self.dt <= 0 or self.t_end < 0:
            raise ConfigurationError("dt must be positive and t_end nonnegative")
        if self.gamma < 4:
            raise ConfigurationError("moment order gamma must be >= 4")
        eta = shell_sums(self.n, 3).eta_n
        if self.dt * (2.0 / 3.0) * self.chi * eta * self.k_max**2 > HEAT_STABILITY_BOUND:
            raise ConfigurationError("dt violates the drift stability bound")
        min_grid = 2 * self.k_max + 2 * self.n + 1
        if self.grid_size == 0:
            self.grid_size = spectral.next_fast_len(min_grid)
        elif self.grid_size < min_grid:
            raise ConfigurationError(
                f"grid_size {self.grid_size} aliases transport products (need >= {min_grid})"
            )

    def modes(self):
        return vector_modes(self.n, self.chi)

    def eta_n(self):
        return shell_sums(self.n, 3).eta_n

    def n_steps(self):
        return int(round(self.t_end / self.dt))


def leray_project(field):
    """Project onto divergence-free fields; idempotent."""
    return SpectralVectorField(
        spectral.leray_project_coeffs(field.coeffs, field.k_max), field.k_max
    )


def energy(field):
    """||B||^2 by Parseval (summed over components)."""
    return spectral.l2_norm_sq(field.coeffs, 3)


def _noise_terms_phys(B, u_coeffs, bw, ngrid):
    """Physical-space u.grad(B) - B.grad(u) for the synthesized increment u."""
    k_max = B.k_max
    u_phys = spectral.to_physical(u_coeffs, bw, 3, ngrid).real        # (3, grid)
    kv_u = spectral.wavevectors(bw, 3)
    grad_u = spectral.to_physical(
        1j * kv_u[:, np.newaxis] * u_coeffs[np.newaxis], bw, 3, ngrid
    ).real                                                            # (deriv, comp, grid)
    B_phys = spectral.to_physical(B.coeffs, k_max, 3, ngrid).real     # (3, grid)
    kv = spectral.wavevectors(k_max, 3)
    grad_B = spectral.to_physical(
        1j * kv[:, np.newaxis] * B.coeffs[np.newaxis], k_max, 3, ngrid
    ).real                                                            # (deriv, comp, grid)
    adv = np.einsum("a...,ac...->c...", u_phys, grad_B)
    stretch = np.einsum("a...,ac...->c...", B_phys, grad_u)
    return adv - stretch


def step_vector(B, noise, cfg):
    """One Euler-Maruyama step; output is projected and dealiased."""
    if noise.modes.n != cfg.n or noise.modes.kind != "vector":
        raise ContractViolation("noise modes do not match the run configuration")
    k_max, ngrid = cfg.k_max, cfg.grid_size
    u_coeffs = increment_field_coeffs(noise)
    terms = _noise_terms_phys(B, u_coeffs, noise.modes.bandwidth(), ngrid)
    t_hat = spectral.from_physical(terms, k_max, 3)
    k2 = spectral.k_squared(k_max, 3)
    drift = cfg.dt * (2.0 / 3.0) * cfg.chi * cfg.eta_n() * (-k2) * B.coeffs
    out = B.coeffs + drift + t_hat
    return SpectralVectorField(out, k_max).normalize()


def run_vector(B0, cfg, stream_id=0, record=None):
    """Run to t_end; `record(step, t, field)` is called after each step."""
    if B0.k_max != cfg.k_max:
        raise ContractViolation("initial field does not match the configuration")
    modes = cfg.modes()
    stream = RngStream(seed=cfg.seed, stream=stream_id)
    B = B0.normalize()
    if record is not None:
        record(0, 0.0, B)
    for m in range(cfg.n_steps()):
        noise = sample_increments(modes, cfg.dt, stream, step=m)
        B = step_vector(B, noise, cfg)
        if record is not None:
            record(m + 1, (m + 1) * cfg.dt, B)
    return B


def run_vector_trajectory(B0, cfg, stream_id=0):
    """Run and keep every intermediate field plus the noise realizations."""
    modes = cfg.modes()
    stream = RngStream(seed=cfg.seed, stream=stream_id)
    B = B0.normalize()
    fields = [B]
    noises = []
    for m in range(cfg.n_steps()):
        noise = sample_increments(modes, cfg.dt, stream, step=m)
        noises.append(noise)
        B = step_vector(B, noises[-1], cfg)
        fields.append(B)
    return fields, noises


def mean_field_pairing(B, phi):
    """<B_t, phi> for a vector test field phi on the same lattice."""
    return float(np.sum(spectral.pairing(B.coeffs, phi.coeffs, 3)))


def ito_energy_terms(B, noise, cfg):
    """One-step ingredients of the energy identity, evaluated at B.

    Returns a dict with the martingale increment, the continuum drift
    2 sum ||B.grad sigma||^2 dt, the Galerkin-consistent drift (truncated
    quadratic variation 2 dt sum <P_K G_{k,j}, P_K G_{-k,j}> plus the
    Laplacian pairing) and the predicted quadratic-variation increment of
    the martingale part.  The Galerkin drift converges to the continuum
    drift as k_max -> infinity; their gap is the truncation diagnostic.
    """
    modes = noise.modes
    k_max = B.k_max
    side = 2 * k_max + 1
    kv = spectral.wavevectors(k_max, 3)
    mask = spectral.ball_mask(k_max, 3)
    m2 = spectral.k_squared(k_max, 3)
    conj_b = np.conj(B.coeffs)
    abs_b2 = np.sum(np.abs(B.coeffs) ** 2, axis=0)
    m_dot_b = np.einsum("c...,c...->...", kv, conj_b)
    g0 = TWO_PI**3 * np.real(
        np.tensordot(B.coeffs, conj_b, axes=([1, 2, 3], [1, 2, 3]))
    )

    b0c, b1c, b2c = B.coeffs[0], B.coeffs[1], B.coeffs[2]
    cb0, cb1, cb2 = conj_b[0], conj_b[1], conj_b[2]
    kv0, kv1, kv2 = kv[0], kv[1], kv[2]
    mart = 0.0
    qv_trunc = 0.0
    qv_pred = 0.0
    for m in range(modes.n_modes):
        k = modes.ks[m].astype(float)
        k2 = float(k @ k)
        theta2 = modes.thetas[m] ** 2
        src = tuple(
            slice(max(0, -int(ki)), side + min(0, -int(ki))) for ki in modes.ks[m]
        )
        tgt = tuple(
            slice(max(0, int(ki)), side + min(0, int(ki))) for ki in modes.ks[m]
        )
        b_dot_k = k[0] * b0c[src] + k[1] * b1c[src] + k[2] * b2c[src]
        for j in range(modes.n_frames):
            a = modes.frames[m, j]
            c_tgt = a[0] * cb0[tgt] + a[1] * cb1[tgt] + a[2] * cb2[tgt]
            z = 1j * modes.thetas[m] * TWO_PI**3 * np.sum(b_dot_k * c_tgt)
            mart += -4.0 * float(np.real(z * noise.dw[m, j]))
            qv_pred += 16.0 * cfg.dt * float(np.abs(z) ** 2)
        # sum_j |(a_j.m) B - (B.k) a_j|^2 via sum_j a_j (x) a_j = I - kk/|k|^2
        w = mask[tgt]
        k_dot_m = k[0] * kv0[src] + k[1] * kv1[src] + k[2] * kv2[src]
        term = (
            abs_b2[src] * (m2[src] - k_dot_m**2 / k2)
            - 2.0 * np.real(b_dot_k * (m_dot_b[src] - k_dot_m * np.conj(b_dot_k) / k2))
            + 2.0 * np.abs(b_dot_k) ** 2
        )
        qv_trunc += theta2 * float(np.sum(term * w))
    qv_trunc *= 4.0 * cfg.dt * TWO_PI**3  # x2 mirrors, identity prefactor 2

    ks = modes.ks.astype(float)
    kgk = np.einsum("ma,ab,mb->m", ks, g0, ks)
    # identity prefactor 2, times 2 mirrors, times 2 frame indices
    drift_continuum = 8.0 * cfg.dt * float(np.sum(modes.thetas**2 * kgk))
    grad_sq = TWO_PI**3 * float(np.sum(m2 * abs_b2))
    lap_pairing = -(4.0 / 3.0) * cfg.chi * cfg.eta_n() * grad_sq * cfg.dt
    return {
        "martingale": mart,
        "drift_continuum": drift_continuum,
        "drift_galerkin": lap_pairing + qv_trunc,
        "qv_predicted": qv_pred,
    }


def ito_energy_residual(fields, noises, cfg):
    """Per-step residuals of the pathwise Ito energy identity.

    fields: n_steps+1 fields from `run_vector_trajectory`; noises: the
    matching realizations.  The residual r_m subtracts the martingale
    increment and the drift of the Galerkin system actually integrated, so
    its conditional mean is O(dt^2); `truncation_gap` records the difference
    between the continuum drift 2 sum ||B.grad sigma||^2 dt and the
    Galerkin drift (the spectral-truncation diagnostic).  Also returns the
    predicted quadratic-variation increments for the isometry check.
    """
    if len(fields) != len(noises) + 1:
        raise ValueError("trajectory and noise path lengths do not match")
    n = len(noises)
    d_energy = np.empty(n)
    mart = np.empty(n)
    drift = np.empty(n)
    drift_cont = np.empty(n)
    qv_pred = np.empty(n)
    for m in range(n):
        e0 = energy(fields[m])
        e1 = energy(fields[m + 1])
        d_energy[m] = e1 - e0
        terms = ito_energy_terms(fields[m], noises[m], cfg)
        mart[m] = terms["martingale"]
        drift[m] = terms["drift_galerkin"]
        drift_cont[m] = terms["drift_continuum"]
        qv_pred[m] = terms["qv_predicted"]
    resid = d_energy - mart - drift
    return {
        "d_energy": d_energy,
        "martingale": mart,
        "drift": drift,
        "drift_continuum": drift_cont,
        "truncation_gap": drift_cont - drift,
        "residual": resid,
        "qv_predicted": qv_pred,
        "running_mean": np.cumsum(resid) / np.arange(1, n + 1),
    }


class TestFunctionXB:
    """C^2 test function f(x, b) on T^3 x R^3 given by vectorized callables.

    Each callable receives x with shape (3,) + grid and b with shape
    (3,) + grid and returns the pointwise value / derivative arrays:
    value -> grid, grad_x -> (3,) + grid, lap_x -> grid,
    grad_b -> (3,) + grid, hess_b -> (3, 3) + grid.
    """

    def __init__(self, value, grad_x, lap_x, grad_b, hess_b):
        self.value = value
        self.grad_x = grad_x
        self.lap_x = lap_x
        self.grad_b = grad_b
        self.hess_b = hess_b


def constant_test_function(c=1.0):
    def _zero3(x, b):
        return np.zeros_like(b)

    return TestFunctionXB(
        value=lambda x, b: np.full(b.shape[1:], c),
        grad_x=_zero3,
        lap_x=lambda x, b: np.zeros(b.shape[1:]),
        grad_b=_zero3,
        hess_b=lambda x, b: np.zeros((3, 3) + b.shape[1:]),
    )


def vlasov_residual(fields, noises, cfg, f):
    """Pathwise weak-form residual for int f(x, B_t(x)) dx along a path.

    Accumulates the two stochastic terms, the (2/3) eta_n Lap_x term and the
    b-diffusion term div_b(L^n(b) grad_b f) = L^n(b) : hess_b f along the
    recorded trajectory, and returns the running identity gap, which must
    vanish as dt -> 0.
    """
    if len(fields) != len(noises) + 1:
        raise ValueError("trajectory and noise path lengths do not match")
    ngrid = cfg.grid_size
    modes = cfg.modes()
    bw = modes.bandwidth()
    x = spectral.grid_points(ngrid, 3)
    vol_el = TWO_PI**3 / ngrid**3
    s2, s4 = ln_shell_tensors(cfg.n)
    idx_neg = tuple((-modes.ks + bw).T)
    ks = modes.ks.astype(float)

    def quad(vals):
        return float(np.sum(vals) * vol_el)

    b0 = fields[0].values(ngrid)
    lhs0 = quad(f.value(x, b0))
    n = len(noises)
    gap = np.empty(n)
    rhs = 0.0
    for m in range(n):
        B = fields[m]
        bvals = B.values(ngrid)
        dw = noises[m].dw

        # transport term: -sum int sigma_{k,j} . (grad_x f)(x, B) dx dW
        V = f.grad_x(x, bvals)
        V_hat = spectral.from_physical(V, bw, 3)
        V_at = V_hat[(slice(None),) + idx_neg]                    # (3, M)
        w = TWO_PI**3 * modes.thetas[None, :] * np.einsum("am,mja->jm", V_at, modes.frames)
        rhs += -2.0 * float(np.sum(np.real(w.T * dw)))

        # stretching term: -sum int (B.k)(a . grad_b f) e^{ikx} dx dW
        W = f.grad_b(x, bvals)
        H = np.einsum("a...,b...->ab...", bvals, W)
        H_hat = spectral.from_physical(H, bw, 3)
        H_at = H_hat[(slice(None), slice(None)) + idx_neg]        # (3, 3, M)
        kh = np.einsum("ma,abm->bm", ks, H_at)
        s = 1j * TWO_PI**3 * modes.thetas[None, :] * np.einsum("bm,mjb->jm", kh, modes.frames)
        rhs += -2.0 * float(np.sum(np.real(s.T * dw)))

        # x-diffusion term
        rhs += (2.0 / 3.0) * cfg.eta_n() * quad(f.lap_x(x, bvals)) * cfg.dt

        # b-diffusion term: L^n(B) : hess_b f  (first-order part vanishes)
        hess = f.hess_b(x, bvals)
        bs2b = np.einsum("a...,ab,b...->...", bvals, s2, bvals)
        s4bb = np.einsum("abcd,a...,b...->cd...", s4, bvals, bvals)
        ln_contract = bs2b * np.einsum("aa...->...", hess) - np.einsum(
            "cd...,cd...->...", s4bb, hess
        )
        rhs += cfg.chi * quad(ln_contract) * cfg.dt

        lhs = quad(f.value(x, fields[m + 1].values(ngrid))) - lhs0
        gap[m] = lhs - rhs
    return gap
