"""Lagrangian Monte Carlo: the limit b-SDE and the finite-shell particle system.

Limit dynamics (x frozen):

    db_t = kappa A(b_t) dW_t,

where A is the symmetric square root of the limit diffusion matrix L(b) and
kappa is a diffusion calibration factor.  With kappa = sqrt(2) the generator
is L(b) : hess = div_b(L grad_b .), matching the weak form of the limit
equation and the moment identity E|b_t|^2 = |b_0|^2 exp(16 pi chi log2 t / 3);
kappa = 1 reproduces the literal square-root diffusion (generator
(1/2) L : hess) and is retained as a switch.

Finite-shell dynamics (Stratonovich, midpoint rule):

    dX + sum sigma_{k,j}(X) o dW^{k,j} = 0,
    db + sum b . grad sigma_{k,j}(X) o dW^{k,j} = 0,

with the same noise realization shared by all particles (common environment).
"""

from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import ConfigurationError
from .noise import RngStream, sample_increments, vector_modes
from .vlasov import diffusion_constant

TWO_PI = 2.0 * np.pi

SQRT2 = float(np.sqrt(2.0))


@dataclass
class ParticleEnsemble:
    """Monte Carlo particle cloud; x is None for the x-frozen limit SDE."""

    b: np.ndarray                 # (paths, 3)
    time: float
    x: np.ndarray | None = None   # (paths, 3) positions on the torus
    floor_hits: int = 0           # steps taken inside the |b| guard region

    @property
    def n_paths(self):
        return len(self.b)


@dataclass
class SdeConfig:
    """Time stepping parameters for the particle simulations."""

    dt: float
    t_end: float
    paths: int
    seed: int
    scheme: str = "euler"                # "euler" | "milstein-diag"
    diffusion_calibration: float = SQRT2  # kappa: sqrt(2) matches the weak form
    floor_eps: float = 1e-8
    midpoint_tol: float = 1e-12
    midpoint_max_iters: int = 50

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.paths < 1:
            raise ConfigurationError("need at least one path")
        if self.scheme not in ("euler", "milstein-diag"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")

    def n_steps(self):
        return int(round(self.t_end / self.dt))


def _apply_a(b, v, chi, kappa):
    """kappa * A(b) v with the eigendecomposition applied in closed form.

    A(b) v = sqrt(c_L)|b| (bhat.v) bhat + sqrt(2 c_L)|b| (v - (bhat.v) bhat).
    """
    c_l = diffusion_constant(chi)
    b2 = np.sum(b * b, axis=-1, keepdims=True)
    norm = np.sqrt(b2)
    safe = np.where(b2 == 0.0, 1.0, b2)
    radial = np.sum(b * v, axis=-1, keepdims=True) * b / safe
    out = np.sqrt(c_l) * norm * radial + np.sqrt(2.0 * c_l) * norm * (v - radial)
    return kappa * out


def _grad_a_milstein(b, dw, dt, chi, kappa):
    """Diagonal Milstein correction sum_l (grad A e_l . A e_l)(dW_l^2 - dt)/2.

    Uses the closed-form derivative of A away from b = 0.
    """
    c_l = diffusion_constant(chi)
    alpha = kappa * np.sqrt(c_l)
    beta = kappa * np.sqrt(2.0 * c_l)
    b = np.asarray(b, dtype=np.float64)
    b2 = np.sum(b * b, axis=-1, keepdims=True)
    norm = np.sqrt(b2)
    safe_norm = np.where(norm == 0.0, 1.0, norm)
    bhat = b / safe_norm
    eye = np.eye(3)
    # A = beta |b| I + (alpha - beta) (b (x) b)/|b|
    # dA_il/db_m = beta bhat_m d_il + (alpha-beta)(d_im bhat_l + bhat_i d_lm
    #              - bhat_i bhat_l bhat_m)
    corr = np.zeros_like(b)
    A = beta * norm[..., None] * eye + (alpha - beta) * norm[..., None] * (
        bhat[..., :, None] * bhat[..., None, :]
    )
    for l in range(3):
        ael = A[..., :, l]                                   # (paths, 3)
        bh_ael = np.sum(bhat * ael, axis=-1, keepdims=True)  # bhat . A e_l
        # sum_m dA_il/db_m (A e_l)_m  with
        # dA_il/db_m = beta bhat_m d_il
        #              + (alpha-beta)(d_im bhat_l + bhat_i d_lm - bhat_i bhat_l bhat_m)
        v = (alpha - beta) * (
            ael * bhat[..., l : l + 1]
            + bhat * ael[..., l : l + 1]
            - bhat * bhat[..., l : l + 1] * bh_ael
        )
        v[..., l] += beta * bh_ael[..., 0]
        corr += 0.5 * v * (dw[..., l : l + 1] ** 2 - dt)
    return corr


def simulate_limit_sde(b0, cfg, chi=1.0, stream_id=0, record=None):
    """Paths of db = kappa A(b) dW from b0 ((3,) vector or (paths, 3) cloud).

    Paths entering |b| < floor_eps * |b0|_typ are stepped with A frozen at the
    guard radius (counted in floor_hits); the origin itself is absorbing.
    Reproducible per (seed, stream_id).
    """
    b0 = np.atleast_2d(np.asarray(b0, dtype=np.float64))
    if b0.shape[1] != 3:
        raise ValueError("b0 must be a 3-vector or an (n, 3) array")
    b = np.broadcast_to(b0, (cfg.paths, 3)).copy() if len(b0) == 1 else b0.copy()
    if len(b) != cfg.paths:
        raise ConfigurationError("initial cloud size does not match cfg.paths")
    kappa = cfg.diffusion_calibration
    typ = float(np.max(np.linalg.norm(b, axis=1)))
    guard = cfg.floor_eps * (typ if typ > 0 else 1.0)
    floor_hits = 0
    for m in range(cfg.n_steps()):
        g = np.random.Generator(
            np.random.Philox(
                key=np.array([cfg.seed, stream_id], dtype=np.uint64),
                counter=np.array([0, 0, m, 1], dtype=np.uint64),
            )
        )
        dw = g.standard_normal((cfg.paths, 3)) * np.sqrt(cfg.dt)
        norms = np.linalg.norm(b, axis=1)
        guarded = (norms < guard) & (norms > 0.0)
        floor_hits += int(np.sum(guarded))
        b_eff = np.where(
            guarded[:, None], b * (guard / np.where(norms == 0, 1.0, norms))[:, None], b
        )
        incr = _apply_a(b_eff, dw, chi, kappa)
        if cfg.scheme == "milstein-diag":
            incr = incr + _grad_a_milstein(b_eff, dw, cfg.dt, chi, kappa)
        b = b + incr
        if record is not None:
            record(m + 1, (m + 1) * cfg.dt, b)
    return ParticleEnsemble(b=b, time=cfg.n_steps() * cfg.dt, floor_hits=floor_hits)


def _increment_amplitudes(noise):
    """Per-mode complex 3-vector amplitudes theta_m sum_j a_{m,j} DW^{m,j}."""
    return np.einsum(
        "m,mjc,mj->mc", noise.modes.thetas, noise.modes.frames, noise.dw
    )


def _field_at_points(ks, amps, x):
    """Evaluate u(x) = 2 Re sum_m amp_m e^{i k_m.x} and its gradient.

    ks: (M, 3) positive-half wave vectors, amps: (M, 3) complex amplitudes,
    x: (n, 3).  Returns (u, grad_u) with shapes (n, 3) and (n, 3, 3),
    grad_u[p, a, c] = d_a u_c at x_p.
    """
    phase = np.exp(1j * (x @ ks.T))                            # (n, M)
    u = 2.0 * np.real(phase @ amps)                            # (n, 3)
    tensor = (1j * ks[:, :, None] * amps[:, None, :]).reshape(len(ks), 9)
    grad = 2.0 * np.real(phase @ tensor).reshape(len(x), 3, 3)
    return u, grad


def simulate_finite_n(x0s, b0s, n, cfg, chi=1.0, stream_id=0, record=None):
    """Joint Stratonovich midpoint paths of the finite-shell system.

    x0s: (paths, 3) initial positions; b0s: (paths, 3) initial values (or a
    single 3-vector broadcast to all particles).  All particles share the
    same noise realization per step (common environment).
    """
    x = np.array(x0s, dtype=np.float64)
    b0s = np.asarray(b0s, dtype=np.float64)
    b = np.broadcast_to(b0s, x.shape).copy()
    if x.shape != b.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("x0s and b0s must be (paths, 3)")
    modes = vector_modes(n, chi)
    ks = modes.ks.astype(np.float64)
    stream = RngStream(seed=cfg.seed, stream=stream_id)
    for m in range(cfg.n_steps()):
        noise = sample_increments(modes, cfg.dt, stream, step=m)
        amps = _increment_amplitudes(noise)
        x_new, b_new = x, b
        for _ in range(cfg.midpoint_max_iters):
            x_mid = 0.5 * (x + x_new)
            b_mid = 0.5 * (b + b_new)
            u, grad_u = _field_at_points(ks, amps, x_mid)
            x_next = x - u
            b_next = b - np.einsum("na,nac->nc", b_mid, grad_u)
            delta = max(
                float(np.max(np.abs(x_next - x_new))),
                float(np.max(np.abs(b_next - b_new))),
            )
            x_new, b_new = x_next, b_next
            if delta <= cfg.midpoint_tol * max(1.0, float(np.max(np.abs(b)))):
                break
        else:
            raise ConfigurationError("midpoint iteration failed; reduce dt")
        x, b = x_new % TWO_PI, b_new
        if record is not None:
            record(m + 1, (m + 1) * cfg.dt, x, b)
    return ParticleEnsemble(b=b, time=cfg.n_steps() * cfg.dt, x=x)


def empirical_law(ensemble, bins):
    """Normalized histogram of the ensemble values with binomial error bars."""
    from .measures import BDistribution

    flat = bins.flat_index(ensemble.b)
    counts = np.bincount(flat, minlength=bins.n_total).astype(np.float64)
    n = ensemble.n_paths
    p = counts / n
    stderr = np.sqrt(p * (1.0 - p) / n)
    return BDistribution(bins=bins, weights=p, stderr=stderr)


def tv_distance_on_bins(p_weights, q_weights):
    """Total-variation distance (1/2) sum |p_i - q_i| between bin vectors."""
    return 0.5 * float(np.sum(np.abs(p_weights - q_weights)))


def support_probe(b0, b_star, eps, cfg, chi=1.0, stream_id=0):
    """Fraction of limit-SDE paths with |b_T - b*| <= eps, with a Wilson CI.

    Returns (fraction, ci_lo, ci_hi).
    """
    ens = simulate_limit_sde(b0, cfg, chi=chi, stream_id=stream_id)
    b_star = np.asarray(b_star, dtype=np.float64)
    hits = np.linalg.norm(ens.b - b_star, axis=1) <= eps
    n = ens.n_paths
    p = float(np.mean(hits))
    zc = 3.0  # three-sigma Wilson interval
    denom = 1.0 + zc**2 / n
    center = (p + zc**2 / (2 * n)) / denom
    half = zc * np.sqrt(p * (1 - p) / n + zc**2 / (4 * n**2)) / denom
    return p, max(0.0, center - half), min(1.0, center + half)


def large_values_fraction(field, x0, r, threshold, ngrid=None, min_points=100):
    """Lebesgue fraction of the ball B(x0, r) where |field| >= threshold."""
    from .errors import ResolutionError

    d = field.d
    ngrid = ngrid or spectral.next_fast_len(4 * field.k_max + 4)
    vals = field.values(ngrid)
    mag = np.sqrt(np.sum(vals**2, axis=0)) if vals.ndim == d + 1 else np.abs(vals)
    x = spectral.grid_points(ngrid, d)
    x0 = np.asarray(x0, dtype=np.float64).reshape((d,) + (1,) * d)
    diff = np.abs(x - x0)
    diff = np.minimum(diff, TWO_PI - diff)
    mask = np.sum(diff**2, axis=0) <= r**2
    n_pts = int(np.sum(mask))
    if n_pts < min_points:
        raise ResolutionError(f"ball under-resolved ({n_pts} grid points)")
    return float(np.mean(mag[mask] >= threshold))
