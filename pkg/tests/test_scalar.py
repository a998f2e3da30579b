import numpy as np
import pytest

from kraichnanlab import noise, scalar, spectral
from kraichnanlab.errors import ConfigurationError, ContractViolation

TWO_PI = 2.0 * np.pi


def make_cfg(**kw):
    base = dict(d=2, n=2, kappa_t=1.0, k_max=8, dt=1e-3, t_end=1e-2, seed=3)
    base.update(kw)
    return scalar.ScalarRunConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        make_cfg(k_max=3)  # cannot resolve the shell
    with pytest.raises(ConfigurationError):
        make_cfg(scheme="euler", dt=1.0)  # heat stability
    with pytest.raises(ConfigurationError):
        make_cfg(scheme="rk4")
    with pytest.raises(ConfigurationError):
        make_cfg(grid_size=10)  # aliases products
    with pytest.raises(ConfigurationError):
        make_cfg(kappa_t=-1.0)


def test_zero_field_stays_zero():
    cfg = make_cfg()
    out = scalar.run_scalar(scalar.zero_field(8, 2), cfg)
    assert np.all(out.coeffs == 0)


def test_zero_noise_keeps_field():
    cfg = make_cfg()
    theta = scalar.field_from_modes(8, 2, {(1, 0): 0.5, (2, 1): 0.1j})
    modes = cfg.modes()
    nr = noise.NoiseRealization(
        modes=modes, dw=np.zeros((modes.n_modes, modes.n_frames), dtype=complex),
        dt=cfg.dt, stream=noise.RngStream(0), step=0,
    )
    out = scalar.step_scalar(theta, nr, cfg)  # midpoint: pure transport
    assert np.max(np.abs(out.coeffs - theta.normalize().coeffs)) < 1e-15


def test_euler_step_matches_dense_mode_coupling_oracle():
    cfg = make_cfg(scheme="euler")
    theta = scalar.field_from_modes(8, 2, {(1, 0): 0.5 + 0.2j})
    modes = cfg.modes()
    nr = noise.sample_increments(modes, cfg.dt, noise.RngStream(seed=3), step=0)
    out = scalar.step_scalar(theta, nr, cfg)

    K = 8
    oracle = theta.coeffs.copy()
    k2 = spectral.k_squared(K, 2)
    oracle = oracle + cfg.dt * cfg.kappa_t * (-k2) * theta.coeffs
    for m_ix in range(modes.n_modes):
        for j in range(modes.n_frames):
            pairs = [
                (modes.ks[m_ix], nr.dw[m_ix, j]),
                (-modes.ks[m_ix], np.conj(nr.dw[m_ix, j])),
            ]
            for kvec, dw in pairs:
                a = modes.frames[m_ix, j]
                th = modes.thetas[m_ix]
                for ix in np.ndindex(*theta.coeffs.shape):
                    cm = theta.coeffs[ix]
                    if cm == 0:
                        continue
                    m = np.array(ix) - K
                    tgt = m + kvec
                    if np.all(np.abs(tgt) <= K) and np.sum(tgt**2) <= K * K:
                        oracle[tuple(tgt + K)] += 1j * th * (a @ m) * cm * dw
    oracle = spectral.enforce_reality(oracle, 2)
    oracle = spectral.zero_mean(oracle, K, 2)
    oracle *= spectral.ball_mask(K, 2)
    assert np.max(np.abs(out.coeffs - oracle)) < 1e-15


def test_l2_norm_values():
    assert scalar.l2_norm(scalar.zero_field(8, 2)) == 0.0
    c = 0.3 - 0.4j
    f = scalar.field_from_modes(8, 2, {(2, 1): c})
    assert scalar.l2_norm(f) ** 2 == pytest.approx(
        2 * abs(c) ** 2 * TWO_PI**2, rel=1e-14
    )


def test_l2_norm_matches_physical_quadrature():
    f = scalar.random_smooth_field(8, 2, bandwidth=6, seed=4)
    vals = f.values(64)
    riemann = np.sqrt(np.mean(vals**2) * TWO_PI**2)
    assert scalar.l2_norm(f) == pytest.approx(riemann, abs=1e-10)


def test_heat_limit():
    f = scalar.field_from_modes(8, 2, {(1, 0): 1.0})
    assert np.array_equal(scalar.heat_limit(f, 0.0, 1.0).coeffs, f.coeffs)
    g = scalar.heat_limit(f, 1.0, 1.0)
    assert np.max(np.abs(g.coeffs)) == pytest.approx(np.exp(-1.0), rel=1e-14)
    h = scalar.random_smooth_field(8, 2, bandwidth=5, seed=1)
    assert scalar.l2_norm(scalar.heat_limit(h, 0.7, 1.0)) <= (
        scalar.l2_norm(h) * np.exp(-0.7) + 1e-12
    )
    with pytest.raises(ValueError):
        scalar.heat_limit(f, -0.1, 1.0)


def test_pathwise_conservation_and_invariants():
    cfg = make_cfg(t_end=0.05)
    theta0 = scalar.random_smooth_field(8, 2, bandwidth=3, seed=7)
    n0 = scalar.l2_norm(theta0) ** 2
    out = scalar.run_scalar(theta0, cfg, stream_id=2)
    assert abs(scalar.l2_norm(out) ** 2 - n0) / n0 < 1e-10
    assert out.max_reality_defect() < 1e-14
    center = out.coeffs[(8,) * 2]
    assert center == 0.0


def test_euler_conserves_only_in_expectation():
    cfg = make_cfg(scheme="euler", t_end=0.02)
    theta0 = scalar.random_smooth_field(8, 2, bandwidth=3, seed=7)
    n0 = scalar.l2_norm(theta0) ** 2
    drifts = []
    for p in range(24):
        out = scalar.run_scalar(theta0, cfg, stream_id=p)
        drifts.append(scalar.l2_norm(out) ** 2 - n0)
    drifts = np.array(drifts)
    # individual paths drift, the ensemble mean stays near zero
    assert np.max(np.abs(drifts)) / n0 > 1e-6
    se = drifts.std(ddof=1) / np.sqrt(len(drifts))
    assert abs(drifts.mean()) <= 4.0 * se + 1e-3 * n0


def test_maximum_principle_surrogate():
    cfg = make_cfg(t_end=0.05)
    theta0 = scalar.random_smooth_field(8, 2, bandwidth=2, seed=12)
    vals0 = theta0.values(cfg.grid_size)
    out = scalar.run_scalar(theta0, cfg, stream_id=1)
    vals = out.values(cfg.grid_size)
    margin = 0.1 * (vals0.max() - vals0.min())
    assert vals.max() <= vals0.max() + margin
    assert vals.min() >= vals0.min() - margin


def test_weak_error_trivial_cases():
    cfg = make_cfg()
    theta_bar = scalar.random_smooth_field(8, 2, bandwidth=2, seed=3)
    psi = scalar.field_from_modes(8, 2, {(1, 0): 1.0})
    est, se = scalar.weak_error([theta_bar, theta_bar], theta_bar, psi)
    assert est == 0.0
    # psi orthogonal to the active modes of both fields
    psi_far = scalar.field_from_modes(8, 2, {(7, 0): 1.0})
    f1 = scalar.field_from_modes(8, 2, {(1, 0): 0.5})
    f2 = scalar.field_from_modes(8, 2, {(0, 1): 0.25})
    est, _ = scalar.weak_error([f1], f2, psi_far)
    assert est < 1e-28
    with pytest.raises(ValueError):
        scalar.weak_error([], theta_bar, psi)


def test_renormalization_identity_and_constant():
    cfg = make_cfg(t_end=5e-3)
    theta0 = scalar.field_from_modes(8, 2, {(1, 0): 0.4, (0, 1): 0.3j})
    disc_id = scalar.renormalization_check(theta0, lambda v: v, cfg, stream_id=0)
    assert disc_id < 1e-10
    disc_const = scalar.renormalization_check(
        theta0, lambda v: np.full_like(v, 0.7), cfg, stream_id=0
    )
    assert disc_const < 1e-12


def test_renormalization_mismatched_streams_rejected():
    cfg = make_cfg()
    theta0 = scalar.field_from_modes(8, 2, {(1, 0): 0.4})
    with pytest.raises(ContractViolation):
        scalar.renormalization_check(theta0, lambda v: v, cfg,
                                     stream_id=0, stream_check=1)


def test_renormalization_square_self_convergence():
    theta0_modes = {(1, 0): 0.4, (0, 1): 0.3j}
    phi = lambda v: v**2
    disc = []
    for k_max, dt in ((8, 2e-3), (16, 1e-3)):
        cfg = scalar.ScalarRunConfig(d=2, n=2, kappa_t=1.0, k_max=k_max,
                                     dt=dt, t_end=0.02, seed=5)
        theta0 = scalar.field_from_modes(k_max, 2, theta0_modes)
        disc.append(scalar.renormalization_check(theta0, phi, cfg, stream_id=0))
    assert disc[1] <= 0.6 * disc[0]


def test_initial_field_must_match_config():
    cfg = make_cfg()
    with pytest.raises(ContractViolation):
        scalar.run_scalar(scalar.zero_field(4, 2), cfg)


def test_noise_modes_must_match_config():
    cfg = make_cfg()
    wrong = noise.sample_increments(noise.scalar_modes(3, 2, 1.0), cfg.dt,
                                    noise.RngStream(1), 0)
    with pytest.raises(ContractViolation):
        scalar.step_scalar(scalar.zero_field(8, 2), wrong, cfg)
