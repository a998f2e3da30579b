"""Kraichnan noise basis: wave vectors, frames, shell coefficients, increments.

The velocity ensemble is built from modes sigma_{k,j}(x) = theta_{k,j} a_{k,j}
e^{ik.x} where {k/|k|, a_{k,1}, ..., a_{k,d-1}} is an orthonormal frame of R^d,
a_{-k,j} = a_{k,j}, and the coefficients theta_{k,j} are supported on the
lattice shell n <= |k| <= 2n.  The driving complex Brownian motions satisfy
W^{-k,j} = conj(W^{k,j}) and E|W^{k,j}_1|^2 = 2, which makes every synthesized
field real valued and divergence free.

Mode tables store one representative per +/-k pair (the lexicographically
positive one); the mirror mode is implied by conjugation.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

TWO_PI = 2.0 * np.pi


def is_lex_positive(k):
    """Membership test for the positive half-lattice: first nonzero entry > 0."""
    for c in k:
        if c > 0:
            return True
        if c < 0:
            return False
    return False


def build_frame(k, d):
    """Orthonormal vectors a_{k,1..d-1} completing k/|k| to a frame of R^d.

    Deterministic canonical completion evaluated on the lexicographically
    positive representative, so that the frame for -k equals the frame for k.
    Raises ValueError on the zero vector.
    """
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (d,):
        raise ValueError(f"wave vector must have dimension {d}")
    if not np.any(k):
        raise ValueError("zero wave vector has no frame")
    if not is_lex_positive(k):
        k = -k
    khat = k / np.linalg.norm(k)

    if d == 2:
        a = np.array([-khat[1], khat[0]])
        return _fix_sign(a)[np.newaxis]

    # pick the axis least aligned with k, Gram-Schmidt it against khat
    axis = int(np.argmin(np.abs(khat)))
    e = np.zeros(d)
    e[axis] = 1.0
    a1 = e - np.dot(e, khat) * khat
    a1 = _fix_sign(a1 / np.linalg.norm(a1))
    if d == 3:
        a2 = _fix_sign(np.cross(khat, a1))
        return np.stack([a1, a2])
    raise ValueError("only d in {2, 3} supported")


def _fix_sign(a):
    for c in a:
        if abs(c) > 1e-12:
            return a if c > 0 else -a
    return a


def shell_vectors(n, d):
    """All lattice vectors with n <= |k| <= 2n, as an (M, d) int array."""
    if n < 1:
        raise ValueError("shell parameter n must be >= 1")
    ax = np.arange(-2 * n, 2 * n + 1)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    ks = np.stack([g.ravel() for g in grids], axis=-1)
    k2 = np.sum(ks * ks, axis=1)
    mask = (k2 >= n * n) & (k2 <= 4 * n * n) & (k2 > 0)
    return ks[mask]


def theta_scalar(k, n, d, kappa_t):
    """Shell coefficient sqrt(d kappa_T / ((d-1) c_n)) |k|^{-d/2} on the shell."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if kappa_t <= 0:
        raise ValueError("kappa_t must be positive")
    k = np.asarray(k, dtype=np.float64)
    norm = np.linalg.norm(k)
    if not (n <= norm <= 2 * n):
        return 0.0
    c_n = shell_sums(n, d).c_n
    return float(np.sqrt(d * kappa_t / ((d - 1) * c_n)) * norm ** (-d / 2))


def theta_vector(k, n, chi):
    """Shell coefficient sqrt(chi) |k|^{-5/2} on the shell (d = 3)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if chi <= 0:
        raise ValueError("chi must be positive")
    k = np.asarray(k, dtype=np.float64)
    norm = np.linalg.norm(k)
    if not (n <= norm <= 2 * n):
        return 0.0
    return float(np.sqrt(chi) * norm ** (-5.0 / 2.0))


@dataclass(frozen=True)
class ShellSums:
    """Exact lattice sums over the shell n <= |k| <= 2n."""

    n: int
    d: int
    c_n: float      # sum |k|^{-d}
    eta_n: float    # sum |k|^{-5}   (d = 3)
    alpha_n: float  # sum |k|^{-3}   (d = 3)


_SHELL_CACHE = {}


def shell_sums(n, d):
    key = (n, d)
    if key not in _SHELL_CACHE:
        ks = shell_vectors(n, d)
        k2 = np.sum(ks.astype(np.float64) ** 2, axis=1)
        c_n = float(np.sum(k2 ** (-d / 2.0)))
        eta = float(np.sum(k2 ** (-2.5)))
        alpha = float(np.sum(k2 ** (-1.5)))
        _SHELL_CACHE[key] = ShellSums(n=n, d=d, c_n=c_n, eta_n=eta, alpha_n=alpha)
    return _SHELL_CACHE[key]


@dataclass(frozen=True)
class NoiseModes:
    """Table of noise modes, one row per positive-half representative k.

    ks:     (M, d) int lattice vectors, all lexicographically positive
    frames: (M, d-1, d) frame vectors a_{k,j}
    thetas: (M,) shell coefficients (equal across j for a given k)
    """

    d: int
    n: int
    ks: np.ndarray
    frames: np.ndarray
    thetas: np.ndarray
    kind: str = "scalar"

    def __post_init__(self):
        if self.ks.ndim != 2 or self.ks.shape[1] != self.d:
            raise ContractViolation("mode table has wrong wave-vector shape")
        for k in self.ks:
            if not is_lex_positive(k):
                raise ContractViolation(
                    "mode table must list positive-half representatives only"
                )
        if len({tuple(k) for k in self.ks.tolist()}) != len(self.ks):
            raise ContractViolation("duplicate wave vectors in mode table")

    @property
    def n_modes(self):
        return len(self.ks)

    @property
    def n_frames(self):
        return self.d - 1

    def bandwidth(self):
        return 2 * self.n

    def isotropy_matrix(self):
        """sum over all (k, j), both signs, of theta^2 a_{k,j} (x) a_{k,j}."""
        aa = np.einsum("mjx,mjy->xy", self.frames, self.frames * self.thetas[:, None, None] ** 2)
        return 2.0 * aa

    def to_csv(self, path):
        cols = ["kx", "ky", "kz"][: self.d]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols + ["j", "theta"])
            for m in range(self.n_modes):
                for j in range(self.n_frames):
                    writer.writerow(
                        [*map(int, self.ks[m]), j + 1, f"{self.thetas[m]:.17g}"]
                    )


def _modes_from_shell(n, d, theta_of_norm, kind):
    ks_all = shell_vectors(n, d)
    ks = np.array([k for k in ks_all if is_lex_positive(k)], dtype=np.int64)
    frames = np.stack([build_frame(k, d) for k in ks])
    norms = np.linalg.norm(ks.astype(np.float64), axis=1)
    thetas = theta_of_norm(norms)
    return NoiseModes(d=d, n=n, ks=ks, frames=frames, thetas=thetas, kind=kind)


def scalar_modes(n, d, kappa_t):
    """Mode table for the passive-scalar noise at shell n."""
    if kappa_t <= 0:
        raise ValueError("kappa_t must be positive")
    c_n = shell_sums(n, d).c_n
    amp = np.sqrt(d * kappa_t / ((d - 1) * c_n))
    return _modes_from_shell(n, d, lambda r: amp * r ** (-d / 2.0), "scalar")


def vector_modes(n, chi=1.0):
    """Mode table for the vector-advection noise at shell n (d = 3)."""
    if chi <= 0:
        raise ValueError("chi must be positive")
    return _modes_from_shell(n, 3, lambda r: np.sqrt(chi) * r ** (-2.5), "vector")


@dataclass(frozen=True)
class RngStream:
    """Identifier of an independent, reproducible noise stream."""

    seed: int
    stream: int = 0


def _generator(stream, step):
    key = np.array([stream.seed, stream.stream], dtype=np.uint64)
    counter = np.array([0, 0, step, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class NoiseRealization:
    """Complex Brownian increments for one time step.

    dw holds DW^{k,j} for the positive-half representatives, shape
    (M, d-1); the mirror increments are DW^{-k,j} = conj(DW^{k,j}).
    E|DW^{k,j}|^2 = 2 dt with independent real and imaginary parts.
    """

    modes: NoiseModes
    dw: np.ndarray
    dt: float
    stream: RngStream
    step: int = 0

    def increment(self, k, j):
        """Look up DW^{k,j} for any shell vector k (1-based frame index j)."""
        k = np.asarray(k, dtype=np.int64)
        conj = not is_lex_positive(k)
        rep = -k if conj else k
        hits = np.nonzero(np.all(self.modes.ks == rep, axis=1))[0]
        if len(hits) == 0:
            raise KeyError(f"wave vector {k.tolist()} not in mode table")
        val = self.dw[hits[0], j - 1]
        return np.conj(val) if conj else val


def sample_increments(modes, dt, stream, step=0):
    """Draw one step of complex increments; deterministic in (seed, stream, step)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not isinstance(modes, NoiseModes):
        raise ContractViolation("modes must be a conjugation-closed NoiseModes table")
    g = _generator(stream, step)
    shape = (modes.n_modes, modes.n_frames)
    re = g.standard_normal(shape)
    im = g.standard_normal(shape)
    dw = np.sqrt(dt) * (re + 1j * im)
    return NoiseRealization(modes=modes, dw=dw, dt=dt, stream=stream, step=step)


def increment_field_coeffs(noise):
    """Centered coefficient cube (d, cube) of u(x) = sum sigma_{k,j} DW^{k,j}.

    The result is conjugate-symmetric by construction, so u is real valued,
    and each mode is orthogonal to its wave vector, so div u = 0.
    """
    modes = noise.modes
    d, bw = modes.d, modes.bandwidth()
    side = 2 * bw + 1
    buf = np.zeros((d,) + (side,) * d, dtype=np.complex128)
    amp = modes.thetas[:, None] * noise.dw          # (M, d-1)
    vec = np.einsum("mj,mjx->mx", amp, modes.frames)  # (M, d)
    idx_pos = tuple((modes.ks + bw).T)
    idx_neg = tuple((-modes.ks + bw).T)
    for c in range(d):
        np.add.at(buf[c], idx_pos, vec[:, c])
        np.add.at(buf[c], idx_neg, np.conj(vec[:, c]))
    return buf
