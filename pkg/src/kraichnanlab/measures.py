"""Empirical Young measures, occupation measures and the weak-topology metric.

A gridded Young measure assigns to every cube cell of the torus a probability
histogram over a bounded b-box (k = 1 for scalars, k = 3 for vectors) plus an
explicit overflow bin; per-cell weights sum to one, matching the defining
property mu(A x R^k) = Leb(A) after cell normalization.  Pairings, barycenters
and second moments are cell/bin-center quadratures.  The metric on measures is
the weighted series rho(mu, nu) = sum_i 2^{-i} |int g_i d(mu - nu)| over a
fixed enumeration of capped-cone functions; any admissible enumeration
induces the weak topology, so tests rely on metric axioms only.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import ResolutionError

TWO_PI = 2.0 * np.pi

OVERFLOW_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class BBins:
    """Uniform rectangular histogram bins over a box in R^k, plus overflow.

    lo, hi: (k,) box corners; counts: (k,) bins per axis.  Flat bin indices
    run over the box bins in C order; index `n_box` is the overflow bin.
    """

    lo: np.ndarray
    hi: np.ndarray
    counts: np.ndarray

    @classmethod
    def regular(cls, k, lo, hi, count):
        return cls(
            lo=np.full(k, float(lo)),
            hi=np.full(k, float(hi)),
            counts=np.full(k, int(count)),
        )

    @property
    def k(self):
        return len(self.counts)

    @property
    def n_box(self):
        return int(np.prod(self.counts))

    @property
    def n_total(self):
        return self.n_box + 1

    def widths(self):
        return (self.hi - self.lo) / self.counts

    def centers(self):
        """(n_box, k) array of box-bin centers (overflow excluded)."""
        axes = [
            self.lo[a] + (np.arange(self.counts[a]) + 0.5) * self.widths()[a]
            for a in range(self.k)
        ]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def flat_index(self, values):
        """Map (..., k) values to flat bin indices; out-of-box -> overflow."""
        values = np.asarray(values, dtype=np.float64)
        idx = np.floor((values - self.lo) / self.widths()).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.counts), axis=-1)
        idx = np.clip(idx, 0, self.counts - 1)
        flat = np.zeros(values.shape[:-1], dtype=np.int64)
        for a in range(self.k):
            flat = flat * self.counts[a] + idx[..., a]
        return np.where(inside, flat, self.n_box)


@dataclass
class GriddedYoungMeasure:
    """x-cell x b-bin histogram over T^d x R^k.

    weights has shape (m_cells^d, n_total); each row sums to one.
    """

    d: int
    m_cells: int
    bins: BBins
    weights: np.ndarray

    def __post_init__(self):
        if self.weights.shape != (self.n_cells, self.bins.n_total):
            raise ValueError("weights shape mismatch")

    @property
    def n_cells(self):
        return self.m_cells**self.d

    def cell_volume(self):
        return (TWO_PI / self.m_cells) ** self.d

    def cell_centers(self):
        ax = TWO_PI * (np.arange(self.m_cells) + 0.5) / self.m_cells
        grids = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def overflow_mass(self):
        """Overflow probability averaged over cells."""
        return float(np.mean(self.weights[:, -1]))

    def normalization_defect(self):
        return float(np.max(np.abs(self.weights.sum(axis=1) - 1.0)))

    def copy(self):
        return GriddedYoungMeasure(self.d, self.m_cells, self.bins, self.weights.copy())


def _field_values_and_gridshape(field, ngrid):
    vals = field.values(ngrid)
    if vals.ndim == field.d + 1:  # vector field: component axis first
        vals = np.moveaxis(vals, 0, -1)
        k = vals.shape[-1]
    else:
        vals = vals[..., np.newaxis]
        k = 1
    return vals, k


def _auto_grid(field, m_cells):
    base = 2 * field.k_max + 2
    return int(m_cells * int(np.ceil(base / m_cells)))


def empirical_measure_from_values(values, d, m_cells, bins):
    """Empirical Young measure from raw grid values.

    values: (ngrid,)*d array of scalars, or (ngrid,)*d + (k,) for vectors.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == d:
        values = values[..., np.newaxis]
    ngrid = values.shape[0]
    if ngrid < m_cells or ngrid % m_cells != 0:
        raise ResolutionError("physical grid must refine the x-cell partition")
    if values.shape[-1] != bins.k:
        raise ValueError("value dimension does not match the bins")
    flat_bins = bins.flat_index(values)                  # grid shape
    per = ngrid // m_cells
    cell_of_axis = np.arange(ngrid) // per
    grids = np.meshgrid(*([cell_of_axis] * d), indexing="ij")
    cell_idx = np.zeros((ngrid,) * d, dtype=np.int64)
    for a in range(d):
        cell_idx = cell_idx * m_cells + grids[a]
    n_cells = m_cells**d
    combo = cell_idx.ravel() * bins.n_total + flat_bins.ravel()
    counts = np.bincount(combo, minlength=n_cells * bins.n_total).astype(np.float64)
    weights = counts.reshape(n_cells, bins.n_total)
    weights /= per**d
    return GriddedYoungMeasure(d=d, m_cells=m_cells, bins=bins, weights=weights)


def empirical_measure(field, m_cells, bins, ngrid=None):
    """Empirical Young measure of a spectral field.

    Per x-cell, the histogram of field values over the physical grid points
    falling in the cell; Dirac (constant) data yields one-hot rows.
    """
    ngrid = ngrid or _auto_grid(field, m_cells)
    if ngrid < m_cells or ngrid % m_cells != 0:
        raise ResolutionError("physical grid must refine the x-cell partition")
    vals, k = _field_values_and_gridshape(field, ngrid)
    if k != bins.k:
        raise ValueError("field dimension does not match the bins")
    return empirical_measure_from_values(vals, field.d, m_cells, bins)


@dataclass
class BDistribution:
    """Probability histogram over a BBins box (single-location measure)."""

    bins: BBins
    weights: np.ndarray
    stderr: np.ndarray | None = None

    def overflow_mass(self):
        return float(self.weights[-1])


def occupation_measure(field, x0, eps, bins, ngrid=None, min_points=100):
    """Push-forward of normalized Lebesgue measure on the ball B(x0, eps).

    Histogram of field values over grid points within torus distance eps of
    x0; requires the ball to contain at least `min_points` grid points.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = field.d
    ngrid = ngrid or _auto_grid(field, 1)
    vals, k = _field_values_and_gridshape(field, ngrid)
    if k != bins.k:
        raise ValueError("field dimension does not match the bins")
    x = spectral.grid_points(ngrid, d)
    x0 = np.asarray(x0, dtype=np.float64).reshape((d,) + (1,) * d)
    diff = np.abs(x - x0)
    diff = np.minimum(diff, TWO_PI - diff)
    mask = np.sum(diff**2, axis=0) <= eps**2
    n_pts = int(np.sum(mask))
    if n_pts < min_points:
        raise ResolutionError(
            f"ball B(x0, {eps}) resolved by only {n_pts} grid points (< {min_points})"
        )
    flat = bins.flat_index(vals[mask])
    counts = np.bincount(flat, minlength=bins.n_total).astype(np.float64)
    return BDistribution(bins=bins, weights=counts / n_pts)


def measure_from_ball_aggregate(measure, x0, eps):
    """Aggregate the cells of a GriddedYoungMeasure whose centers lie in the
    ball B(x0, eps); consistency oracle for `occupation_measure`."""
    centers = measure.cell_centers()
    x0 = np.asarray(x0, dtype=np.float64)
    diff = np.abs(centers - x0)
    diff = np.minimum(diff, TWO_PI - diff)
    sel = np.sum(diff**2, axis=1) <= eps**2
    if not np.any(sel):
        raise ResolutionError("no cells inside the ball")
    w = measure.weights[sel].mean(axis=0)
    return BDistribution(bins=measure.bins, weights=w / w.sum())


def _warn_overflow(measure, what):
    if measure.overflow_mass() > OVERFLOW_WARN_FRACTION:
        warnings.warn(
            f"{what}: overflow mass {measure.overflow_mass():.3g} exceeds "
            f"{OVERFLOW_WARN_FRACTION:.0%}",
            RuntimeWarning,
            stacklevel=3,
        )


def pair(measure, phi, psi):
    """int phi(b) psi(x) mu(x, db) dx by cell/bin-center quadrature.

    phi: callable on (n, k) arrays of b values; psi: callable on (n, d)
    arrays of torus points.  Overflow mass is excluded (and warned about).
    """
    _warn_overflow(measure, "pair")
    phi_vals = np.asarray(phi(measure.bins.centers()), dtype=np.float64)
    psi_vals = np.asarray(psi(measure.cell_centers()), dtype=np.float64)
    inner = measure.weights[:, :-1] @ phi_vals
    return float(np.sum(psi_vals * inner) * measure.cell_volume())


def mean_field(measure):
    """Per-cell barycenter int b mu(x, db); shape (n_cells, k)."""
    _warn_overflow(measure, "mean_field")
    centers = measure.bins.centers()
    return measure.weights[:, :-1] @ centers


def second_moment(measure):
    """int |b|^2 mu(x, db) dx (overflow excluded; warned if > 1%)."""
    _warn_overflow(measure, "second_moment")
    b2 = np.sum(measure.bins.centers() ** 2, axis=1)
    return float(np.sum(measure.weights[:, :-1] @ b2) * measure.cell_volume())


# ---------------------------------------------------------------------------
# The metric on probability measures
# ---------------------------------------------------------------------------


def _halton(index, base):
    f, r = 1.0, 0.0
    i = index
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


_HALTON_BASES = (2, 3, 5, 7, 11, 13)


def _dense_points(n_points, d, k, b_box):
    """Deterministic low-discrepancy points on T^d x [-b_box, b_box]^k."""
    pts = np.empty((n_points, d + k))
    for i in range(n_points):
        for a in range(d + k):
            u = _halton(i + 1, _HALTON_BASES[a])
            pts[i, a] = TWO_PI * u if a < d else b_box * (2.0 * u - 1.0)
    return pts


@dataclass(frozen=True)
class ConeFunction:
    """g = sign * max_l ((a_l - b_l * dist(., p_l)) v c_l), 1-bounded Lipschitz."""

    sign: float
    points: np.ndarray   # (L, d + k)
    a: np.ndarray        # (L,)
    b: np.ndarray        # (L,) nonnegative
    c: np.ndarray        # (L,)
    d: int

    def __call__(self, x, b_vals):
        """Evaluate at torus points x (..., d) and values b_vals (..., k)."""
        x = np.asarray(x, dtype=np.float64)
        b_vals = np.asarray(b_vals, dtype=np.float64)
        out = None
        for l in range(len(self.a)):
            px = self.points[l, : self.d]
            pb = self.points[l, self.d:]
            dx = np.abs(x - px)
            dx = np.minimum(dx, TWO_PI - dx)
            dist = np.sqrt(np.sum(dx**2, axis=-1) + np.sum((b_vals - pb) ** 2, axis=-1))
            f = np.maximum(self.a[l] - self.b[l] * dist, self.c[l])
            out = f if out is None else np.maximum(out, f)
        return self.sign * out


@dataclass(frozen=True)
class MeasureMetricFamily:
    """Fixed enumeration g_1..g_N from the capped-cone lattice.

    The tail of the metric series is bounded by 2^{1-N} for probability
    measures since every |int g_i d(mu - nu)| <= 2.
    """

    funcs: tuple
    n_funcs: int
    d: int
    k: int

    @property
    def tail_bound(self):
        return 2.0 ** (1 - self.n_funcs)


FAMILY_ENUMERATION_SEED = 20240901


def build_metric_family(n_funcs=64, d=3, k=3, b_box=4.0, n_dense=128, seed=None):
    """Deterministic admissible enumeration of the function lattice.

    Rational parameters are drawn (reproducibly) on dyadic grids with
    a in [-1, 1], b >= 0, c in [-1, a], so every g is 1-bounded and
    Lipschitz; maxima of up to three cones and both signs occur.
    """
    seed = FAMILY_ENUMERATION_SEED if seed is None else seed
    rng = np.random.default_rng(seed)
    dense = _dense_points(n_dense, d, k, b_box)
    funcs = []
    for _ in range(n_funcs):
        n_terms = int(rng.integers(1, 4))
        sel = rng.integers(0, n_dense, size=n_terms)
        a = rng.integers(-8, 9, size=n_terms) / 8.0
        b = rng.integers(0, 17, size=n_terms) / 4.0
        c_hi = np.floor(a * 8).astype(int)
        c = np.array([rng.integers(-8, hi + 1) / 8.0 for hi in c_hi])
        funcs.append(
            ConeFunction(
                sign=1.0 if rng.integers(0, 2) == 0 else -1.0,
                points=dense[sel],
                a=a.astype(float),
                b=b.astype(float),
                c=c,
                d=d,
            )
        )
    return MeasureMetricFamily(funcs=tuple(funcs), n_funcs=n_funcs, d=d, k=k)


def _integrate_family(measure, family):
    """int g_i dmu for all i, treating mu as the probability measure
    (uniform over cells) x (per-cell histogram); overflow mass sits at a
    fixed anchor outside the box."""
    cells = measure.cell_centers()
    centers = measure.bins.centers()
    anchor = 2.0 * np.abs(measure.bins.hi) + 1.0
    n_c = measure.n_cells
    vals = np.empty(family.n_funcs)
    x_rep = np.repeat(cells, measure.bins.n_box, axis=0)
    b_rep = np.tile(centers, (n_c, 1))
    w = (measure.weights[:, :-1] / n_c).ravel()
    w_over = measure.weights[:, -1] / n_c
    for i, g in enumerate(family.funcs):
        gv = g(x_rep, b_rep)
        g_over = g(cells, np.broadcast_to(anchor, (n_c, measure.bins.k)))
        vals[i] = float(gv @ w + g_over @ w_over)
    return vals


def rho_distance(mu, nu, family):
    """Weighted-series distance sum_i 2^{-i} |int g_i d(mu - nu)|.

    The reported value omits the series tail, which is bounded by
    `family.tail_bound`.
    """
    if mu.d != nu.d or mu.bins.k != nu.bins.k:
        raise ValueError("measures live on different spaces")
    vi = _integrate_family(mu, family)
    vj = _integrate_family(nu, family)
    weights = 2.0 ** (-np.arange(1, family.n_funcs + 1))
    return float(np.sum(weights * np.abs(vi - vj)))
