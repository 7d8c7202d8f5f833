"""Cone and degenerate-sector geometry, and the smooth normalized cutoffs
used to average singular fundamental solutions.

The angular cutoff chi lives on the unit sphere: it is a C-infinity plateau
bump on a geodesic cap, assembled from the standard mollifier profile
m(t) = exp(-1/t), and normalized so its surface integral is 1.  The planar
cutoff chi_1 is the analogous object on R^{d-1} with Euclidean balls; it
averages the sector's curve families.  Both are radially symmetric about
their center, which keeps normalization a 1-d quadrature.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gamma, roots_jacobi

__all__ = [
    "smoothstep",
    "smoothstep_d",
    "ConeSpec",
    "SectorSpec",
    "AngularCutoff",
    "PlanarCutoff",
    "DeltaWindow",
    "cutoff_eval",
    "cone_membership",
    "sector_membership",
    "admissible_delta_range",
    "sphere_area",
    "sphere_rule",
    "cap_polar_rule",
]


# ---------------------------------------------------------------------------
# smooth profiles
# ---------------------------------------------------------------------------

def _mollifier(t):
    """exp(-1/t) for t > 0, 0 otherwise (C-infinity)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(s):
    """C-infinity transition: 0 for s <= 0, 1 for s >= 1, built from exp(-1/t)."""
    s = np.asarray(s, dtype=float)
    a = _mollifier(s)
    b = _mollifier(1.0 - s)
    return a / (a + b + np.finfo(float).tiny)


def smoothstep_d(s):
    """Derivative of smoothstep (closed form)."""
    s = np.asarray(s, dtype=float)
    a = _mollifier(s)
    b = _mollifier(1.0 - s)
    da = np.zeros_like(s)
    db = np.zeros_like(s)
    pos = s > 0
    da[pos] = a[pos] / s[pos] ** 2
    neg = s < 1
    db[neg] = -b[neg] / (1.0 - s[neg]) ** 2
    denom = (a + b + np.finfo(float).tiny) ** 2
    return (da * b - a * db) / denom


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

class ConeSpec:
    """Solid cone {x : angle(x - vertex, axis) <= angle}, angle in (0, pi/2)."""

    def __init__(self, vertex, axis, angle):
        vertex = np.asarray(vertex, dtype=float)
        axis = np.asarray(axis, dtype=float)
        if vertex.shape != axis.shape or vertex.ndim != 1:
            raise ValueError("vertex/axis must be d-vectors of equal length")
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-14:
            axis = axis / norm
        if not 0 < angle < np.pi / 2:
            raise ValueError("cone angle must lie in (0, pi/2)")
        self.vertex = vertex
        self.axis = axis
        self.angle = float(angle)
        self.dim = vertex.size

    def membership(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = x - self.vertex
        rn = np.linalg.norm(r, axis=-1)
        proj = r @ self.axis
        # vertex itself is a member; elsewhere compare angles via cosines
        with np.errstate(invalid="ignore", divide="ignore"):
            cosb = np.where(rn > 0, proj / np.where(rn > 0, rn, 1.0), 1.0)
        return cosb >= np.cos(self.angle) - 1e-15

    def outside_distance(self, x):
        """Euclidean distance to the cone (exact; 0 inside)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = x - self.vertex
        rn = np.linalg.norm(r, axis=-1)
        proj = r @ self.axis
        with np.errstate(invalid="ignore", divide="ignore"):
            cosb = np.where(rn > 0, np.clip(proj / np.where(rn > 0, rn, 1.0), -1, 1), 1.0)
        beta = np.arccos(cosb)
        gap = beta - self.angle
        dist = np.where(
            gap <= 0, 0.0, np.where(gap >= np.pi / 2, rn, rn * np.sin(np.maximum(gap, 0)))
        )
        return dist


class SectorSpec:
    """Degenerate sector {(x', x_d) : x_d >= floor, |x'| <= x_d^alpha}."""

    def __init__(self, alpha, floor=1.0, dim=3):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = float(alpha)
        self.floor = float(floor)
        self.dim = int(dim)

    def membership(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xd = x[..., -1]
        rp = np.linalg.norm(x[..., :-1], axis=-1)
        return (xd >= self.floor) & (rp <= np.power(np.maximum(xd, 0.0), self.alpha))

    def outside_distance(self, x):
        """Lower bound on the distance to the sector (exact inside: 0).

        The lateral gap |x'| - x_d^alpha is divided by sqrt(1 + alpha^2),
        a bound on the boundary slope for x_d >= 1, so the value never
        exceeds the true Euclidean distance.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xd = x[..., -1]
        rp = np.linalg.norm(x[..., :-1], axis=-1)
        below = np.maximum(self.floor - xd, 0.0)
        xd_cl = np.maximum(xd, self.floor)
        lateral = np.maximum(rp - np.power(xd_cl, self.alpha), 0.0)
        lateral /= np.sqrt(1.0 + self.alpha**2)
        return np.sqrt(below**2 + lateral**2)

    def solving_window(self):
        return admissible_delta_range(self.dim, self.alpha)


def cone_membership(spec, x):
    return spec.membership(x)


def sector_membership(spec, x):
    return spec.membership(x)


class DeltaWindow:
    """Admissible weight window (lo, hi); empty when lo >= hi."""

    def __init__(self, lo, hi):
        self.lo = float(lo)
        self.hi = float(hi)

    @property
    def is_empty(self):
        return not self.lo < self.hi

    def contains(self, delta):
        return self.lo < delta < self.hi

    def __iter__(self):
        return iter((self.lo, self.hi))

    def __repr__(self):
        tag = " (empty)" if self.is_empty else ""
        return f"DeltaWindow({self.lo:g}, {self.hi:g}){tag}"


def admissible_delta_range(d, alpha):
    """Sector solve window ((3-(d+3)a)/2, (a(d-1)-3)/2); empty iff a <= 3/(d+1)."""
    if d < 3:
        raise ValueError("d must be >= 3")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lo = (3.0 - (d + 3.0) * alpha) / 2.0
    hi = (alpha * (d - 1.0) - 3.0) / 2.0
    return DeltaWindow(lo, hi)


# ---------------------------------------------------------------------------
# sphere quadrature
# ---------------------------------------------------------------------------

def sphere_area(d):
    """Surface measure of S^{d-1}."""
    return 2.0 * np.pi ** (d / 2.0) / gamma(d / 2.0)


def _circle_rule(n):
    ang = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    w = np.full(n, 2.0 * np.pi / n)
    return pts, w


def sphere_rule(d, order):
    """Product quadrature on S^{d-1}: nodes (n, d) and weights summing to |S^{d-1}|.

    d=3 uses Gauss-Legendre in the polar cosine times a trapezoid ring in
    azimuth (spectrally accurate for smooth integrands); higher d recurses
    with Gauss-Jacobi in each extra polar cosine.
    """
    if d == 2:
        return _circle_rule(max(4, 4 * order))
    if d == 3:
        u, wu = leggauss(max(4, order))
        pts_list, w_list = [], []
        m = max(6, 2 * order)
        ang = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        ca, sa = np.cos(ang), np.sin(ang)
        for ui, wi in zip(u, wu):
            s = np.sqrt(max(0.0, 1.0 - ui * ui))
            ring = np.stack([s * ca, s * sa, np.full(m, ui)], axis=1)
            pts_list.append(ring)
            w_list.append(np.full(m, wi * 2.0 * np.pi / m))
        return np.concatenate(pts_list), np.concatenate(w_list)
    # recursive: x = (sqrt(1-u^2) z, u), dEsigma_d = (1-u^2)^{(d-3)/2} du dsigma_{d-1}
    sub_pts, sub_w = sphere_rule(d - 1, order)
    a = (d - 3) / 2.0
    u, wu = roots_jacobi(max(4, order), a, a)
    pts_list, w_list = [], []
    for ui, wi in zip(u, wu):
        s = np.sqrt(max(0.0, 1.0 - ui * ui))
        block = np.concatenate([s * sub_pts, np.full((sub_pts.shape[0], 1), ui)], axis=1)
        pts_list.append(block)
        # Jacobi weight already includes (1-u^2)^a
        w_list.append(wi * sub_w)
    return np.concatenate(pts_list), np.concatenate(w_list)


def _rotation_to(target, d):
    """Orthogonal matrix taking e_d (last axis) to ``target``."""
    e = np.zeros(d)
    e[-1] = 1.0
    v = np.asarray(target, dtype=float)
    v = v / np.linalg.norm(v)
    c = float(e @ v)
    if c > 1.0 - 1e-14:
        return np.eye(d)
    if c < -1.0 + 1e-14:
        R = -np.eye(d)
        R[0, 0] = 1.0
        return R
    # rotation in the plane span(e, v), identity on its complement
    u = v - c * e
    u = u / np.linalg.norm(u)
    s = np.sqrt(max(0.0, 1.0 - c * c))
    return np.eye(d) + (c - 1.0) * (np.outer(e, e) + np.outer(u, u)) \
        + s * (np.outer(u, e) - np.outer(e, u))


def cap_polar_rule(center, cap_radius, n_polar, n_azimuth, d=3):
    """Quadrature over the geodesic cap of radius ``cap_radius`` about ``center``.

    Gauss-Legendre in the polar cosine over [cos(cap_radius), 1] times
    azimuth rings (ring counts shrink toward the cap center so the total
    arc spacing stays roughly uniform).  Exact measure, nodes strictly
    inside the cap.
    """
    if d != 3:
        # product rule on the sphere restricted by the cap via weights
        pts, w = sphere_rule(d, max(n_polar, n_azimuth))
        keep = pts @ (np.asarray(center) / np.linalg.norm(center)) >= np.cos(cap_radius)
        return pts[keep], w[keep]
    u, wu = leggauss(max(4, n_polar))
    lo = np.cos(cap_radius)
    u = 0.5 * (u + 1.0) * (1.0 - lo) + lo
    wu = wu * 0.5 * (1.0 - lo)
    s = np.sqrt(np.maximum(0.0, 1.0 - u * u))
    psi = np.arccos(np.clip(u, -1, 1))
    m = np.maximum(6, np.ceil(n_azimuth * psi / cap_radius)).astype(int)
    ring_id = np.repeat(np.arange(u.size), m)
    pos = np.concatenate([np.arange(mi) for mi in m])
    ang = 2.0 * np.pi * (pos + 0.5) / m[ring_id]
    pts = np.stack(
        [s[ring_id] * np.cos(ang), s[ring_id] * np.sin(ang), u[ring_id]], axis=1
    )
    w = (wu * 2.0 * np.pi / m)[ring_id]
    R = _rotation_to(center, 3)
    return pts @ R.T, w


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------

class AngularCutoff:
    """Normalized C-infinity plateau bump on a geodesic cap of S^{d-1}.

    chi equals the normalization constant on the inner cap, transitions
    smoothly, and is exactly zero outside the outer cap.  The closure of
    the cone over supp chi is convex, enforced by outer_radius < pi/2.
    """

    def __init__(self, center, inner_radius, outer_radius, dim=3, _uniform=False):
        center = np.asarray(center, dtype=float)
        self.dim = int(dim)
        self.uniform = bool(_uniform)
        if self.uniform:
            self.center = center / np.linalg.norm(center) if center.any() else center
            self.inner_radius = self.outer_radius = np.pi
            self.normalization = 1.0 / sphere_area(self.dim)
            return
        n = np.linalg.norm(center)
        if n == 0:
            raise ValueError("cap center must be a nonzero direction")
        center = center / n
        if not 0 < inner_radius < outer_radius:
            raise ValueError("need 0 < inner_radius < outer_radius")
        if not outer_radius < np.pi / 2:
            raise ValueError("outer_radius must be < pi/2 (convex support cone)")
        self.center = center
        self.inner_radius = float(inner_radius)
        self.outer_radius = float(outer_radius)
        self.normalization = 1.0 / self._profile_integral()

    @classmethod
    def uniform_sphere(cls, dim=3):
        """chi == 1/|S^{d-1}| on the whole sphere (Newtonian cross-check limit)."""
        e = np.zeros(dim)
        e[-1] = 1.0
        return cls(e, 0.1, 0.2, dim=dim, _uniform=True)

    def _raw_profile(self, psi):
        """Unnormalized plateau profile in the geodesic distance psi."""
        r0, r1 = self.inner_radius, self.outer_radius
        return smoothstep((r1 - np.asarray(psi, dtype=float)) / (r1 - r0))

    def _profile_integral(self, order=None):
        """Integral of the unnormalized profile over S^{d-1} (1-d quadrature)."""
        order = order or 120
        u, w = leggauss(order)
        lo = np.cos(self.outer_radius)
        uu = 0.5 * (u + 1.0) * (1.0 - lo) + lo
        ww = w * 0.5 * (1.0 - lo)
        psi = np.arccos(np.clip(uu, -1, 1))
        vals = self._raw_profile(psi) * np.sin(psi) ** (self.dim - 3)
        # measure: |S^{d-2}| (1-u^2)^{(d-3)/2} du with u = cos psi
        return sphere_area(self.dim - 1) * float(np.sum(ww * vals))

    def normalization_residual(self):
        """Change of the normalization when the quadrature order doubles."""
        if self.uniform:
            return 0.0
        return abs(1.0 / self._profile_integral(order=240) - self.normalization) \
            * self._profile_integral()

    def eval(self, points):
        """chi at unit vectors ``points`` (shape (..., d))."""
        p = np.asarray(points, dtype=float)
        if self.uniform:
            return np.full(p.shape[:-1], self.normalization)
        norms = np.linalg.norm(p, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise ValueError("AngularCutoff.eval expects unit vectors")
        cosd = np.clip(p @ self.center, -1.0, 1.0)
        psi = np.arccos(cosd)
        return self.normalization * self._raw_profile(psi)

    def support_cone(self, vertex=None):
        """The (convex) solid cone over supp chi."""
        v = np.zeros(self.dim) if vertex is None else vertex
        if self.uniform:
            raise ValueError("uniform cutoff has no proper support cone")
        return ConeSpec(v, self.center, self.outer_radius)


class PlanarCutoff:
    """Normalized C-infinity plateau bump on R^{d-1} (Euclidean balls)."""

    def __init__(self, center, inner_radius, outer_radius, dim=3):
        self.dim = int(dim)  # ambient dimension d; the cutoff lives on R^{d-1}
        center = np.zeros(self.dim - 1) if center is None else np.asarray(center, dtype=float)
        if center.size != self.dim - 1:
            raise ValueError("planar cutoff center must be a (d-1)-vector")
        if not 0 < inner_radius < outer_radius:
            raise ValueError("need 0 < inner_radius < outer_radius")
        self.center = center
        self.inner_radius = float(inner_radius)
        self.outer_radius = float(outer_radius)
        self.normalization = 1.0 / self._profile_integral()

    def _raw_profile(self, rho):
        r0, r1 = self.inner_radius, self.outer_radius
        return smoothstep((r1 - np.asarray(rho, dtype=float)) / (r1 - r0))

    def _profile_integral(self, order=None):
        order = order or 120
        u, w = leggauss(order)
        rho = 0.5 * (u + 1.0) * self.outer_radius
        ww = w * 0.5 * self.outer_radius
        m = self.dim - 1  # dimension of the plane
        ring = sphere_area(m) if m >= 2 else 2.0
        vals = self._raw_profile(rho) * rho ** (m - 1)
        return ring * float(np.sum(ww * vals))

    def normalization_residual(self):
        return abs(1.0 / self._profile_integral(order=240) - self.normalization) \
            * self._profile_integral()

    def eval(self, omega):
        """chi_1 at (d-1)-vectors ``omega`` (shape (..., d-1))."""
        o = np.asarray(omega, dtype=float)
        rho = np.linalg.norm(o - self.center, axis=-1)
        return self.normalization * self._raw_profile(rho)


def cutoff_eval(chi, point):
    """Evaluate an angular or planar cutoff at one point (spec surface)."""
    val = chi.eval(np.asarray(point, dtype=float)[None, :])
    return float(val[0])
