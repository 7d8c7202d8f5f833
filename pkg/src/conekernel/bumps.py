"""Smooth compactly supported test functions with closed-form derivatives.

The standard radial bump exp(-1/(1 - |x-c|^2/rho^2)) (zero outside the
ball) drives seeds, distributional-identity checks, and the randomized
property suites.  Gradient and Hessian are available analytically so the
kernel-level identity checks never touch grid sampling.
"""

import numpy as np

__all__ = ["RadialBump", "random_bump", "random_bump_in_cone", "random_bump_in_sector"]


class RadialBump:
    """amplitude * exp(-1/(1 - |x-c|^2/rho^2)) on |x-c| < rho, else 0."""

    def __init__(self, center, radius, amplitude=1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self):
        return self.center.size

    def _q(self, x):
        """q = |x-c|^2 / rho^2 and the displacement."""
        dx = np.asarray(x, dtype=float) - self.center
        q = np.sum(dx * dx, axis=-1) / self.radius**2
        return q, dx

    def __call__(self, x):
        q, _ = self._q(x)
        out = np.zeros_like(q)
        inside = q < 1.0
        out[inside] = self.amplitude * np.exp(-1.0 / (1.0 - q[inside]))
        return out

    def gradient(self, x):
        """Closed-form gradient, shape (..., d)."""
        q, dx = self._q(x)
        out = np.zeros_like(dx)
        inside = q < 1.0
        g = 1.0 - q[inside]
        # grad f = -2 f dx / (g^2 rho^2)
        fac = -2.0 * self.amplitude * np.exp(-1.0 / g) / (g**2 * self.radius**2)
        out[inside] = fac[..., None] * dx[inside]
        return out

    def hessian(self, x):
        """Closed-form Hessian, shape (..., d, d)."""
        x = np.asarray(x, dtype=float)
        q, dx = self._q(x)
        d = self.dim
        out = np.zeros(q.shape + (d, d))
        inside = q < 1.0
        g = 1.0 - q[inside]
        e = self.amplitude * np.exp(-1.0 / g)
        # grad f = c(q) dx with c = -2 e / (g^2 rho^2);  H = c I + (2/rho^2) c'(q) dx x dx
        c = -2.0 * e / (g**2 * self.radius**2)
        dc_dq = (2.0 * e / self.radius**2) * (1.0 / g**4 - 2.0 / g**3)
        outer = dx[inside][..., :, None] * dx[inside][..., None, :]
        out[inside] = c[..., None, None] * np.eye(d) \
            + (2.0 / self.radius**2) * dc_dq[..., None, None] * outer
        return out

    def hessian_quadform(self, x, u, v):
        """u^T H(x) v without materializing the Hessian.

        H = c(q) I + (2/rho^2) c'(q) dx (x) dx, so the form is
        c (u.v) + (2/rho^2) c' (u.dx)(v.dx).  ``u``/``v`` broadcast
        against the leading shape of ``x``.
        """
        q, dx = self._q(x)
        out = np.zeros_like(q)
        inside = q < 1.0
        g = 1.0 - q[inside]
        e = self.amplitude * np.exp(-1.0 / g)
        c = -2.0 * e / (g**2 * self.radius**2)
        dc_dq = (2.0 * e / self.radius**2) * (1.0 / g**4 - 2.0 / g**3)
        uv = np.broadcast_to(np.sum(u * v, axis=-1), q.shape)[inside]
        udx = np.sum(np.broadcast_to(u, dx.shape)[inside] * dx[inside], axis=-1)
        vdx = np.sum(np.broadcast_to(v, dx.shape)[inside] * dx[inside], axis=-1)
        out[inside] = c * uv + (2.0 / self.radius**2) * dc_dq * udx * vdx
        return out

    def support_bounds(self):
        return self.center - self.radius, self.center + self.radius


class GaussianBump:
    """amplitude * exp(-|x-c|^2 / (2 s^2)) with closed-form derivatives.

    Not compactly supported, but the tails fall below double precision a
    few widths out; preferred as a weak-identity test function because
    its high derivatives stay grid-resolvable (the compact bump's do not
    near its support edge).
    """

    def __init__(self, center, width, amplitude=1.0):
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)
        self.amplitude = float(amplitude)

    @property
    def dim(self):
        return self.center.size

    def __call__(self, x):
        dx = np.asarray(x, dtype=float) - self.center
        return self.amplitude * np.exp(-np.sum(dx * dx, axis=-1) / (2.0 * self.width**2))

    def gradient(self, x):
        dx = np.asarray(x, dtype=float) - self.center
        return -self(x)[..., None] * dx / self.width**2

    def hessian(self, x):
        dx = np.asarray(x, dtype=float) - self.center
        f = self(x)
        d = self.dim
        outer = dx[..., :, None] * dx[..., None, :]
        return f[..., None, None] * (outer / self.width**4 - np.eye(d) / self.width**2)

    def support_bounds(self):
        reach = 9.0 * self.width
        return self.center - reach, self.center + reach


def random_bump(rng, center_box, radius_range, dim=3, amplitude_range=(0.5, 2.0)):
    lo, hi = np.asarray(center_box[0], float), np.asarray(center_box[1], float)
    c = lo + (hi - lo) * rng.random(dim)
    rho = radius_range[0] + (radius_range[1] - radius_range[0]) * rng.random()
    amp = amplitude_range[0] + (amplitude_range[1] - amplitude_range[0]) * rng.random()
    return RadialBump(c, rho, amp)


def random_bump_in_cone(rng, cone, axial_range, radius_range, margin):
    """Random bump whose support ball sits inside ``cone`` with ``margin``."""
    for _ in range(200):
        L = axial_range[0] + (axial_range[1] - axial_range[0]) * rng.random()
        rho = radius_range[0] + (radius_range[1] - radius_range[0]) * rng.random()
        room = L * np.sin(cone.angle) - rho - margin
        if room <= 0:
            continue
        # random lateral offset keeping the ball strictly inside
        perp = rng.standard_normal(cone.dim)
        perp -= (perp @ cone.axis) * cone.axis
        n = np.linalg.norm(perp)
        if n > 0:
            perp = perp / n * (room * rng.random() * 0.8)
        c = cone.vertex + L * cone.axis + perp
        ball = c[None, :] + rho * _ball_probe(cone.dim)
        if np.all(cone.outside_distance(ball) == 0) and cone.outside_distance(c[None, :])[0] == 0:
            if np.min(_cone_inner_margin(cone, c)) - rho >= margin:
                return RadialBump(c, rho, 0.5 + rng.random())
    raise RuntimeError("could not place a bump inside the cone")


def _cone_inner_margin(cone, c):
    r = c - cone.vertex
    rn = np.linalg.norm(r)
    beta = np.arccos(np.clip(r @ cone.axis / rn, -1, 1))
    return np.array([rn * np.sin(cone.angle - beta)])


def _ball_probe(d, n=64):
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1)[:, None]


def random_bump_in_sector(rng, sector, height_range, radius_range, margin, inner_fraction=0.6):
    """Random bump inside the sector, lateral extent within ``inner_fraction``
    of the sector half-width at its height."""
    for _ in range(200):
        z = height_range[0] + (height_range[1] - height_range[0]) * rng.random()
        rho = radius_range[0] + (radius_range[1] - radius_range[0]) * rng.random()
        halfwidth = z**sector.alpha
        if rho + margin >= inner_fraction * halfwidth or z - rho - margin <= sector.floor:
            continue
        lat_room = inner_fraction * halfwidth - rho - margin
        off = rng.standard_normal(sector.dim - 1)
        off = off / np.linalg.norm(off) * lat_room * rng.random() * 0.5
        c = np.concatenate([off, [z]])
        return RadialBump(c, rho, 0.5 + rng.random())
    raise RuntimeError("could not place a bump inside the sector")
