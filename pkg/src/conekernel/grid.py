"""Uniform structured grids and sampled tensor fields.

Everything downstream (kernels, norms, the constraint map, the solver)
works on fields sampled on a uniform isotropic grid over a box in R^d,
d >= 3.  Three field ranks are supported: scalar, vector, and symmetric
2-tensor (upper-triangle packed storage).  The module also provides the
finite-difference calculus (4th-order centered stencils in the interior,
2nd-order at the two boundary layers) and a bit-exact binary file format
for fields ("FLD1").

Fields are immutable by convention: operations return freshly allocated
fields and never mutate their inputs, so everything here is safe to read
from several threads at once.
"""

import io
import struct

import numpy as np

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "SymTensorField2",
    "FieldFormatError",
    "partial",
    "multi_partial",
    "write_field",
    "read_field",
    "restrict_support",
    "trapezoid_weights",
    "integrate",
]

MAGIC = b"FLD1"
FORMAT_VERSION = 1


class FieldFormatError(ValueError):
    """Raised for malformed FLD1 files (bad magic, truncated payload, ...)."""


class GridSpec:
    """Uniform isotropic grid over a box in R^d.

    The physical point with index vector i is ``origin + i * spacing``
    componentwise.  Every axis must have at least 5 points so the
    centered difference stencils fit.
    """

    def __init__(self, origin, spacing, shape):
        origin = np.asarray(origin, dtype=float)
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        if origin.ndim != 1:
            raise ValueError("origin must be a 1-d sequence")
        if len(shape) != origin.size:
            raise ValueError("origin and shape disagree on dimension")
        if origin.size < 3:
            raise ValueError("dimension must be >= 3")
        if not spacing > 0:
            raise ValueError("spacing must be positive")
        if any(n < 5 for n in shape):
            raise ValueError("every axis needs >= 5 points for the stencils")
        self.origin = origin
        self.spacing = float(spacing)
        self.shape = shape
        self.dim = origin.size

    @property
    def npoints(self):
        return int(np.prod(self.shape))

    def axis_coords(self, a):
        """Physical coordinates along axis a."""
        return self.origin[a] + self.spacing * np.arange(self.shape[a])

    def points(self):
        """All grid points as an array of shape (*shape, d)."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def coordinate_arrays(self):
        """Broadcastable per-axis coordinate arrays (open meshgrid)."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def radius(self, center=None):
        """|x - center| on the grid (center defaults to the origin of R^d)."""
        coords = self.coordinate_arrays()
        if center is None:
            center = np.zeros(self.dim)
        r2 = sum((c - center[a]) ** 2 for a, c in enumerate(coords))
        return np.sqrt(r2)

    def bounds(self):
        lo = self.origin.copy()
        hi = self.origin + self.spacing * (np.array(self.shape) - 1)
        return lo, hi

    def box_diameter(self):
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def __eq__(self, other):
        return (
            isinstance(other, GridSpec)
            and self.shape == other.shape
            and self.spacing == other.spacing
            and np.array_equal(self.origin, other.origin)
        )

    def __repr__(self):
        return f"GridSpec(origin={self.origin.tolist()}, spacing={self.spacing}, shape={self.shape})"


def _check_finite(data, what):
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{what} contains non-finite samples")


class _Field:
    """Common behaviour for the three field ranks."""

    def __init__(self, grid, data, check=True):
        data = np.asarray(data, dtype=float)
        expected = self._expected_shape(grid)
        if data.shape != expected:
            raise ValueError(f"data shape {data.shape} != expected {expected}")
        if check:
            _check_finite(data, type(self).__name__)
        self.grid = grid
        self.data = data

    def copy(self):
        return type(self)(self.grid, self.data.copy(), check=False)

    def max_abs(self):
        return float(np.max(np.abs(self.data)))

    def __add__(self, other):
        self._compat(other)
        return type(self)(self.grid, self.data + other.data, check=False)

    def __sub__(self, other):
        self._compat(other)
        return type(self)(self.grid, self.data - other.data, check=False)

    def __mul__(self, scalar):
        return type(self)(self.grid, self.data * float(scalar), check=False)

    __rmul__ = __mul__

    def _compat(self, other):
        if type(other) is not type(self) or other.grid != self.grid:
            raise ValueError("field mismatch (type or grid)")


class ScalarField(_Field):
    """One sample per grid point; data shape = grid.shape."""

    components = 1

    @staticmethod
    def _expected_shape(grid):
        return grid.shape

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape), check=False)

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, np.asarray(fn(grid.points()), dtype=float))

    def component_list(self):
        return [self.data]


class VectorField(_Field):
    """d components; data shape = (d, *grid.shape)."""

    @staticmethod
    def _expected_shape(grid):
        return (grid.dim,) + grid.shape

    @property
    def components(self):
        return self.grid.dim

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.dim,) + grid.shape), check=False)

    def component(self, j):
        return ScalarField(self.grid, self.data[j], check=False)

    def component_list(self):
        return [self.data[j] for j in range(self.grid.dim)]


def sym_index_pairs(d):
    """Packed component order for symmetric 2-tensors: (i, j) with i <= j."""
    return [(i, j) for i in range(d) for j in range(i, d)]


class SymTensorField2(_Field):
    """Symmetric 2-tensor, upper triangle packed: d(d+1)/2 components.

    Access with (i, j) and (j, i) returns the identical stored array.
    """

    @staticmethod
    def _expected_shape(grid):
        d = grid.dim
        return (d * (d + 1) // 2,) + grid.shape

    @property
    def components(self):
        d = self.grid.dim
        return d * (d + 1) // 2

    @classmethod
    def zeros(cls, grid):
        d = grid.dim
        return cls(grid, np.zeros((d * (d + 1) // 2,) + grid.shape), check=False)

    def pack_index(self, i, j):
        d = self.grid.dim
        if not (0 <= i < d and 0 <= j < d):
            raise IndexError("tensor index out of range")
        i, j = min(i, j), max(i, j)
        # offset of row i in the packed upper triangle
        return i * d - i * (i - 1) // 2 + (j - i)

    def comp(self, i, j):
        """Component (i, j) as a raw array view (shared for (j, i))."""
        return self.data[self.pack_index(i, j)]

    def component(self, i, j):
        return ScalarField(self.grid, self.comp(i, j), check=False)

    def component_list(self):
        return [self.data[k] for k in range(self.data.shape[0])]

    @classmethod
    def from_components(cls, grid, comp_fn):
        """Build from a callable (i, j) -> array over i <= j."""
        d = grid.dim
        data = np.empty((d * (d + 1) // 2,) + grid.shape)
        for k, (i, j) in enumerate(sym_index_pairs(d)):
            data[k] = comp_fn(i, j)
        return cls(grid, data)

    def trace(self):
        d = self.grid.dim
        tr = np.zeros(self.grid.shape)
        for i in range(d):
            tr += self.comp(i, i)
        return ScalarField(self.grid, tr, check=False)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def _diff_axis0(u, h, order):
    """Differences along axis 0.  4th-order centered in the interior,
    2nd-order at the two boundary layers (one-sided at the edge row)."""
    n = u.shape[0]
    out = np.empty_like(u)
    if order == 1:
        out[2:-2] = (u[:-4] - 8 * u[1:-3] + 8 * u[3:-1] - u[4:]) / (12 * h)
        out[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
        out[1] = (u[2] - u[0]) / (2 * h)
        out[n - 2] = (u[n - 1] - u[n - 3]) / (2 * h)
        out[n - 1] = (3 * u[n - 1] - 4 * u[n - 2] + u[n - 3]) / (2 * h)
    elif order == 2:
        out[2:-2] = (-u[:-4] + 16 * u[1:-3] - 30 * u[2:-2] + 16 * u[3:-1] - u[4:]) / (12 * h * h)
        out[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / (h * h)
        out[1] = (u[0] - 2 * u[1] + u[2]) / (h * h)
        out[n - 2] = (u[n - 3] - 2 * u[n - 2] + u[n - 1]) / (h * h)
        out[n - 1] = (2 * u[n - 1] - 5 * u[n - 2] + 4 * u[n - 3] - u[n - 4]) / (h * h)
    else:
        raise ValueError("order must be 1 or 2")
    return out


def partial(field, axis, order=1):
    """Partial derivative of a ScalarField along one axis.

    order=1 gives d/dx_axis, order=2 gives d^2/dx_axis^2.
    """
    if not isinstance(field, ScalarField):
        raise TypeError("partial expects a ScalarField")
    if not (0 <= axis < field.grid.dim):
        raise ValueError(f"axis {axis} out of range for d={field.grid.dim}")
    u = np.moveaxis(field.data, axis, 0)
    out = _diff_axis0(u, field.grid.spacing, order)
    return ScalarField(field.grid, np.moveaxis(out, 0, axis), check=False)


def partial_array(arr, grid, axis, order=1):
    """partial() on a bare array (internal shorthand)."""
    u = np.moveaxis(arr, axis, 0)
    return np.moveaxis(_diff_axis0(u, grid.spacing, order), 0, axis)


def multi_partial(field, beta):
    """Apply the multi-index derivative d^beta, beta a length-d tuple.

    Uses order-2 stencils for paired derivatives along one axis and
    composes first-order stencils for the rest.
    """
    out = field
    for axis, b in enumerate(beta):
        b = int(b)
        while b >= 2:
            out = partial(out, axis, 2)
            b -= 2
        if b == 1:
            out = partial(out, axis, 1)
    return out


# ---------------------------------------------------------------------------
# quadrature on the grid
# ---------------------------------------------------------------------------

def trapezoid_weights(grid):
    """Trapezoid-rule weights as broadcastable per-axis arrays (product rule)."""
    ws = []
    for a in range(grid.dim):
        w = np.ones(grid.shape[a])
        w[0] = w[-1] = 0.5
        shape = [1] * grid.dim
        shape[a] = grid.shape[a]
        ws.append(w.reshape(shape) * grid.spacing)
    return ws

def integrate(field_or_array, grid=None):
    """Trapezoid-rule integral of a scalar field (or raw array) over the box."""
    if isinstance(field_or_array, ScalarField):
        arr, grid = field_or_array.data, field_or_array.grid
    else:
        arr = field_or_array
        if grid is None:
            raise ValueError("grid required for raw arrays")
    acc = arr
    for w in trapezoid_weights(grid):
        acc = acc * w
    return float(np.sum(acc))


# ---------------------------------------------------------------------------
# binary field I/O ("FLD1", little-endian)
# ---------------------------------------------------------------------------
#
# magic "FLD1" | u32 version | u32 d | u32 components | u32 shape[d]
# | f64 origin[d] | f64 spacing | components * prod(shape) f64 samples,
# component-major, row-major within a component (last axis fastest).

_RANKS = {1: ScalarField}


def _field_components(field):
    if isinstance(field, ScalarField):
        return 1
    if isinstance(field, VectorField):
        return field.grid.dim
    if isinstance(field, SymTensorField2):
        d = field.grid.dim
        return d * (d + 1) // 2
    raise TypeError(f"not a field: {type(field)!r}")


def write_field(field, path):
    """Write a field to ``path`` in FLD1 format (round-trip is bit exact)."""
    grid = field.grid
    ncomp = _field_components(field)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", FORMAT_VERSION, grid.dim, ncomp))
    buf.write(struct.pack(f"<{grid.dim}I", *grid.shape))
    buf.write(struct.pack(f"<{grid.dim}d", *grid.origin))
    buf.write(struct.pack("<d", grid.spacing))
    flat = field.data.reshape(ncomp, -1) if ncomp > 1 else field.data.reshape(1, -1)
    buf.write(flat.astype("<f8", copy=False).tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_field(path):
    """Read an FLD1 file and return the field of the appropriate rank."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise FieldFormatError("file too short for an FLD1 header")
    if raw[:4] != MAGIC:
        raise FieldFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, d, ncomp = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"unsupported FLD1 version {version}")
    off = 16
    need = 4 * d + 8 * d + 8
    if len(raw) < off + need:
        raise FieldFormatError("truncated FLD1 header")
    shape = struct.unpack_from(f"<{d}I", raw, off)
    off += 4 * d
    origin = struct.unpack_from(f"<{d}d", raw, off)
    off += 8 * d
    (spacing,) = struct.unpack_from("<d", raw, off)
    off += 8
    npts = int(np.prod(shape))
    payload = np.frombuffer(raw, dtype="<f8", count=-1, offset=off)
    if payload.size != ncomp * npts:
        raise FieldFormatError(
            f"payload length {payload.size} != components*points = {ncomp * npts}"
        )
    grid = GridSpec(origin, spacing, shape)
    if ncomp == 1:
        return ScalarField(grid, payload.reshape(shape).copy(), check=False)
    data = payload.reshape((ncomp,) + shape).copy()
    if ncomp == d:
        return VectorField(grid, data, check=False)
    if ncomp == d * (d + 1) // 2:
        return SymTensorField2(grid, data, check=False)
    raise FieldFormatError(f"component count {ncomp} matches no field rank in d={d}")


# ---------------------------------------------------------------------------
# support diagnostics
# ---------------------------------------------------------------------------

def restrict_support(field, region, margin):
    """Max |field| over grid points at distance > margin outside ``region``.

    ``region`` is any object with an ``outside_distance(points)`` method
    (ConeSpec / SectorSpec).  Returns 0.0 when the support respects the
    region at the given tolerance.
    """
    pts = field.grid.points().reshape(-1, field.grid.dim)
    dist = region.outside_distance(pts)
    mask = dist > margin
    if not np.any(mask):
        return 0.0
    data = field.data.reshape(-1, pts.shape[0]) if field.data.ndim > field.grid.dim \
        else field.data.reshape(1, -1)
    return float(np.max(np.abs(data[:, mask])))
