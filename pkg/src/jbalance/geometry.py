"""Toric-surface backend in torus-invariant log coordinates.

A polarised toric surface (M, L1) is encoded by a Delzant lattice polytope P:
sections of L1^k are the lattice points of kP, metrics are convex potentials
on R^n, and volume forms become densities det(D^2 u) dx after an analytic
angular reduction.  All 2*pi-type constants are absorbed into a single
calibrated constant ``c_vol`` (close to n!), fixed so that the total volume
of the reference Monge-Ampere density equals the intersection number L1^n.

Intersection numbers and Mori generators come from the normal fan; everything
there is exact integer/rational arithmetic.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

PRESET_POLYTOPES = ("P2", "P1xP1", "F1")


class GeometryError(ValueError):
    """Invalid polytope, divisor or quadrature data."""


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

class PotentialField:
    """Convex potential on R^n with value/gradient/Hessian access.

    The convention throughout the package: a potential ``u`` is normalised
    per level, i.e. the fibre metric of L1^k is e^{-k u} and the level-k
    curvature form has density coming from D^2(k u) = k * hessian(u).
    """

    dim = None

    def value(self, X):
        raise NotImplementedError

    def gradient(self, X):
        raise NotImplementedError

    def hessian(self, X):
        raise NotImplementedError


class LogSumExpPotential(PotentialField):
    """Potential u(x) = (log sum_a c_a e^{<p_a, x>} + offset) / level.

    This closed-form family covers every metric the package produces:
    reference Fubini-Study potentials, FS(H) for torus-invariant H, and
    coefficient perturbations of these.  The gradient of ``level * u`` is the
    softmax average of the exponent points and therefore lies in the interior
    of their convex hull (the dilated polytope); the Hessian is the softmax
    covariance, so strict convexity holds whenever the points affinely span.
    """

    def __init__(self, points, log_coeffs=None, level=1, offset=0.0):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.dim = self.points.shape[1]
        if log_coeffs is None:
            log_coeffs = np.zeros(len(self.points))
        self.log_coeffs = np.asarray(log_coeffs, dtype=float)
        if self.log_coeffs.shape != (len(self.points),):
            raise GeometryError("one log-coefficient per exponent point required")
        self.level = int(level)
        self.offset = float(offset)

    def _logw(self, X):
        # (M, m) log-weights before normalisation, max-shifted per node
        return np.asarray(X, dtype=float) @ self.points.T + self.log_coeffs

    def _softmax(self, X):
        A = self._logw(X)
        A -= A.max(axis=1, keepdims=True)
        W = np.exp(A)
        return W / W.sum(axis=1, keepdims=True)

    def value(self, X):
        A = self._logw(X)
        amax = A.max(axis=1)
        lse = amax + np.log(np.exp(A - amax[:, None]).sum(axis=1))
        return (lse + self.offset) / self.level

    def gradient(self, X):
        return (self._softmax(X) @ self.points) / self.level

    def hessian(self, X):
        # centered covariance form: exactly PSD, no cancellation where the
        # softmax collapses onto a single vertex (far-field nodes)
        X = np.atleast_2d(X)
        out = np.empty((len(X), self.dim, self.dim))
        step = max(1, 2 ** 22 // max(1, len(self.points) * self.dim))
        for lo in range(0, len(X), step):
            W = self._softmax(X[lo:lo + step])
            mean = W @ self.points
            centred = self.points[None, :, :] - mean[:, None, :]
            out[lo:lo + step] = np.einsum("pm,pmi,pmj->pij", W, centred, centred)
        return out / self.level

    def with_log_coeffs(self, log_coeffs):
        return LogSumExpPotential(self.points, log_coeffs, self.level, self.offset)


class ScaledPotential(PotentialField):
    """c * u for a positive constant c (e.g. chi = gamma * omega_ref)."""

    def __init__(self, base, factor):
        if factor <= 0:
            raise GeometryError("scaling factor must be positive")
        self.base = base
        self.factor = float(factor)
        self.dim = base.dim

    def value(self, X):
        return self.factor * self.base.value(X)

    def gradient(self, X):
        return self.factor * self.base.gradient(X)

    def hessian(self, X):
        return self.factor * self.base.hessian(X)


class AffineTilt(PotentialField):
    """u + <a, x> + b; same curvature as u (Kaehler form unchanged)."""

    def __init__(self, base, slope, const=0.0):
        self.base = base
        self.slope = np.asarray(slope, dtype=float)
        self.const = float(const)
        self.dim = base.dim

    def value(self, X):
        return self.base.value(X) + np.asarray(X) @ self.slope + self.const

    def gradient(self, X):
        return self.base.gradient(X) + self.slope

    def hessian(self, X):
        return self.base.hessian(X)


class SumPotential(PotentialField):
    """Sum of potentials (separable metrics on product fans, bump additions)."""

    def __init__(self, parts):
        self.parts = list(parts)
        self.dim = self.parts[0].dim

    def value(self, X):
        return sum(p.value(X) for p in self.parts)

    def gradient(self, X):
        return sum(p.gradient(X) for p in self.parts)

    def hessian(self, X):
        return sum(np.asarray(p.hessian(X)) for p in self.parts)


class AxisPotential(PotentialField):
    """A one-variable potential f applied to a single coordinate of R^n."""

    def __init__(self, base1d, axis, dim):
        self.base = base1d
        self.axis = int(axis)
        self.dim = int(dim)

    def _slice(self, X):
        return np.atleast_2d(X)[:, self.axis][:, None]

    def value(self, X):
        return self.base.value(self._slice(X))

    def gradient(self, X):
        X = np.atleast_2d(X)
        g = np.zeros_like(X, dtype=float)
        g[:, self.axis] = self.base.gradient(self._slice(X))[:, 0]
        return g

    def hessian(self, X):
        X = np.atleast_2d(X)
        out = np.zeros((len(X), self.dim, self.dim))
        out[:, self.axis, self.axis] = np.asarray(self.base.hessian(self._slice(X)))[:, 0, 0]
        return out


class GaussianBump(PotentialField):
    """amp * exp(-|x - c|^2 / (2 sigma^2)): a smooth bulk-localised
    perturbation with analytic derivatives (not convex on its own)."""

    def __init__(self, amplitude, center, sigma, dim=2):
        self.amplitude = float(amplitude)
        self.center = np.asarray(center, dtype=float)
        self.sigma = float(sigma)
        self.dim = int(dim)

    def _g(self, X):
        D = np.atleast_2d(X) - self.center
        return D, self.amplitude * np.exp(-0.5 * np.sum(D ** 2, axis=1) / self.sigma ** 2)

    def value(self, X):
        return self._g(X)[1]

    def gradient(self, X):
        D, g = self._g(X)
        return -D * (g / self.sigma ** 2)[:, None]

    def hessian(self, X):
        D, g = self._g(X)
        s2 = self.sigma ** 2
        eye = np.eye(self.dim)
        return (np.einsum("pi,pj->pij", D, D) / s2 - eye[None]) * (-g / s2)[:, None, None]


class BlendPotential(PotentialField):
    """(1-t) u0 + t u1, the linear interpolation used by potential paths."""

    def __init__(self, u0, u1, t):
        self.u0, self.u1, self.t = u0, u1, float(t)
        self.dim = u0.dim

    def value(self, X):
        return (1.0 - self.t) * self.u0.value(X) + self.t * self.u1.value(X)

    def gradient(self, X):
        return (1.0 - self.t) * self.u0.gradient(X) + self.t * self.u1.gradient(X)

    def hessian(self, X):
        return (1.0 - self.t) * self.u0.hessian(X) + self.t * self.u1.hessian(X)


# ---------------------------------------------------------------------------
# Delzant polytopes
# ---------------------------------------------------------------------------

class DelzantPolytope:
    """Lattice polytope {x : <a_i, x> + c_i >= 0} with unimodular vertex cones.

    ``normals`` are the inward primitive integer facet normals, ``offsets``
    the integer constants c_i.  Dimension 2 is the production case; n = 1
    (intervals, i.e. P^1 with O(m)) is kept for sanity checks.
    """

    def __init__(self, normals, offsets, name=None):
        self.normals = np.asarray(normals, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.name = name
        if self.normals.ndim != 2 or len(self.normals) != len(self.offsets):
            raise GeometryError("need one offset per facet normal")
        self.dim = self.normals.shape[1]
        if self.dim not in (1, 2):
            raise GeometryError("only n = 1, 2 supported")
        for a in self.normals:
            if np.gcd.reduce(np.abs(a)) != 1:
                raise GeometryError(f"facet normal {a} is not primitive")
        self.vertices = self._compute_vertices()
        self._validate()

    @property
    def num_facets(self):
        return len(self.normals)

    def _compute_vertices(self):
        if self.dim == 1:
            pts = [Fraction(-int(c), int(a[0])) for a, c in zip(self.normals, self.offsets)]
            verts = sorted(set(pts))
            if len(verts) != 2:
                raise GeometryError("interval needs exactly two distinct endpoints")
            return np.array([[float(v)] for v in verts])
        verts = []
        for i, j in combinations(range(self.num_facets), 2):
            A = self.normals[[i, j]]
            det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
            if det == 0:
                continue
            b = -self.offsets[[i, j]]
            x = np.array([A[1, 1] * b[0] - A[0, 1] * b[1],
                          -A[1, 0] * b[0] + A[0, 0] * b[1]], dtype=np.int64)
            if np.any(x % det != 0):
                fx = x / det
            else:
                fx = x // det
            vals = self.normals @ np.asarray(fx, dtype=float) + self.offsets
            if np.all(vals >= -1e-9):
                verts.append(tuple(np.asarray(fx, dtype=float)))
        verts = sorted(set(verts))
        if len(verts) < 3:
            raise GeometryError("polytope is not a bounded 2d body")
        center = np.mean(verts, axis=0)
        verts = sorted(verts, key=lambda v: np.arctan2(v[1] - center[1], v[0] - center[0]))
        return np.array(verts)

    def _validate(self):
        # vertices must be lattice points reproducing the facet data, and at
        # each vertex the active normals must form a Z-basis (Delzant).
        if not np.allclose(self.vertices, np.round(self.vertices)):
            raise GeometryError("vertices are not lattice points")
        for v in self.vertices:
            vals = self.normals @ v + self.offsets
            active = np.where(np.abs(vals) < 1e-9)[0]
            if len(active) != self.dim:
                raise GeometryError(f"vertex {v}: {len(active)} active facets, expected {self.dim}")
            A = self.normals[active]
            det = A[0, 0] if self.dim == 1 else A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
            if abs(int(det)) != 1:
                raise GeometryError(f"vertex {v}: normals do not form a Z-basis")
        if self.volume() <= 0:
            raise GeometryError("empty interior")

    def volume(self):
        """Euclidean volume of P as an exact Fraction (shoelace for n = 2)."""
        V = [[Fraction(int(round(c))) for c in v] for v in self.vertices]
        if self.dim == 1:
            return V[1][0] - V[0][0]
        total = Fraction(0)
        for i in range(len(V)):
            x0, y0 = V[i]
            x1, y1 = V[(i + 1) % len(V)]
            total += x0 * y1 - x1 * y0
        return abs(total) / 2

    def contains(self, X, k=1):
        """Boolean mask: which rows of X lie in kP."""
        X = np.atleast_2d(X)
        vals = X @ self.normals.T + k * self.offsets
        return np.all(vals >= -1e-9, axis=1)

    def lattice_points(self, k):
        """All points of kP cap Z^n in lexicographic order."""
        if k < 1 or k != int(k):
            raise GeometryError("level k must be a positive integer")
        k = int(k)
        lo = np.floor(k * self.vertices.min(axis=0)).astype(int)
        hi = np.ceil(k * self.vertices.max(axis=0)).astype(int)
        axes = [np.arange(lo[d], hi[d] + 1) for d in range(self.dim)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        pts = grid[self.contains(grid, k)]
        order = np.lexsort(tuple(pts[:, d] for d in reversed(range(self.dim))))
        return pts[order]

    def ehrhart_count(self, k):
        return len(self.lattice_points(k))

    def interior_distances(self, X, k=1):
        """Per-facet slacks <a_i, x> + k c_i, shape (M, num_facets)."""
        return np.atleast_2d(X) @ self.normals.T + k * self.offsets


def polytope_preset(name):
    """Named polarised toric surfaces: P2 = (P^2, O(1)), P1xP1 = (P^1xP^1,
    O(1,1)), F1 = first Hirzebruch surface with the standard trapezoid."""
    if name == "P2":
        return DelzantPolytope([[1, 0], [0, 1], [-1, -1]], [0, 0, 1], name="P2")
    if name == "P1xP1":
        return DelzantPolytope([[1, 0], [0, 1], [-1, 0], [0, -1]], [0, 0, 1, 1], name="P1xP1")
    if name == "F1":
        return DelzantPolytope([[1, 0], [0, 1], [0, -1], [-1, -1]], [0, 0, 1, 2], name="F1")
    raise GeometryError(f"unknown preset {name!r}; options: {PRESET_POLYTOPES}")


# ---------------------------------------------------------------------------
# section bases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeSectionBasis:
    """Monomial basis of H^0(M, L1^k): the lattice points of kP."""

    level: int
    points: np.ndarray

    @property
    def n_plus_1(self):
        return len(self.points)

    def basis_hash(self):
        return hash((self.level, self.points.tobytes()))


def enumerate_lattice_points(P, k):
    """Section basis for L1^k, lexicographically ordered (global convention)."""
    pts = P.lattice_points(k)
    return LatticeSectionBasis(level=int(k), points=pts)


# ---------------------------------------------------------------------------
# intersection theory on the surface (exact)
# ---------------------------------------------------------------------------

def _ccw_ray_order(P):
    ang = np.arctan2(P.normals[:, 1], P.normals[:, 0])
    return np.argsort(ang)


def divisor_intersection_matrix(P):
    """Matrix (D_i . D_j) of boundary divisors of the smooth toric surface.

    Adjacent rays meet once; self-intersections from v_{i-1} + v_{i+1} = b v_i
    giving D_i^2 = -b.  Indexing follows P.normals.
    """
    if P.dim != 2:
        raise GeometryError("intersection theory implemented for surfaces only")
    order = _ccw_ray_order(P)
    d = len(order)
    M = np.zeros((d, d), dtype=np.int64)
    for pos in range(d):
        i = order[pos]
        ip = order[(pos + 1) % d]
        im = order[(pos - 1) % d]
        M[i, ip] = M[ip, i] = 1
        v = P.normals[i]
        s = P.normals[im] + P.normals[ip]
        # s = b * v with b integer by smoothness
        b = s[0] // v[0] if v[0] != 0 else s[1] // v[1]
        if np.any(s != b * v):
            raise GeometryError("fan is not smooth at ray " + str(v))
        M[i, i] = -int(b)
    return M


def line_bundle_class(P, spec):
    """Coefficient vector of a divisor class sum_i c_i D_i.

    ``spec`` may be: a coefficient sequence; "L1" (the polarisation, with
    c_i = offsets); "K" (canonical class, all -1); or for the presets the
    strings "O(d)" on P2 and "O(a,b)" on P1xP1.
    """
    if isinstance(spec, str):
        s = spec.strip()
        if s == "L1":
            return np.array(P.offsets, dtype=np.int64)
        if s == "K":
            return -np.ones(P.num_facets, dtype=np.int64)
        if s.startswith("O(") and s.endswith(")"):
            args = [int(t) for t in s[2:-1].split(",")]
            if P.name == "P2" and len(args) == 1:
                return np.array([0, 0, args[0]], dtype=np.int64)
            if P.name == "P1xP1" and len(args) == 2:
                a, b = args
                return np.array([0, 0, a, b], dtype=np.int64)
            raise GeometryError(f"bundle {spec!r} not defined on preset {P.name!r}")
        raise GeometryError(f"cannot parse divisor class {spec!r}")
    c = np.asarray(spec, dtype=np.int64)
    if c.shape != (P.num_facets,):
        raise GeometryError("divisor class needs one coefficient per facet")
    return c


def pair_classes(P, c1, c2):
    M = getattr(P, "_pairing_matrix", None)
    if M is None:
        M = divisor_intersection_matrix(P)
        P._pairing_matrix = M
    return int(np.asarray(c1) @ M @ np.asarray(c2))


def intersection_numbers(P, l2_spec="L1"):
    """Surface pairing table {L1^2, L1.L2, L2^2, K.L1, K.L2, K^2}.

    ``l2_spec`` follows line_bundle_class, or may be a dict of directly
    supplied pairing values (validated for the symmetric entries present).
    """
    if isinstance(l2_spec, dict):
        table = dict(l2_spec)
        for a, b in (("L1L2", "L2L1"), ("KL1", "L1K"), ("KL2", "L2K")):
            if a in table and b in table and table[a] != table[b]:
                raise GeometryError(f"inconsistent pairings {a} != {b}")
        return table
    if P.dim == 1:
        m = int(P.offsets.sum() if P.num_facets == 2 else 0)
        return {"L1L1": m}  # degree of the interval bundle, n=1 sanity only
    c1 = line_bundle_class(P, "L1")
    c2 = line_bundle_class(P, l2_spec)
    ck = line_bundle_class(P, "K")
    tab = {
        "L1L1": pair_classes(P, c1, c1),
        "L1L2": pair_classes(P, c1, c2),
        "L2L2": pair_classes(P, c2, c2),
        "KL1": pair_classes(P, ck, c1),
        "KL2": pair_classes(P, ck, c2),
        "KK": pair_classes(P, ck, ck),
    }
    if tab["L1L1"] != 2 * P.volume():
        raise GeometryError("L1^2 disagrees with 2 vol(P); fan/offset data corrupt")
    return tab


@dataclass(frozen=True)
class MoriGenerator:
    """A torus-invariant boundary curve with its pairing functional."""

    facet_index: int
    self_intersection: int
    pairings: tuple  # value of C . D_j for every facet divisor D_j

    def pair(self, class_vector):
        return int(np.asarray(class_vector) @ np.asarray(self.pairings))


def mori_generators(P):
    """Generators of the Mori cone: the boundary curves, deduplicated by
    numerical class (equal pairing vectors)."""
    M = divisor_intersection_matrix(P)
    gens, seen = [], set()
    for i in range(P.num_facets):
        key = tuple(int(v) for v in M[:, i])
        if key in seen:
            continue
        seen.add(key)
        gens.append(MoriGenerator(facet_index=i, self_intersection=int(M[i, i]), pairings=key))
    return gens


def is_nef(P, class_vector, generators=None):
    gens = mori_generators(P) if generators is None else generators
    return all(g.pair(class_vector) >= 0 for g in gens)


def j_constant_from_polytope(P, l2_spec):
    tab = intersection_numbers(P, l2_spec)
    return Fraction(tab["L1L2"], tab["L1L1"])


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass
class QuadratureRule:
    """Tensor Gauss-Legendre rule pushed to R^n by per-axis logistic maps.

    ``c_vol`` is 1.0 until ``calibrate`` is run; afterwards integral of
    det(D^2 u_ref) * c_vol equals L1^n by construction and every pi/2pi
    convention is absorbed.
    """

    nodes: np.ndarray          # (M, n)
    weights: np.ndarray        # (M,) all positive
    resolution: int
    scales: np.ndarray
    c_vol: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.nodes.shape[1]

    def integrate(self, density_values):
        """Integral of a density given by its values at the nodes (no c_vol)."""
        return float(self.weights @ np.asarray(density_values))

    def with_c_vol(self, c):
        return QuadratureRule(self.nodes, self.weights, self.resolution,
                              self.scales, c_vol=float(c), meta=dict(self.meta))


def _axis_rule(resolution, scale, center):
    t, w = np.polynomial.legendre.leggauss(resolution)
    s = 0.5 * (t + 1.0)
    x = center + scale * np.log(s / (1.0 - s))
    jac = 0.5 * scale / (s * (1.0 - s))
    return x, w * jac


def build_quadrature(P, resolution, kmax=1, scale=None):
    """Quadrature over R^n adapted to exponential-sum-ratio integrands.

    Per axis: Gauss-Legendre on (0,1) composed with x = scale*log(s/(1-s)),
    centered on the polytope's gradient image.  ``scale`` widens with the
    polytope so the logistic tails match the e^{-dist} decay of the
    occurring densities; ``kmax`` is recorded so consumers can check the
    rule against the finest level they integrate.
    """
    if resolution < 4:
        raise GeometryError("resolution >= 4 required")
    # Axis-aligned fans push forward to rational integrands with distant
    # poles (spectrally exact); a skew ray such as P^2's diagonal leaves a
    # corner non-analyticity whose algebraic order improves with the scale.
    widths = P.vertices.max(axis=0) - P.vertices.min(axis=0)
    centers = np.zeros(P.dim)
    if scale is None:
        skew = P.dim == 2 and any(np.all(a != 0) for a in P.normals)
        base = 3.0 if skew else 2.0
        scales = np.maximum(base, 1.0 + 0.5 * widths)
    else:
        scales = np.full(P.dim, float(scale))
    axes = [_axis_rule(resolution, scales[d], centers[d]) for d in range(P.dim)]
    if P.dim == 1:
        nodes = axes[0][0][:, None]
        weights = axes[0][1]
    else:
        X, Y = np.meshgrid(axes[0][0], axes[1][0], indexing="ij")
        WX, WY = np.meshgrid(axes[0][1], axes[1][1], indexing="ij")
        nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
        weights = (WX * WY).ravel()
    return QuadratureRule(nodes=nodes, weights=weights, resolution=int(resolution),
                          scales=scales, meta={"kmax": int(kmax), "map": "logistic*GL"})


def reference_potential(P):
    """Round Fubini-Study style potential: log of the exponential sum over
    the lattice points of P (level 1)."""
    return LogSumExpPotential(P.lattice_points(1), level=1)


def volume_density(hess):
    """det of a batch of Hessians (M, n, n) -> (M,)."""
    H = np.asarray(hess)
    if H.shape[-1] == 1:
        return H[..., 0, 0]
    return H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]


def mixed_density(hess_a, hess_b):
    """(1/n) tr(adj(A) B): density of chi wedge omega^{n-1} over dx (no c_vol).

    A is the Hessian of the level-k potential of h (i.e. D^2(k u_h)), B the
    Hessian of the chi potential.
    """
    A, B = np.asarray(hess_a), np.asarray(hess_b)
    if A.shape[-1] == 1:
        return B[..., 0, 0]
    return 0.5 * (A[..., 0, 0] * B[..., 1, 1] + A[..., 1, 1] * B[..., 0, 0]
                  - 2.0 * A[..., 0, 1] * B[..., 0, 1])


def calibrate(rule, P, k, u_ref):
    """Fix c_vol so that integral det(D^2(k u_ref)) c_vol dx = k^n L1^n.

    Because det(D^2(k u)) = k^n det(D^2 u) pointwise, the calibrated value is
    independent of k and lands on n! up to quadrature error for any strictly
    convex reference whose gradient image is the interior of P.
    """
    X = rule.nodes
    hess = np.asarray(u_ref.hessian(X)) * k
    dens = volume_density(hess)
    if np.min(dens) < 0:
        # exact zeros can only come from far-field softmax collapse (underflow
        # of e^{-dist}); genuine non-convexity shows up strictly negative
        raise GeometryError("reference potential is not strictly convex on the nodes")
    total = rule.integrate(dens)
    n = P.dim
    v_target = float(k) ** n * float(2 * P.volume() if n == 2 else P.volume())
    out = rule.with_c_vol(v_target / total)
    out.meta["calibrated"] = True
    return out


def default_rule(P, resolution=64, k=1):
    """build_quadrature + calibrate against the reference potential."""
    rule = build_quadrature(P, resolution, kmax=k)
    return calibrate(rule, P, 1, reference_potential(P))
