"""Energy functionals: J_chi, I_{mu_J}, I_{mu0}, I_hat, P_hat, convexity probes.

Basepoint conventions.  J_chi is anchored at FS(Id) per level k (the anchor
is a parameter, so quantisation-consistency comparisons can re-anchor both
sides at the same reference metric).  All asserted properties are basepoint
differences or monotonicity statements, hence normalisation-free.

Time quadrature is composite Simpson, m = 16 by default.  For surfaces and
linear potential paths the t-integrands are polynomials of degree <= 2, so
Simpson is exact there and the only error is the spatial quadrature's.

Gauge note for the P_hat inequalities: P_hat(h, H) >= P_hat(FS(H), H) holds
once the constant ambiguity of the h-potential is fixed (mean-zero against
its own mixed measure), and P_hat(h, H) >= P_hat(h, Hilb(h)) is the
arithmetic-geometric statement on the det-normalised slice det H =
det Hilb(h); both normalisations are provided as helpers here and the raw
formula is kept exactly as defined.
"""

import numpy as np

from .geometry import BlendPotential, mixed_density, volume_density
from .quantisation import HermitianForm, QuantisationError


def simpson_weights(m):
    """Composite Simpson weights on m+1 equispaced samples of [0, 1]."""
    if m < 2 or m % 2:
        raise QuantisationError("Simpson needs an even number of intervals >= 2")
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * m)


class PotentialPath:
    """Path in the space of level-k metrics: linear in potentials, or a
    Bergman geodesic H^{1/2} e^{tA} H^{1/2} between torus-invariant forms."""

    def __init__(self, kind, m, data):
        if m < 4 or m % 2:
            raise QuantisationError("sampling count m must be even and >= 4")
        self.kind = kind
        self.m = int(m)
        self._data = data

    @classmethod
    def linear(cls, u0, u1, m=16):
        return cls("linear", m, (u0, u1))

    @classmethod
    def bergman(cls, q, H0, H1, m=16):
        H0 = H0 if isinstance(H0, HermitianForm) else HermitianForm(H0, q.k)
        H1 = H1 if isinstance(H1, HermitianForm) else HermitianForm(H1, q.k)
        if not (H0.diagonal and H1.diagonal):
            raise QuantisationError("Bergman geodesic paths implemented on the torus-invariant slice")
        return cls("bergman", m, (q, H0.diag(), H1.diag()))

    def times(self):
        return np.linspace(0.0, 1.0, self.m + 1)

    def form_at(self, t):
        if self.kind != "bergman":
            raise QuantisationError("form_at only meaningful for Bergman paths")
        q, d0, d1 = self._data
        return HermitianForm.from_diagonal(np.exp((1 - t) * np.log(d0) + t * np.log(d1)), q.k)

    def potential(self, t):
        if self.kind == "linear":
            u0, u1 = self._data
            return BlendPotential(u0, u1, t)
        q, d0, d1 = self._data
        return q.fs_map(self.form_at(t))

    def velocity(self, t, X, level=1):
        """d/dt of the level-k potential phi_t = k u_t at the nodes X.

        ``level`` is the k of the surrounding quantisation context; Bergman
        paths are intrinsically level-k (the velocity is d log rho / dt).
        """
        if self.kind == "linear":
            u0, u1 = self._data
            return level * (u1.value(X) - u0.value(X))
        q, d0, d1 = self._data
        lam = np.log(d1) - np.log(d0)
        pot = self.potential(t)
        W = pot._softmax(X)                    # softmax over basis points
        return -(W @ lam)                      # d log rho / dt


def j_energy(q, path, m=None):
    """J_chi difference along a path of level-k metrics.

    dJ/dt = (1/(gamma k^{n-1})) integral phi_t' chi wedge c1(h_t)^{n-1},
    with the measure realised as mix(D^2(k u_t), D^2 v) c_vol dx; the total
    measure mass is V, which pins the scale (J(e^{-c} h) = J(h) + c V).
    """
    m = path.m if m is None else m
    ts = path.times() if m == path.m else np.linspace(0.0, 1.0, m + 1)
    w = simpson_weights(len(ts) - 1)
    X = q.nodes
    total = 0.0
    for wt, t in zip(w, ts):
        u_t = path.potential(t)
        mix = mixed_density(np.asarray(u_t.hessian(X)) * q.k, q.chi_hess) * q.rule.c_vol
        if np.min(mix) < 0:
            raise QuantisationError(f"convexity loss along the path at t={t:.3f}")
        total += wt * float(q.weights @ (path.velocity(t, X, level=q.k) * mix)) / q.hilb_norm
    return total


def j_energy_between(q, u0, u1, m=16):
    return j_energy(q, PotentialPath.linear(u0, u1, m=m))


def i_mu_j(u0, u1, chi, gamma, rule, m=16):
    """Continuum functional I_{mu_J}(omega_0, omega_1) along the linear path.

    integral_0^1 integral phi' ((1/gamma) chi wedge omega_t^{n-1} - omega_t^n) dt
    on level-1 potentials; path independent, cocyclic, decreasing along the
    J-flow.  For n = 2 the t-integrand is quadratic, so Simpson is exact.
    """
    X = rule.nodes
    w = simpson_weights(m)
    chi_h = np.asarray(chi.hessian(X))
    vel = u1.value(X) - u0.value(X)
    total = 0.0
    for wt, t in zip(w, np.linspace(0.0, 1.0, m + 1)):
        hess = np.asarray(BlendPotential(u0, u1, t).hessian(X))
        dens = (mixed_density(hess, chi_h) / gamma - volume_density(hess)) * rule.c_vol
        total += wt * float(rule.weights @ (vel * dens))
    return total


def aym_energy(u0, u1, rule, m=16):
    """Aubin-Yau-Mabuchi energy -integral integral phi' omega_t^n dt along the
    linear level-1 path (recorded by the convexity probes, no sign asserted)."""
    X = rule.nodes
    w = simpson_weights(m)
    vel = u1.value(X) - u0.value(X)
    total = 0.0
    for wt, t in zip(w, np.linspace(0.0, 1.0, m + 1)):
        dens = volume_density(np.asarray(BlendPotential(u0, u1, t).hessian(X))) * rule.c_vol
        total += wt * float(rule.weights @ (vel * dens))
    return -total


def i_mu0(q, H, m=8):
    """I_{mu0}(H) = J_chi(FS(H)) + (V/(N+1)) log det H, J anchored at FS(Id).

    Scale invariant, convex along Bergman geodesics, decreased by the map
    Hilb o FS, critical exactly at J-balanced forms.
    """
    H = H if isinstance(H, HermitianForm) else HermitianForm(H, q.k)
    if not H.diagonal:
        raise QuantisationError("i_mu0 evaluates on the torus-invariant slice")
    u_id = q.fs_map(HermitianForm.identity(q.n_plus_1, q.k))
    jval = j_energy_between(q, u_id, q.fs_map(H), m=m)
    return jval + (q.V / q.n_plus_1) * H.logdet()


def hilb_trace(q, u, H):
    """sum_i ||S_i||^2_{Hilb(h)} for an H-orthonormal basis = tr(Hilb(h) H^{-1})."""
    C = q.hilb_map(u)
    if H.diagonal:
        return float(np.sum(C.diag() / H.diag()))
    return float(np.trace(np.linalg.solve(H.matrix, C.matrix)).real)


def p_hat(q, u, H, m=16):
    """P_hat(h, H) = log sum ||S_i||^2_{Hilb(h)} - log(N+1) + log det H
    + ((N+1)/V) J_chi(h), J_chi anchored at FS(Id).

    Satisfies P_hat(FS(H), H) = ((N+1)/V) I_{mu0}(H) exactly given the trace
    identity; P_hat(h, H) >= P_hat(FS(H), H) holds in the mean-zero gauge of
    the h-potential (mean_normalised_against_fs), and the arithmetic-
    geometric inequality P_hat(h, H) >= P_hat(h, Hilb(h)) on the slice
    det H = det Hilb(h) (match_determinant).
    """
    H = H if isinstance(H, HermitianForm) else HermitianForm(H, q.k)
    u_id = q.fs_map(HermitianForm.identity(q.n_plus_1, q.k))
    jval = j_energy_between(q, u_id, u, m=m)
    tr = hilb_trace(q, u, H)
    return float(np.log(tr) - np.log(q.n_plus_1) + H.logdet()
                 + (q.n_plus_1 / q.V) * jval)


def match_determinant(H, reference):
    """Rescale H so det H = det(reference): the normalisation slice on which
    the arithmetic-geometric P_hat inequality lives."""
    scale = np.exp((reference.logdet() - H.logdet()) / H.n_plus_1)
    return HermitianForm(H.matrix * scale, H.level)


def mean_normalised_against_fs(q, u, H):
    """Representative of u with mean-zero offset against its own mixed
    measure, relative to FS(H): the gauge in which P_hat(h, H) >=
    P_hat(FS(H), H) is sharp."""
    X = q.nodes
    mix = q.mixed_measure(u)
    phi = q.k * (u.value(X) - q.fs_map(H).value(X))
    mean = float(q.weights @ (phi * mix)) / q.hilb_norm / q.V
    shifted = type(u)(u.points, u.log_coeffs, u.level, u.offset - mean) \
        if hasattr(u, "log_coeffs") else None
    if shifted is None:
        raise QuantisationError("mean normalisation implemented for log-sum-exp potentials")
    return shifted


def i_hat(q, u, anchor=None, m=16):
    """I_hat_k(h) = J_chi(h) + (V/(N+1)) log det Hilb_chi(h).

    ``anchor`` fixes J's basepoint (default FS(Id) at this level); the
    log det term is reported raw, so quantisation-consistency comparisons
    should difference two i_hat values with a common anchor.
    """
    if anchor is None:
        anchor = q.fs_map(HermitianForm.identity(q.n_plus_1, q.k))
    jval = j_energy_between(q, anchor, u, m=m)
    return jval + (q.V / q.n_plus_1) * q.hilb_map(u).logdet()


def i_hat_relative(q, u, reference, m=16):
    """I_hat_k(h) - I_hat_k(h_ref), both anchored at h_ref: the anchored
    difference whose 1/k rescaling converges to I_{mu_J}(h_ref, h)."""
    jval = j_energy_between(q, reference, u, m=m)
    dld = q.hilb_map(u).logdet() - q.hilb_map(reference).logdet()
    return jval + (q.V / q.n_plus_1) * dld


def report_row(name, basepoint, value, q):
    """Machine-readable evaluation record for a functional value."""
    return {"functional": name, "basepoint": basepoint, "value": float(value),
            "level": q.k, "gamma": q.gamma,
            "quadrature": {"resolution": q.rule.resolution,
                           "c_vol": q.rule.c_vol,
                           "scales": [float(s) for s in q.rule.scales]}}


def convexity_probe(values):
    """Minimum raw second central difference over interior samples."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        raise QuantisationError("need at least three samples")
    return float(np.min(v[:-2] - 2.0 * v[1:-1] + v[2:]))


def probe_along_path(functional, path):
    """Evaluate a scalar functional at the path samples and return
    (min second difference, sampled values)."""
    vals = [functional(path, t) for t in path.times()]
    return convexity_probe(vals), vals
