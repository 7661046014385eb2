"""Named problem presets: a polarised toric surface, an auxiliary bundle L2,
the chi potential and a calibrated quadrature rule, bundled for the CLI,
the tests and the verification battery."""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .geometry import (AxisPotential, DelzantPolytope, GeometryError,
                       LogSumExpPotential, ScaledPotential, SumPotential,
                       build_quadrature, calibrate, j_constant_from_polytope,
                       line_bundle_class, polytope_preset, reference_potential)
from .stability import SurfaceClassData


def l2_polytope(P, l2_spec):
    """Polytope of the nef line bundle sum_i c_i D_i on the same fan."""
    c = line_bundle_class(P, l2_spec)
    if any(int(v) < 0 for v in c):
        raise GeometryError(f"bundle {l2_spec!r} has no polytope on this fan (not globally generated)")
    return DelzantPolytope(P.normals, c, name=f"{P.name}:{l2_spec}")


def chi_potential(P, l2_spec, mode="reference"):
    """A chi form in c1(L2): 'reference' takes the Fubini-Study type potential
    of the L2 polytope; 'proportional' takes gamma * omega_ref (useful for
    the exactly-critical sanity problems)."""
    gamma = float(j_constant_from_polytope(P, l2_spec))
    if mode == "proportional":
        return ScaledPotential(reference_potential(P), gamma)
    if mode == "reference":
        Q = l2_polytope(P, l2_spec)
        return LogSumExpPotential(Q.lattice_points(1), level=1)
    raise GeometryError(f"unknown chi mode {mode!r}")


@dataclass
class Problem:
    """Everything a batch computation needs for one (M, L1, L2) triple."""

    name: str
    polytope: DelzantPolytope
    l2_spec: object
    chi: object
    gamma_exact: Fraction
    rule: object
    u_ref: object
    chi_mode: str = "reference"
    meta: dict = field(default_factory=dict)

    @property
    def gamma(self):
        return float(self.gamma_exact)

    def quantisation(self, k, n_theta=None):
        from .quantisation import Quantisation, QuantisationError
        if self.chi is None:
            raise QuantisationError(
                f"problem {self.name!r} has no chi form (gamma <= 0); only the "
                f"stability machinery applies")
        return Quantisation(self.polytope, self.chi, k, self.rule,
                            gamma=self.gamma, n_theta=n_theta)

    def class_data(self, klt=True):
        return SurfaceClassData.from_polytope(self.polytope, self.l2_spec, klt=klt)


def separable_critical_potential(P, l2_spec):
    """Closed-form critical metric on a product fan.

    For L1, L2 with box polytopes [0, a_i], [0, b_i] and chi the reference
    form of L2 = sum_i v_i(x_i), the potential u = sum_i v_i / c_i with
    c_i = b_i / a_i satisfies chi wedge omega^{n-1} = gamma omega^n exactly,
    since the ratios v_i''/u_i'' = c_i average to gamma = (sum_i c_i)/n.
    """
    if P.dim != 2 or any(np.sum(a != 0) > 1 for a in P.normals):
        raise GeometryError("separable critical metrics exist on product fans only")
    Q = l2_polytope(P, l2_spec)
    a = (P.vertices.max(axis=0) - P.vertices.min(axis=0))
    b = (Q.vertices.max(axis=0) - Q.vertices.min(axis=0))
    parts = []
    for axis in range(2):
        pts = np.arange(int(round(b[axis])) + 1, dtype=float)[:, None]
        v_i = LogSumExpPotential(pts, level=1)
        parts.append(AxisPotential(ScaledPotential(v_i, float(a[axis] / b[axis])), axis, 2))
    return SumPotential(parts)


def normal_cone_from_facet(P, l2_spec, facet_index=0, r=1, r_min=1):
    """NormalConeConfig for the centre D = a toric boundary divisor, with all
    pairings computed exactly from the fan."""
    from .geometry import line_bundle_class, pair_classes
    from .stability import NormalConeConfig
    d = [0] * P.num_facets
    d[facet_index] = 1
    c1 = line_bundle_class(P, "L1")
    c2 = line_bundle_class(P, l2_spec)
    ck = line_bundle_class(P, "K")
    return NormalConeConfig(dd=pair_classes(P, d, d), l1d=pair_classes(P, c1, d),
                            l2d=pair_classes(P, c2, d), kd=pair_classes(P, ck, d),
                            r=r, r_min=r_min, name=f"D{facet_index}")


_PRESET_L2 = {
    "P2-O1-O1": ("P2", "O(1)", "reference", 96),
    "P2-O1-O2": ("P2", "O(2)", "reference", 96),
    "P1xP1-O11-O11": ("P1xP1", "O(1,1)", "reference", 64),
    "P1xP1-O11-O21": ("P1xP1", "O(2,1)", "reference", 64),
    "P1xP1-O11-O31": ("P1xP1", "O(3,1)", "reference", 64),
}


def problem_names():
    return sorted(_PRESET_L2)


def make_problem(name, resolution=None, kmax=4, chi_mode=None, polytope=None,
                 l2_spec=None):
    """Build a Problem from a preset name or explicit polytope + L2 data.

    The quadrature rule is built at the requested resolution and calibrated
    against the reference potential.  Preset defaults: 64 on product fans,
    96 on P^2 (its skew ray converges algebraically); 48 is the documented
    minimum for the level-4 trace-identity health bound of 1e-6 on product
    fans, and k = 8 work should use 80+.
    """
    if name in _PRESET_L2:
        pname, l2, mode, default_res = _PRESET_L2[name]
        P = polytope_preset(pname)
        chi_mode = chi_mode or mode
        resolution = default_res if resolution is None else resolution
    elif polytope is not None and l2_spec is not None:
        resolution = 64 if resolution is None else resolution
        P = polytope_preset(polytope) if isinstance(polytope, str) else polytope
        l2 = l2_spec
        chi_mode = chi_mode or "reference"
    else:
        raise GeometryError(f"unknown problem {name!r}; presets: {problem_names()}")
    u_ref = reference_potential(P)
    rule = calibrate(build_quadrature(P, resolution, kmax=kmax), P, 1, u_ref)
    gamma = j_constant_from_polytope(P, l2)
    # chi needs gamma > 0 and a globally generated L2; stability-only runs
    # (e.g. L2 = K on a Fano) work from the class data alone
    chi = chi_potential(P, l2, mode=chi_mode) if gamma > 0 else None
    return Problem(name=name, polytope=P, l2_spec=l2, chi=chi,
                   gamma_exact=gamma, rule=rule,
                   u_ref=u_ref, chi_mode=chi_mode,
                   meta={"resolution": resolution, "kmax": kmax})
