"""Algebro-geometric weights for deformation-to-the-normal-cone test
configurations: blow-up intersection tables on B = Bl_{D x 0}(M x P^1),
J-weight, Donaldson-Futaki invariant, normalised Chow/Hilbert weights,
positivity checks and numerical cone criteria.

Everything here is exact rational arithmetic (fractions.Fraction); no
floating point enters this module.  Dimensional constants such as (n+1)! are
dropped uniformly, so all outputs are sign/ordering statements.

Intersection calculus on the 3-fold blow-up along the curve D x {0} (surface
case n = 2): products of three pulled-back surface classes vanish,
p*a . p*b . E = 0, p*a . E^2 = -(a.D), E^3 = -D^2, and the relative
canonical class is K_{B/M x P^1} = E.
"""

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement


class StabilityError(ValueError):
    """Inconsistent class data or invalid configuration."""


def _frac(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10 ** 12)
    return Fraction(x)


@dataclass(frozen=True)
class CurveClass:
    """A Mori-cone generator with its pairings against L1, L2, K_M."""

    name: str
    l1: Fraction
    l2: Fraction
    k: Fraction

    def pair(self, a1, a2, ak):
        """Pairing with the class a1 L1 + a2 L2 + ak K."""
        return a1 * self.l1 + a2 * self.l2 + ak * self.k


@dataclass(frozen=True)
class SurfaceClassData:
    """Pairing table of (L1, L2, K_M) on a surface plus Mori generators.

    klt is a user-asserted flag echoed into the K-stability verdict; no
    singularity computation is attempted here.
    """

    l1l1: Fraction
    l1l2: Fraction
    l2l2: Fraction
    kl1: Fraction
    kl2: Fraction
    kk: Fraction
    mori: tuple
    klt: bool = True

    def __post_init__(self):
        for name in ("l1l1", "l1l2", "l2l2", "kl1", "kl2", "kk"):
            object.__setattr__(self, name, _frac(getattr(self, name)))
        if self.l1l1 <= 0:
            raise StabilityError("L1^2 must be positive")
        if not self.mori:
            raise StabilityError("at least one Mori generator required")
        for c in self.mori:
            if c.l1 <= 0:
                raise StabilityError(f"L1 must pair positively with {c.name} (ampleness)")

    @classmethod
    def from_json(cls, data):
        """Directly supplied pairing values, e.g.
        {"L1L1": 1, "L1L2": 1, ..., "mori": [{"name": "C", "l1": 1,
        "l2": 1, "k": -3}], "klt": true}."""
        gens = tuple(CurveClass(name=g.get("name", f"C{i}"), l1=_frac(g["l1"]),
                                l2=_frac(g["l2"]), k=_frac(g["k"]))
                     for i, g in enumerate(data["mori"]))
        return cls(l1l1=_frac(data["L1L1"]), l1l2=_frac(data["L1L2"]),
                   l2l2=_frac(data["L2L2"]), kl1=_frac(data["KL1"]),
                   kl2=_frac(data["KL2"]), kk=_frac(data["KK"]),
                   mori=gens, klt=bool(data.get("klt", True)))

    @classmethod
    def from_polytope(cls, P, l2_spec, klt=True):
        """Exact class data from the toric fan (bridges the geometry module)."""
        from .geometry import (divisor_intersection_matrix, line_bundle_class,
                               mori_generators, pair_classes)
        c1 = line_bundle_class(P, "L1")
        c2 = line_bundle_class(P, l2_spec)
        ck = line_bundle_class(P, "K")
        M = divisor_intersection_matrix(P)
        gens = []
        for g in mori_generators(P):
            pair = lambda c: Fraction(int(sum(int(ci) * int(pi) for ci, pi in zip(c, g.pairings))))
            gens.append(CurveClass(name=f"D{g.facet_index}", l1=pair(c1),
                                   l2=pair(c2), k=pair(ck)))
        return cls(l1l1=pair_classes(P, c1, c1), l1l2=pair_classes(P, c1, c2),
                   l2l2=pair_classes(P, c2, c2), kl1=pair_classes(P, ck, c1),
                   kl2=pair_classes(P, ck, c2), kk=pair_classes(P, ck, ck),
                   mori=tuple(gens), klt=klt)

    def gamma(self):
        return Fraction(self.l1l2, self.l1l1)

    def gamma_canonical(self):
        return Fraction(self.kl1, self.l1l1)


def j_constant(data):
    """The J-constant gamma = L1.L2 / L1^2, exact."""
    return data.gamma()


@dataclass(frozen=True)
class NormalConeConfig:
    """Flag ideal I_D + (t): deformation to the normal cone of a divisor D.

    Fields are the pairings of the centre class D and the exponent r of the
    test configuration.  r_min is the user-supplied lower end of the declared
    semi-ample range (the paper leaves the Seshadri-type bound to the user);
    violated positivity checks flag inadmissible r independently.
    """

    dd: Fraction
    l1d: Fraction
    l2d: Fraction
    kd: Fraction
    r: Fraction
    r_min: Fraction = Fraction(1)
    name: str = "D"

    def __post_init__(self):
        for name in ("dd", "l1d", "l2d", "kd", "r", "r_min"):
            object.__setattr__(self, name, _frac(getattr(self, name)))
        if self.l1d <= 0:
            raise StabilityError("L1.D must be positive for an effective centre")
        if self.r <= 0:
            raise StabilityError("exponent r must be positive")
        if self.r < self.r_min:
            raise StabilityError(f"r = {self.r} below the declared r_min = {self.r_min}")


_BASIS = ("L1", "L2", "K", "E")


class IntersectionTable:
    """Symmetric triple products among the pullbacks L1, L2, K and E on the
    3-fold B; user-supplied tables are validated for the structural zeroes."""

    def __init__(self, entries):
        self._t = {}
        for key, val in entries.items():
            self._t[tuple(sorted(key))] = _frac(val)
        for key in combinations_with_replacement(sorted(_BASIS), 3):
            if key not in self._t:
                raise StabilityError(f"missing triple product {key}")
            if "E" not in key and self._t[key] != 0:
                raise StabilityError(f"three pulled-back classes must vanish: {key}")
            if key.count("E") == 1 and self._t[key] != 0:
                raise StabilityError(f"p*a . p*b . E must vanish: {key}")

    @classmethod
    def from_json(cls, data):
        """Entries keyed 'A/B/C' with rational string or numeric values."""
        return cls({tuple(k.split("/")): Fraction(str(v)) for k, v in data.items()})

    def triple(self, a, b, c):
        return self._t[tuple(sorted((a, b, c)))]

    def product(self, c1, c2, c3):
        """Trilinear extension to coefficient dicts over the basis."""
        total = Fraction(0)
        for a, x in c1.items():
            if x == 0:
                continue
            for b, y in c2.items():
                if y == 0:
                    continue
                for c, z in c3.items():
                    if z == 0:
                        continue
                    total += x * y * z * self.triple(a, b, c)
        return total

    def to_dict(self):
        return {"/".join(k): str(v) for k, v in sorted(self._t.items())}


def blowup_table(data, cfg):
    """IntersectionTable for the blow-up of M x P^1 along D x {0}."""
    alpha_dot_d = {"L1": cfg.l1d, "L2": cfg.l2d, "K": cfg.kd}
    entries = {}
    for key in combinations_with_replacement(sorted(_BASIS), 3):
        e_count = key.count("E")
        if e_count == 0 or e_count == 1:
            entries[key] = Fraction(0)
        elif e_count == 2:
            (alpha,) = [s for s in key if s != "E"]
            entries[key] = -alpha_dot_d[alpha]
        else:
            entries[key] = -cfg.dd
    return IntersectionTable(entries)


def trivial_table():
    """Table of the trivial configuration (E = 0): every product vanishes."""
    return IntersectionTable({k: Fraction(0) for k in combinations_with_replacement(_BASIS, 3)})


def _r_class(r):
    return {"L1": _frac(r), "E": Fraction(-1)}


def j_weight(table, gamma, r):
    """J-weight of (B, r L1 - E) for the surface case, up to the positive
    dimensional constant:

        (r L1 - E)^2 . ( -(2/3) gamma r^{-1} (r L1 - E) + L2 ).
    """
    r = _frac(r)
    if r <= 0:
        raise StabilityError("r must be positive")
    gamma = _frac(gamma)
    A = _r_class(r)
    lead = table.product(A, A, A)
    with_l2 = table.product(A, A, {"L2": Fraction(1)})
    return -Fraction(2, 3) * gamma / r * lead + with_l2


def df_weight(table, data, r):
    """Donaldson-Futaki invariant of (B, r L1 - E), up to the same positive
    constant, via the relative-canonical decomposition

        DF = J_{K_M}-weight + (r L1 - E)^2 . E,

    re-verified against the direct expansion with K_{B/M x P^1} = E."""
    r = _frac(r)
    if r <= 0:
        raise StabilityError("r must be positive")
    gamma_k = data.gamma_canonical()
    A = _r_class(r)
    j_k = (-Fraction(2, 3) * gamma_k / r * table.product(A, A, A)
           + table.product(A, A, {"K": Fraction(1)}))
    exc = table.product(A, A, {"E": Fraction(1)})
    df = j_k + exc
    direct = (-Fraction(2, 3) * gamma_k / r * table.product(A, A, A)
              + table.product(A, A, {"K": Fraction(1), "E": Fraction(1)}))
    if df != direct:
        raise StabilityError("DF decomposition identity violated (internal error)")
    return df


def inequality_checks(table, r, nef_classes=None):
    """Sign report for the positivity lemmas on (B, r L1 - E), n = 2.

    (i)  (r L1 - E)^2 . R <= 0 for each supplied nef class R (dict over
         {L1, L2, K}); L1 itself is always included.
    (ii) (r L1 - E)^2 . E > 0.
    (iii) (r L1 - E)^2 . (r L1 + 2 E) > 0.
    (surface) (r L1 - E)^2 . (r L1 + E) >= 0.

    A violated inequality flags the configuration as outside the admissible
    semi-ample range.
    """
    r = _frac(r)
    A = _r_class(r)
    report = {"r": r}
    nef = [("L1", {"L1": Fraction(1)})]
    for i, cls in enumerate(nef_classes or []):
        nef.append((f"nef{i}", {k: _frac(v) for k, v in cls.items()}))
    nef_vals = {name: table.product(A, A, cls) for name, cls in nef}
    report["nef_pairings"] = nef_vals
    report["ii_exceptional"] = table.product(A, A, {"E": Fraction(1)})
    report["iii_combined"] = table.product(A, A, {"L1": r, "E": Fraction(2)})
    report["surface"] = table.product(A, A, {"L1": r, "E": Fraction(1)})
    report["admissible"] = (all(v <= 0 for v in nef_vals.values())
                            and report["ii_exceptional"] > 0
                            and report["iii_combined"] > 0
                            and report["surface"] >= 0)
    return report


# ---------------------------------------------------------------------------
# Chow / Hilbert weight polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightPolynomials:
    """Hilbert and weight polynomials of a test configuration and of the
    induced configuration on a subvariety of dimension m.

    Coefficients descending: h = (a0, a1, ...) of degree n, w = (b0, b1, ...)
    of degree n+1, hhat of degree m, what of degree m+1.
    """

    n: int
    m: int
    h: tuple
    w: tuple
    hhat: tuple
    what: tuple

    def __post_init__(self):
        for name, deg in (("h", self.n), ("w", self.n + 1),
                          ("hhat", self.m), ("what", self.m + 1)):
            coeffs = tuple(_frac(c) for c in getattr(self, name))
            object.__setattr__(self, name, coeffs)
            if len(coeffs) != deg + 1:
                raise StabilityError(f"{name} must have degree {deg}")
        if self.h[0] <= 0 or self.hhat[0] <= 0:
            raise StabilityError("leading Hilbert coefficients a0, a0-hat must be positive")

    @classmethod
    def from_json(cls, data):
        return cls(n=int(data["n"]), m=int(data["m"]),
                   h=tuple(Fraction(str(c)) for c in data["h"]),
                   w=tuple(Fraction(str(c)) for c in data["w"]),
                   hhat=tuple(Fraction(str(c)) for c in data["hhat"]),
                   what=tuple(Fraction(str(c)) for c in data["what"]))

    @property
    def a0(self):
        return self.h[0]

    @property
    def b0(self):
        return self.w[0]

    @property
    def a0_hat(self):
        return self.hhat[0]

    @property
    def b0_hat(self):
        return self.what[0]


def _poly_eval(coeffs_desc, x):
    total = Fraction(0)
    for c in coeffs_desc:
        total = total * x + c
    return total


def chow_hilbert_weight(wp, r):
    """Normalised weight hat w_{r,k} = hat w(k) r h(r) - k w(r) hat h(k).

    Returns a dict with the coefficients of hat w_{r,k} in k (descending,
    degree m+1), the leading coefficient e_{m+1}(r), and the r-leading
    coefficient of e_{m+1}(r), which equals b0_hat a0 - b0 a0_hat (the
    numerator of the J-weight of the configuration).
    """
    r = _frac(r)
    if r <= 0:
        raise StabilityError("r must be positive")
    hr = _poly_eval(wp.h, r)
    wr = _poly_eval(wp.w, r)
    # hat w(k) * (r h(r)): degree m+1 in k
    term1 = [c * r * hr for c in wp.what]
    # k * w(r) * hat h(k): degree m+1 in k
    term2 = [c * wr for c in wp.hhat] + [Fraction(0)]
    coeffs = [c1 - c2 for c1, c2 in zip(term1, term2)]
    e_top = coeffs[0]
    # e_{m+1}(r) = b0_hat r h(r) - w(r) a0_hat is a polynomial in r of degree
    # n+1 whose leading coefficient is b0_hat a0 - b0 a0_hat
    lead_r = wp.b0_hat * wp.a0 - wp.b0 * wp.a0_hat
    return {"coeffs_in_k": tuple(coeffs), "degree_k": wp.m + 1,
            "e_top": e_top, "e_top_leading_in_r": lead_r,
            "j_weight_normalised": lead_r / wp.a0}


# ---------------------------------------------------------------------------
# cone criteria
# ---------------------------------------------------------------------------

@dataclass
class Verdict:
    name: str
    applicable: bool
    holds: bool
    margin: object = None
    note: str = ""

    def as_dict(self):
        return {"criterion": self.name, "applicable": self.applicable,
                "holds": self.holds,
                "margin": None if self.margin is None else str(self.margin),
                "note": self.note}


def cone_criteria(data):
    """Numerical stability verdicts from exact pairing arithmetic.

    * J-stable (sufficient): gamma L1 - L2 nef against all generators,
      gamma > 0.
    * J-semistable (surface criterion): (4/3) gamma L1 - L2 nef, gamma > 0.
    * K-stable cone: gamma_K L1 - K_M nef with gamma_K = K.L1/L1^2 > 0 and
      the klt flag set.
    * Donaldson necessary condition: 2 gamma L1 - L2 strictly positive
      against all generators.

    gamma <= 0 marks the L2-criteria inapplicable, per the hypotheses.
    """
    gamma = data.gamma()
    gamma_k = data.gamma_canonical()
    verdicts = []

    def min_pair(a1, a2, ak):
        return min(c.pair(a1, a2, ak) for c in data.mori)

    applicable = gamma > 0
    if applicable:
        m1 = min_pair(gamma, Fraction(-1), Fraction(0))
        verdicts.append(Verdict("j_stable_sufficient", True, m1 >= 0, m1,
                                "gamma L1 - L2 nef"))
        m2 = min_pair(Fraction(4, 3) * gamma, Fraction(-1), Fraction(0))
        verdicts.append(Verdict("j_semistable_surface", True, m2 >= 0, m2,
                                "(4/3) gamma L1 - L2 nef"))
        m3 = min_pair(2 * gamma, Fraction(-1), Fraction(0))
        verdicts.append(Verdict("donaldson_necessary", True, m3 > 0, m3,
                                "2 gamma L1 - L2 > 0 (strict)"))
    else:
        for name in ("j_stable_sufficient", "j_semistable_surface", "donaldson_necessary"):
            verdicts.append(Verdict(name, False, False, None,
                                    "inapplicable: gamma <= 0"))
    if gamma_k > 0:
        mk = min_pair(gamma_k, Fraction(0), Fraction(-1))
        holds = mk >= 0 and data.klt
        note = "gamma_K L1 - K_M nef" + ("" if data.klt else "; klt flag not set")
        verdicts.append(Verdict("k_stable_cone", True, holds, mk, note))
    else:
        verdicts.append(Verdict("k_stable_cone", False, False, None,
                                "inapplicable: gamma_K <= 0"))
    return {"gamma": gamma, "gamma_canonical": gamma_k,
            "verdicts": verdicts}
