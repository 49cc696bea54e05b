"""System + bath spin-chain Hamiltonians split as ``H = H_C + 1_S (x) H_B``.

Sites are laid out on an open chain: system sites first (slowest tensor
index), then bath sites. Bath site 0 is the boundary site; the only
system-bath bond attaches there, and that bond lives in ``H_C`` together with
every term touching a system site. Everything acting on bath sites alone goes
into ``H_B``. Pauli matrices (eigenvalues +-1) are used, with k = hbar = 1.

Families
--------
transverse_ising
    bonds ``J Z Z`` (boundary bond ``g Z Z``), transverse field ``h X`` on all
    sites, longitudinal ``h_S Z`` on system sites and ``hz Z`` on bath sites.
xxz
    bonds ``J (X X + Y Y + delta_z Z Z)`` (boundary with ``g``), same fields.
custom_dense
    explicit ``H_B`` (d_B x d_B) and ``H_C`` (global) matrices.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .hilbert import SpaceShape, check_hermitian, operator_norm

MAX_SPINS = 13
FAMILIES = ("transverse_ising", "xxz", "custom_dense")

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DEFAULT_COUPLINGS = {"J": 1.0, "delta_z": 1.0, "h": 0.9045, "hz": 0.809,
                     "h_S": 0.5, "g": 0.4}


class ModelSpecError(ValueError):
    pass


class ResourceError(RuntimeError):
    pass


@dataclass
class ModelSpec:
    model_family: str = "transverse_ising"
    sys_sites: int = 1
    bath_sites: int = 9
    couplings: dict = field(default_factory=lambda: dict(DEFAULT_COUPLINGS))
    disorder: dict = field(default_factory=lambda: {"seed": 1234, "amplitude": 1e-3})
    # custom_dense only: {"H_B": {"re", "im"}, "H_C": {"re", "im"}, "d_S": int}
    custom: dict | None = None
    max_spins: int = MAX_SPINS

    def validate(self):
        if self.model_family not in FAMILIES:
            raise ModelSpecError(f"unknown model family {self.model_family!r}")
        if self.model_family == "custom_dense":
            if not self.custom or not {"H_B", "H_C", "d_S"} <= set(self.custom):
                raise ModelSpecError("custom_dense needs custom.H_B, custom.H_C and custom.d_S")
            return self
        if self.sys_sites < 1 or self.bath_sites < 1:
            raise ModelSpecError("need at least one system and one bath site")
        if self.sys_sites + self.bath_sites > self.max_spins:
            raise ResourceError(
                f"{self.sys_sites + self.bath_sites} spins exceeds the cap of {self.max_spins}")
        unknown = set(self.couplings) - set(DEFAULT_COUPLINGS)
        if unknown:
            raise ModelSpecError(f"unknown couplings {sorted(unknown)}")
        vals = [float(v) for v in self.couplings.values()]
        amp = float(self.disorder.get("amplitude", 0.0))
        if not np.all(np.isfinite(vals + [amp])):
            raise ModelSpecError("couplings and disorder must be finite")
        if amp < 0:
            raise ModelSpecError("disorder amplitude must be >= 0")
        return self

    def coupling(self, name):
        return float(self.couplings.get(name, 0.0))

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        extra = set(d) - set(known)
        if extra:
            raise ModelSpecError(f"unknown ModelSpec fields {sorted(extra)}")
        spec = cls(**known)
        if spec.model_family != "custom_dense":
            unknown = set(spec.couplings) - set(DEFAULT_COUPLINGS)
            if unknown:
                raise ModelSpecError(f"unknown couplings {sorted(unknown)}")
            # absent couplings are zero, not defaults, once a spec is written down
            spec.couplings = {k: float(spec.couplings.get(k, 0.0)) for k in DEFAULT_COUPLINGS}
        return spec

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    def content_hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def default_spec(sys_sites=1, bath_sites=9, **couplings):
    c = dict(DEFAULT_COUPLINGS)
    c.update(couplings)
    return ModelSpec(sys_sites=sys_sites, bath_sites=bath_sites, couplings=c)


def _site_operator(n_sites, ops):
    """Sparse operator on ``n_sites`` qubits with ``ops = {site: 'X'|'Y'|'Z'}``."""
    out = sp.identity(1, dtype=complex, format="csr")
    for site in range(n_sites):
        out = sp.kron(out, sp.csr_matrix(PAULI[ops.get(site, "I")]), format="csr")
    return out


def _assemble(n_sites, terms):
    dim = 2 ** n_sites
    mat = sp.csr_matrix((dim, dim), dtype=complex)
    for coef, ops in terms:
        if coef != 0.0:
            mat = mat + coef * _site_operator(n_sites, ops)
    return mat.toarray()


def _bond(family, c, i, j, delta_z):
    if family == "transverse_ising":
        return [(c, {i: "Z", j: "Z"})]
    return [(c, {i: "X", j: "X"}), (c, {i: "Y", j: "Y"}), (c * delta_z, {i: "Z", j: "Z"})]


def chain_terms(spec, boundary_site=0):
    """Split the chain into ``(hc_terms, hb_terms)`` on global site labels.

    ``boundary_site`` picks which bath site the system-bath bond attaches to;
    anything other than 0 breaks the locality convention and exists for
    fault-injection tests.
    """
    ns, nb = spec.sys_sites, spec.bath_sites
    fam = spec.model_family
    J, dz, h = spec.coupling("J"), spec.coupling("delta_z"), spec.coupling("h")
    hS, hz, g = spec.coupling("h_S"), spec.coupling("hz"), spec.coupling("g")
    amp = float(spec.disorder.get("amplitude", 0.0))
    rng = np.random.default_rng(int(spec.disorder.get("seed", 0)))
    # system fields are drawn first so they do not depend on bath size
    w_sys = rng.uniform(-amp, amp, size=ns) if amp > 0 else np.zeros(ns)
    w_bath = rng.uniform(-amp, amp, size=nb) if amp > 0 else np.zeros(nb)

    hc, hb = [], []
    for s in range(ns):
        hc += [(h, {s: "X"}), (hS + w_sys[s], {s: "Z"})]
        if s + 1 < ns:
            hc += _bond(fam, J, s, s + 1, dz)
    hc += _bond(fam, g, ns - 1, ns + boundary_site, dz)
    for b in range(nb):
        site = ns + b
        hb += [(h, {site: "X"}), (hz + w_bath[b], {site: "Z"})]
        if b + 1 < nb:
            hb += _bond(fam, J, site, site + 1, dz)
    return hc, hb


@dataclass(frozen=True, eq=False)
class SplitHamiltonian:
    shape: SpaceShape
    H_B: np.ndarray
    H_C: np.ndarray
    norm_HC: float
    spec: ModelSpec | None = None

    @cached_property
    def H_B_global(self):
        return np.kron(np.eye(self.shape.d_S), self.H_B)

    @cached_property
    def H(self):
        return self.H_C + self.H_B_global


def _from_matrix(m):
    if isinstance(m, dict):
        return np.asarray(m["re"], dtype=float) + 1j * np.asarray(m.get("im", 0.0), dtype=float)
    return np.asarray(m, dtype=complex)


def matrix_to_json(m):
    m = np.asarray(m)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def custom_spec(H_B, H_C, d_S):
    return ModelSpec(model_family="custom_dense", sys_sites=0, bath_sites=0,
                     couplings={}, disorder={"seed": 0, "amplitude": 0.0},
                     custom={"H_B": matrix_to_json(H_B), "H_C": matrix_to_json(H_C),
                             "d_S": int(d_S)})


def build_hamiltonian(spec, boundary_site=0):
    """Build the split Hamiltonian described by ``spec``."""
    spec.validate()
    if spec.model_family == "custom_dense":
        H_B = check_hermitian(_from_matrix(spec.custom["H_B"]))
        H_C = check_hermitian(_from_matrix(spec.custom["H_C"]))
        d_S = int(spec.custom["d_S"])
        shape = SpaceShape(d_S, H_B.shape[0])
        if H_C.shape != (shape.dim, shape.dim):
            raise ModelSpecError(f"H_C must be {shape.dim}x{shape.dim}, got {H_C.shape}")
        return SplitHamiltonian(shape, H_B, H_C, operator_norm(H_C), spec)

    ns, nb = spec.sys_sites, spec.bath_sites
    hc_terms, hb_terms = chain_terms(spec, boundary_site)
    shape = SpaceShape(2 ** ns, 2 ** nb)
    # H_B on the bath sites alone: relabel sites to start at 0
    H_B = _assemble(nb, [(c, {k - ns: v for k, v in ops.items()}) for c, ops in hb_terms])
    support = 1 + max(max(ops) for c, ops in hc_terms)
    hc_local = _assemble(support, hc_terms)
    H_C = np.kron(hc_local, np.eye(2 ** (ns + nb - support)))
    # identity on sites outside the support leaves the norm unchanged
    return SplitHamiltonian(shape, H_B, H_C, operator_norm(hc_local), spec)


def _site_commutator_residual(H_C, shape, bath_site, n_sites):
    """Max-abs of ``[H_C, sigma]`` for sigma in {X, Y, Z} on one bath site."""
    ns = n_sites - int(np.log2(shape.d_B))
    site = ns + bath_site
    left, right = 2 ** site, 2 ** (n_sites - site - 1)
    t = H_C.reshape(left, 2, right, left, 2, right)
    worst = 0.0
    for name in "XYZ":
        s = PAULI[name]
        hs = np.einsum("aibcjd,jk->aibckd", t, s)
        sh = np.einsum("ij,ajbckd->aibckd", s, t)
        worst = max(worst, float(np.abs(hs - sh).max()))
    return worst


def verify_split(h, reference_norm=None):
    """Check the split invariants; returns ``{name: BoundReport}``.

    ``split``: max-abs of ``H - H_C - 1 (x) H_B``.
    ``locality``: largest commutator of ``H_C`` with single-site Paulis on
    interior bath sites (every bath site except the boundary one).
    ``norm``: relative gap between ``norm_HC`` and the norm of the stored
    global ``H_C`` (or ``reference_norm`` when comparing across bath sizes).
    """
    from .reports import BoundReport

    tol = 1e-12
    split = float(np.abs(h.H - h.H_C - h.H_B_global).max())
    out = {"split": BoundReport.make("split_residual", split, tol)}

    loc = 0.0
    n_bath = np.log2(h.shape.d_B)
    n_sys = np.log2(h.shape.d_S)
    if n_bath.is_integer() and n_sys.is_integer():
        nb, n_sites = int(n_bath), int(n_bath + n_sys)
        for b in range(1, nb):
            loc = max(loc, _site_commutator_residual(h.H_C, h.shape, b, n_sites))
    out["locality"] = BoundReport.make("boundary_locality", loc, tol)

    ref = operator_norm(h.H_C, check=False) if reference_norm is None else reference_norm
    rel = abs(h.norm_HC - ref) / max(ref, 1e-300)
    out["norm"] = BoundReport.make("norm_hc_consistency", rel, 1e-10)
    return out
