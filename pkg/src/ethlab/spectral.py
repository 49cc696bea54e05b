"""Exact diagonalization, eigenstate reduced states and the dephasing map.

For a global state ``rho`` the infinite-time average keeps only the diagonal
of ``rho`` in the energy eigenbasis (``p_n = <n|rho|n>``); its bath partial
trace is ``sum_n p_n tau_n`` with ``tau_n = Tr_B |n><n|``. When eigenvalues
coincide within the degeneracy tolerance the coherences inside each
degenerate block survive the time average, so they are kept.
"""

import json
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from filelock import FileLock

from .hilbert import TOL, SpaceShape, partial_trace_bath, reduce_pure

FORMAT_VERSION = 1
DEGENERACY_RTOL = 1e-10


class NumericError(RuntimeError):
    pass


class CacheError(RuntimeError):
    pass


def degeneracy_classes(energies, tol):
    """Group sorted energies whose consecutive gaps are ``<= tol``."""
    breaks = np.flatnonzero(np.diff(energies) > tol) + 1
    return np.split(np.arange(len(energies)), breaks)


@dataclass(frozen=True, eq=False)
class SpectralData:
    shape: SpaceShape
    energies: np.ndarray
    eigenvectors: np.ndarray
    model_hash: str = ""
    degeneracy_tol: float = field(default=0.0)

    @cached_property
    def classes(self):
        return degeneracy_classes(self.energies, self.degeneracy_tol)

    @cached_property
    def degenerate_classes(self):
        return [c for c in self.classes if len(c) > 1]

    @property
    def is_degenerate(self):
        return bool(self.degenerate_classes)

    @property
    def dim(self):
        return len(self.energies)

    @cached_property
    def taus(self):
        """All eigenstate reduced states, shape ``(d, d_S, d_S)``."""
        v = self.eigenvectors.reshape(self.shape.d_S, self.shape.d_B, -1)
        return np.ascontiguousarray(np.einsum("sbn,tbn->nst", v, v.conj()))

    @cached_property
    def vectors_sbn(self):
        return self.eigenvectors.reshape(self.shape.d_S, self.shape.d_B, -1)


def fix_gauge(vecs):
    """Make the largest-magnitude entry of each column real and positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    pivot = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (pivot.conj() / np.abs(pivot))[None, :]


def diagonalize_matrix(H, shape, model_hash=""):
    H = np.asarray(H, dtype=complex)
    try:
        energies, vecs = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    vecs = fix_gauge(vecs)
    hnorm = max(abs(energies[0]), abs(energies[-1]))
    resid = np.abs(H @ vecs - vecs * energies[None, :]).max()
    # column-wise 2-norm residual bound, see SpectralData invariants
    col_resid = np.linalg.norm(H @ vecs - vecs * energies[None, :], axis=0).max()
    if col_resid > 1e-9 * max(hnorm, 1.0):
        raise NumericError(f"eigen-residual {col_resid:.3e} (max-abs {resid:.3e}) too large")
    tol = DEGENERACY_RTOL * max(1.0, hnorm)
    return SpectralData(shape, energies, vecs, model_hash, tol)


def diagonalize(h):
    """Diagonalize a :class:`~ethlab.models.SplitHamiltonian`."""
    model_hash = h.spec.content_hash() if h.spec is not None else ""
    return diagonalize_matrix(h.H, h.shape, model_hash)


@dataclass(frozen=True, eq=False)
class BathSpectrum:
    energies: np.ndarray
    eigenvectors: np.ndarray


def diagonalize_bath(h):
    e, v = np.linalg.eigh(h.H_B)
    return BathSpectrum(e, fix_gauge(v))


def eigenstate_reduced(sd, n):
    if not 0 <= n < sd.dim:
        raise IndexError(f"eigenstate index {n} out of range [0, {sd.dim})")
    return sd.taus[n]


@dataclass
class DiagonalEnsemble:
    """Output of the dephasing map.

    ``p`` holds ``<n|rho|n>``; ``blocks`` maps the position of a degenerate
    class in ``sd.degenerate_classes`` to the retained block ``<n|rho|m>``.
    """

    p: np.ndarray
    blocks: dict
    degenerate: bool
    sd: SpectralData

    def to_matrix(self):
        V = self.sd.eigenvectors
        out = (V * self.p[None, :]) @ V.conj().T
        for k, block in self.blocks.items():
            c = self.sd.degenerate_classes[k]
            Vc = V[:, c]
            out += Vc @ (block - np.diag(np.diag(block))) @ Vc.conj().T
        return out


def _in_eigenbasis(rho, sd):
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        a = sd.eigenvectors.conj().T @ rho
        return a, None
    return None, sd.eigenvectors.conj().T @ rho @ sd.eigenvectors


def dephase(rho, sd):
    """Infinite-time average of ``rho`` as a :class:`DiagonalEnsemble`.

    ``rho`` may be a global density matrix or a global state vector.
    """
    a, rt = _in_eigenbasis(rho, sd)
    if rt is None:
        p = np.abs(a) ** 2
    else:
        p = np.diag(rt).real.copy()
    blocks = {}
    for k, c in enumerate(sd.degenerate_classes):
        blocks[k] = np.outer(a[c], a[c].conj()) if rt is None else rt[np.ix_(c, c)]
    return DiagonalEnsemble(p, blocks, bool(blocks), sd)


def reduced_from_amplitudes(sd, amps):
    """``Phi_S`` of pure states given their eigenbasis amplitudes ``<n|psi>``.

    ``amps`` has shape ``(..., d)``; result has shape ``(..., d_S, d_S)``.
    """
    amps = np.asarray(amps)
    w = np.abs(amps) ** 2
    if sd.is_degenerate:
        w = w.copy()
        for c in sd.degenerate_classes:
            w[..., c] = 0.0
    out = np.einsum("...n,nst->...st", w, sd.taus)
    for c in sd.degenerate_classes:
        v = amps[..., c] @ sd.eigenvectors[:, c].T
        out = out + reduce_pure(v, sd.shape.d_S)
    return out


def equilibrium_state(rho, sd):
    """Time-averaged reduced system state ``Tr_B Phi(rho)``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        return reduced_from_amplitudes(sd, sd.eigenvectors.conj().T @ rho)
    ens = dephase(rho, sd)
    return equilibrium_from_ensemble(ens)


def equilibrium_from_ensemble(ens):
    sd = ens.sd
    p = ens.p
    if ens.degenerate:
        p = p.copy()
        for c in sd.degenerate_classes:
            p[c] = 0.0
    out = np.einsum("n,nst->st", p, sd.taus)
    for k, block in ens.blocks.items():
        c = sd.degenerate_classes[k]
        Vc = sd.eigenvectors[:, c]
        out = out + partial_trace_bath(Vc @ block @ Vc.conj().T, sd.shape)
    return out


def evolve_reduced(rho0, sd, times):
    """``Tr_B rho(t)`` for each ``t`` in ``times``; returns ``(len(times), d_S, d_S)``.

    Pure initial states may be passed as vectors, which is much cheaper.
    """
    times = np.asarray(times, dtype=float)
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")
    V, E = sd.eigenvectors, sd.energies
    a, rt = _in_eigenbasis(rho0, sd)
    out = np.empty((len(times), sd.shape.d_S, sd.shape.d_S), dtype=complex)
    for i, t in enumerate(times):
        ph = np.exp(-1j * E * t)
        if rt is None:
            out[i] = reduce_pure(V @ (ph * a), sd.shape.d_S)
        else:
            Vt = V * ph[None, :]
            out[i] = partial_trace_bath(Vt @ rt @ Vt.conj().T, sd.shape)
    return out


def time_average_reduced(rho0, sd, T, n_points):
    """Midpoint-rule estimate of ``(1/T) int_0^T Tr_B rho(t) dt``."""
    times = (np.arange(n_points) + 0.5) * (T / n_points)
    return evolve_reduced(rho0, sd, times).mean(axis=0)


# --- on-disk cache -------------------------------------------------------

def _write_c128(path, arr, order="C"):
    with open(path, "wb") as fh:
        fh.write(np.asarray(arr, dtype="<c16").tobytes(order=order))


def save_spectral(sd, directory, bath=None, extra_meta=None, with_tau=True):
    os.makedirs(directory, exist_ok=True)
    with FileLock(os.path.join(directory, ".lock")):
        np.asarray(sd.energies, dtype="<f8").tofile(os.path.join(directory, "energies.f64"))
        _write_c128(os.path.join(directory, "eigvecs.c128"), sd.eigenvectors, order="F")
        if with_tau:
            _write_c128(os.path.join(directory, "tau.c128"), sd.taus)
        if bath is not None:
            np.asarray(bath.energies, dtype="<f8").tofile(
                os.path.join(directory, "bath_energies.f64"))
            _write_c128(os.path.join(directory, "bath_eigvecs.c128"), bath.eigenvectors, order="F")
        meta = {
            "model_hash": sd.model_hash,
            "d_S": sd.shape.d_S,
            "d_B": sd.shape.d_B,
            "d_total": sd.dim,
            "tolerances": {"degeneracy": sd.degeneracy_tol, "hermiticity": TOL.hermiticity,
                           "trace": TOL.trace, "positivity": TOL.positivity},
            "format_version": FORMAT_VERSION,
        }
        meta.update(extra_meta or {})
        with open(os.path.join(directory, "meta.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return directory


def _read_c128(path, shape, order="C"):
    flat = np.fromfile(path, dtype="<c16")
    return flat.reshape(shape, order=order)


def load_meta(directory):
    path = os.path.join(directory, "meta.json")
    if not os.path.exists(path):
        raise CacheError(f"no spectral cache at {directory}")
    with open(path) as fh:
        return json.load(fh)


def load_spectral(directory, expected_hash=None):
    meta = load_meta(directory)
    if meta.get("format_version") != FORMAT_VERSION:
        raise CacheError(f"unsupported cache format {meta.get('format_version')}")
    if expected_hash is not None and meta["model_hash"] != expected_hash:
        raise CacheError(
            f"stale cache: hash {meta['model_hash']} does not match model {expected_hash}")
    d, d_S, d_B = meta["d_total"], meta["d_S"], meta["d_B"]
    energies = np.fromfile(os.path.join(directory, "energies.f64"), dtype="<f8")
    vecs = _read_c128(os.path.join(directory, "eigvecs.c128"), (d, d), order="F")
    sd = SpectralData(SpaceShape(d_S, d_B), energies, np.ascontiguousarray(vecs),
                      meta["model_hash"], meta["tolerances"]["degeneracy"])
    tau_path = os.path.join(directory, "tau.c128")
    if os.path.exists(tau_path):
        sd.__dict__["taus"] = _read_c128(tau_path, (d, d_S, d_S))
    bath = None
    be = os.path.join(directory, "bath_energies.f64")
    if os.path.exists(be):
        e = np.fromfile(be, dtype="<f8")
        v = _read_c128(os.path.join(directory, "bath_eigvecs.c128"), (d_B, d_B), order="F")
        bath = BathSpectrum(e, np.ascontiguousarray(v))
    return sd, bath, meta
