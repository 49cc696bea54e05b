"""Micro-canonical energy shells, shell projectors and projector leakage."""

from dataclasses import dataclass

import numpy as np

from .hilbert import operator_norm


class EmptyShellError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnergyShell:
    tag: str
    E: float
    delta: float
    indices: np.ndarray

    @property
    def empty(self):
        return len(self.indices) == 0

    @property
    def count(self):
        return len(self.indices)

    def require_nonempty(self):
        if self.empty:
            raise EmptyShellError(f"{self.tag} shell at E={self.E} +- {self.delta} is empty")
        return self

    def to_dict(self):
        return {"tag": self.tag, "E": self.E, "delta": self.delta, "count": self.count}


def make_shell(spectrum, E, delta, tag="global"):
    """Indices ``n`` with ``|E_n - E| <= delta`` (inclusive window).

    An empty result is returned flagged (``shell.empty``) instead of raising.
    """
    if not delta > 0:
        raise ValueError(f"shell half-width must be > 0, got {delta}")
    if tag not in ("bath", "global"):
        raise ValueError(f"unknown shell tag {tag!r}")
    spectrum = np.asarray(spectrum)
    idx = np.flatnonzero(np.abs(spectrum - E) <= delta)
    return EnergyShell(tag, float(E), float(delta), idx)


def write_shell(shell, json_path, indices_path=None):
    """Shell report as JSON; indices go to a little-endian u32 sidecar."""
    from .reports import write_json

    d = shell.to_dict()
    if indices_path is not None:
        np.asarray(shell.indices, dtype="<u4").tofile(indices_path)
        d["indices_path"] = indices_path
    else:
        d["indices"] = shell.indices.tolist()
    return write_json(json_path, d)


def read_shell_indices(path):
    return np.fromfile(path, dtype="<u4").astype(np.int64)


def microcanonical_reduced(sd, shell):
    """Reduced micro-canonical state: the mean of ``tau_n`` over the shell."""
    if shell.tag != "global":
        raise ValueError("microcanonical_reduced needs a global shell")
    shell.require_nonempty()
    return sd.taus[shell.indices].mean(axis=0)


@dataclass(frozen=True, eq=False)
class ShellProjector:
    shell: EnergyShell
    P: np.ndarray

    @property
    def Q(self):
        return np.eye(self.P.shape[0]) - self.P


def bath_shell_embedding(shell, bath, d_S):
    """``P = 1_S (x) sum_{k in shell} |k><k|`` on the global space."""
    if shell.tag != "bath":
        raise ValueError("bath_shell_embedding needs a bath shell")
    U = bath.eigenvectors[:, shell.indices]
    return ShellProjector(shell, np.kron(np.eye(d_S), U @ U.conj().T))


def spectral_shell_projector(A, lam, delta):
    """Projector onto the span of eigenvectors of ``A`` in ``[lam-delta, lam+delta]``."""
    w, v = np.linalg.eigh(A)
    sel = v[:, np.abs(w - lam) <= delta]
    return sel @ sel.conj().T


def leakage_bound_check(A1, A2, lam, delta1, delta2, rho, support_tol=1e-10, tol=1e-10):
    """Audit ``Tr(rho Q) <= ((||A1 - A2|| + delta2) / delta1)^2``.

    ``Q`` projects onto the complement of the ``delta1`` shell of ``A1``
    around ``lam``; ``rho`` must live in the ``delta2`` shell of ``A2``.
    """
    from .reports import BoundReport

    if not delta1 > 0:
        raise ValueError("delta1 must be > 0")
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    P2 = spectral_shell_projector(A2, lam, delta2)
    outside = float(np.trace(rho).real - np.trace(P2 @ rho).real)
    if outside > support_tol:
        raise PreconditionError(f"state has weight {outside:.3e} outside the A2 shell")
    P1 = spectral_shell_projector(A1, lam, delta1)
    lhs = float(np.trace(rho).real - np.trace(P1 @ rho).real)
    rhs = ((operator_norm(np.asarray(A1) - np.asarray(A2), check=False) + delta2) / delta1) ** 2
    return BoundReport.make("leakage_lemma", lhs, rhs, tol=tol,
                            inputs={"lambda": lam, "delta1": delta1, "delta2": delta2,
                                    "support_residual": outside})


def shell_overlaps(sd, bath, shell):
    """``W[s, k, n] = <n| (|s> (x) |k_B>)`` for bath eigenvectors ``k`` in the shell."""
    U = bath.eigenvectors[:, shell.indices]
    # (s, b, n) -> (s, k, n) as a batched matmul over s
    return np.matmul(U.T[None], sd.vectors_sbn.conj())


def eigenstate_leakage(sd, bath, shell, n=None):
    """``<n|Q|n>`` for the embedded bath shell; all ``n`` when ``n`` is None."""
    if shell.tag != "bath":
        raise ValueError("eigenstate_leakage needs a bath shell")
    U = bath.eigenvectors[:, shell.indices]
    V = sd.vectors_sbn if n is None else sd.vectors_sbn[:, :, [n]]
    inside = np.matmul(U.conj().T[None], V)
    leak = 1.0 - np.sum(np.abs(inside) ** 2, axis=(0, 1))
    leak = np.clip(leak, 0.0, 1.0)
    return float(leak[0]) if n is not None else leak
