"""Micro-canonical thermodynamics of the bath from its spectrum.

The density of states is a Gaussian-kernel smoothing of the eigenvalue point
measure; entropy, inverse temperature ``beta = dS/dE`` and heat capacity
``C = -beta^2 / (dbeta/dE)`` (k = 1) follow by finite differences on a
uniform energy grid.
"""

import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_GRID = 512
STAT_FLOOR = 20


class DegenerateProfileError(ValueError):
    pass


class RangeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ThermoProfile:
    energy_grid: np.ndarray
    dos: np.ndarray
    entropy: np.ndarray
    beta: np.ndarray
    dbeta_dE: np.ndarray
    heat_capacity: np.ndarray
    in_valid_range: np.ndarray
    kernel_width: float = 0.0

    @property
    def valid_range(self):
        E = self.energy_grid[self.in_valid_range]
        if E.size == 0:
            return None
        return float(E[0]), float(E[-1])

    def beta_at(self, E):
        return float(np.interp(E, self.energy_grid, self.beta))

    def heat_capacity_at(self, E):
        return float(np.interp(E, self.energy_grid, self.heat_capacity))

    def beta2_over_C(self):
        """``beta^2 / C`` on the grid; equals ``-dbeta/dE`` where C comes from beta."""
        C = self.heat_capacity
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.beta ** 2 / C
        return np.where(C > 0, r, -self.dbeta_dE)

    def rows(self):
        return [{"E": e, "dos": n, "S": s, "beta": b, "C": c, "in_valid_range": bool(v)}
                for e, n, s, b, c, v in zip(self.energy_grid, self.dos, self.entropy,
                                            self.beta, self.heat_capacity, self.in_valid_range)]


PROFILE_COLUMNS = ["E", "dos", "S", "beta", "C", "in_valid_range"]


def default_kernel_width(spectrum, rule="std", bath_sites=None):
    """Kernel width for :func:`thermo_profile`.

    ``rule="std"`` (default): 0.3 x standard deviation of the spectrum.
    ``rule="spacing"``: 1.5 x mean level spacing x sqrt(bath sites); at
    desk-scale bath sizes this leaves dbeta/dE dominated by level noise.
    """
    e = np.sort(np.asarray(spectrum, dtype=float))
    if rule == "std":
        return 0.3 * float(e.std())
    if rule != "spacing":
        raise ValueError(f"unknown kernel rule {rule!r}")
    spacing = (e[-1] - e[0]) / max(len(e) - 1, 1)
    if bath_sites is None:
        bath_sites = max(np.log2(len(e)), 1.0)
    return 1.5 * spacing * np.sqrt(bath_sites)


def _largest_run(mask):
    """Boolean mask keeping only the longest contiguous ``True`` run."""
    out = np.zeros_like(mask)
    best, start = (0, 0), None
    for i, m in enumerate(np.append(mask, False)):
        if m and start is None:
            start = i
        elif not m and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    out[best[0]:best[1]] = True
    return out


def thermo_profile(bath_spectrum, kernel_width=None, grid_points=DEFAULT_GRID,
                   ref_width=None, stat_floor=STAT_FLOOR, grid=None):
    """Build a :class:`ThermoProfile` from a bath spectrum.

    ``ref_width`` fixes the constant inside ``S = ln(2 ref_width nu)`` (it
    only shifts S). The valid range is the longest grid run with
    ``dbeta/dE < 0`` and at least ``stat_floor`` levels within two kernel
    widths of E.
    """
    e = np.asarray(bath_spectrum, dtype=float)
    if e.size < 100:
        warnings.warn(f"only {e.size} levels; thermodynamic estimates will be noisy")
    if np.ptp(e) == 0:
        raise DegenerateProfileError("all bath levels coincide")
    w = default_kernel_width(e) if kernel_width is None else float(kernel_width)
    ref_width = w if ref_width is None else ref_width
    if grid is None:
        grid = np.linspace(e.min(), e.max(), grid_points)
    grid = np.asarray(grid, dtype=float)

    levels, mult = np.unique(e, return_counts=True)
    z = (grid[:, None] - levels[None, :]) / w
    dos = (mult[None, :] * np.exp(-0.5 * z * z)).sum(axis=1) / (w * np.sqrt(2 * np.pi))
    with np.errstate(divide="ignore"):
        S = np.log(2 * ref_width * dos)
    beta = np.gradient(S, grid)
    dbeta = np.gradient(beta, grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        C = -beta ** 2 / dbeta

    e_sorted = np.sort(e)
    lo = np.searchsorted(e_sorted, grid - 2 * w, side="left")
    hi = np.searchsorted(e_sorted, grid + 2 * w, side="right")
    ok = (dbeta < 0) & ((hi - lo) >= stat_floor) & np.isfinite(S)
    valid = _largest_run(ok)
    return ThermoProfile(grid, dos, S, beta, dbeta, C, valid, w)


def synthetic_profile(energy_grid, beta, heat_capacity):
    """Profile from given beta(E) and C(E), valid everywhere (for formula checks)."""
    grid = np.asarray(energy_grid, dtype=float)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), grid.shape).copy()
    C = np.broadcast_to(np.asarray(heat_capacity, dtype=float), grid.shape).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        dbeta = -beta ** 2 / C
    nan = np.full(grid.shape, np.nan)
    return ThermoProfile(grid, nan, nan, beta, dbeta, C, np.ones(grid.shape, bool))


def _check_in_range(profile, E):
    vr = profile.valid_range
    if vr is None or not vr[0] <= E <= vr[1]:
        raise RangeError(f"E={E} outside the valid range {vr}")


def precision_condition(profile, E, delta_B, norm_HC):
    """Smallest precision allowed at (E, delta_B): ``beta^2 delta_B ||H_C|| / C``."""
    _check_in_range(profile, E)
    ratio = float(np.interp(E, profile.energy_grid, profile.beta2_over_C()))
    return ratio * delta_B * norm_HC


def eth_precision_at(beta2_over_C, d_S, norm_HC):
    """``12 (2 ||H_C||^2 d_S beta^2 / C)^(2/3)`` pointwise."""
    return 12.0 * np.cbrt(2.0 * norm_HC ** 2 * d_S * np.asarray(beta2_over_C)) ** 2


def optimal_bath_width(beta2_over_C, d_S, norm_HC):
    """Minimizer ``(4 ||H_C|| C / (d_S beta^2))^(1/3)`` of the eigenstate bound."""
    return np.cbrt(4.0 * norm_HC / (d_S * np.asarray(beta2_over_C)))


def eigenstate_bound_objective(delta_B, beta2_over_C, d_S, norm_HC):
    """``4 ||H_C|| (2 ||H_C|| / delta_B^2 + d_S beta^2 delta_B / C)``."""
    delta_B = np.asarray(delta_B, dtype=float)
    return 4.0 * norm_HC * (2.0 * norm_HC / delta_B ** 2 + d_S * beta2_over_C * delta_B)


@dataclass
class Theorem1Constants:
    eps_eth: float
    delta: float
    region: tuple
    sup_energy: float
    energies: np.ndarray
    deltaB_opt_values: np.ndarray

    def deltaB_opt(self, E):
        return float(np.interp(E, self.energies, self.deltaB_opt_values))

    @property
    def vacuous(self):
        return self.eps_eth >= 2.0


def theorem1_constants(profile, region, d_S, norm_HC):
    """ETH precision, ETH scale and optimal bath width over ``region``.

    The supremum over the region is a maximum over profile grid points.
    """
    lo, hi = region
    vr = profile.valid_range
    if vr is None or lo < vr[0] - 1e-12 or hi > vr[1] + 1e-12 or lo > hi:
        raise RangeError(f"region {region} not inside the valid range {vr}")
    E = profile.energy_grid
    sel = (E >= lo) & (E <= hi) & profile.in_valid_range
    if not sel.any():
        raise RangeError(f"no grid points in region {region}")
    ratio = profile.beta2_over_C()[sel]
    eps = eth_precision_at(ratio, d_S, norm_HC)
    k = int(np.argmax(eps))
    eps_eth = float(eps[k])
    delta = 2.0 * np.sqrt(3.0) * norm_HC / np.sqrt(eps_eth)
    return Theorem1Constants(eps_eth, float(delta), (float(lo), float(hi)), float(E[sel][k]),
                             E[sel], optimal_bath_width(ratio, d_S, norm_HC))


def kernel_sensitivity(bath_spectrum, region, d_S, norm_HC, kernel_width,
                       factors=(0.5, 0.75, 1.0, 1.5, 2.0), grid_points=DEFAULT_GRID):
    """Theorem-1 constants recomputed with the kernel width scaled by ``factors``.

    Rows where ``region`` falls outside the rescaled valid range carry
    ``None`` instead of constants.
    """
    rows = []
    for f in factors:
        w = f * kernel_width
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prof = thermo_profile(bath_spectrum, kernel_width=w, grid_points=grid_points)
        row = {"factor": float(f), "kernel_width": float(w), "valid_range": prof.valid_range,
               "eps_eth": None, "delta": None}
        try:
            c = theorem1_constants(prof, region, d_S, norm_HC)
        except RangeError:
            pass
        else:
            row["eps_eth"], row["delta"] = c.eps_eth, c.delta
        rows.append(row)
    return rows
