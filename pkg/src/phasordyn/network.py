"""Network model: admittance matrix, Newton power flow, algebraic network solve.

All quantities are per-unit on a common 100 MVA base. Bus voltages are
complex phasors (magnitude pu, angle rad). Devices attach to the network as
Norton current injections; constant-power behaviour is handled by an inner
fixed-point loop around the factorized admittance matrix.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve


class NetworkStructureError(ValueError):
    """Branch/bus tables are inconsistent (unknown bus, duplicate id, ...)."""


class PowerFlowError(RuntimeError):
    """Newton power flow failed to converge."""

    def __init__(self, msg, mismatch=None):
        super().__init__(msg)
        self.mismatch = mismatch


class NetworkSolveError(RuntimeError):
    """Algebraic network solve failed (singular matrix or divergence)."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str           # 'slack' | 'pv' | 'pq'
    vset: float = 1.0   # pu, meaningful for pv/slack
    base_kv: float = 345.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0      # total line charging susceptance, pu
    tap: float = 1.0    # off-nominal turns ratio on the from side (1.0 = none)


@dataclass
class PowerFlowSolution:
    v: np.ndarray           # complex bus voltages
    p_injection: np.ndarray  # realized net active injection, pu
    q_injection: np.ndarray  # realized net reactive injection, pu
    iterations: int
    max_mismatch: float

    @property
    def vmag(self):
        return np.abs(self.v)

    @property
    def vang(self):
        return np.angle(self.v)


def _index_buses(buses):
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise NetworkStructureError("duplicate bus ids")
    slack = [b.id for b in buses if b.kind == "slack"]
    if len(slack) != 1:
        raise NetworkStructureError(f"exactly one slack bus required, found {len(slack)}")
    return {bid: i for i, bid in enumerate(ids)}


def build_admittance(buses, branches):
    """Assemble the complex bus admittance matrix.

    Off-nominal taps are applied on the from side: a branch with series
    admittance y and ratio a stamps y/a^2 on the from diagonal, y on the to
    diagonal and -y/a on both off-diagonals. Half the line charging goes on
    each terminal (inside the tap on the from side).
    """
    idx = _index_buses(buses)
    n = len(buses)
    y = np.zeros((n, n), dtype=complex)
    for br in branches:
        if br.from_bus not in idx or br.to_bus not in idx:
            raise NetworkStructureError(
                f"branch {br.from_bus}-{br.to_bus} references unknown bus")
        if br.from_bus == br.to_bus:
            raise NetworkStructureError(f"branch loops on bus {br.from_bus}")
        z = complex(br.r, br.x)
        if z == 0:
            raise NetworkStructureError(
                f"branch {br.from_bus}-{br.to_bus} has zero series impedance")
        ys = 1.0 / z
        bsh = 0.5j * br.b
        a = br.tap if br.tap not in (0.0, None) else 1.0
        i, j = idx[br.from_bus], idx[br.to_bus]
        y[i, i] += (ys + bsh) / (a * a)
        y[j, j] += ys + bsh
        y[i, j] += -ys / a
        y[j, i] += -ys / a
    return y


def add_shunts(y, buses, shunts):
    """Return a copy of y with bus shunt admittances (jb, pu) added."""
    idx = _index_buses(buses)
    y = y.copy()
    for bus_id, b_pu in shunts.items():
        y[idx[bus_id], idx[bus_id]] += 1j * b_pu
    return y


def power_mismatch(y, v_mag, v_ang, p_target, q_target, pv, pq):
    """Active/reactive mismatch vector for the Newton power flow.

    Ordering: [dP(pv+pq); dQ(pq)], target minus computed.
    """
    v = v_mag * np.exp(1j * v_ang)
    s = v * np.conj(y @ v)
    dp = p_target - s.real
    dq = q_target - s.imag
    return np.concatenate([dp[pv], dp[pq], dq[pq]])


def power_flow_jacobian(y, v_mag, v_ang, pv, pq):
    """Analytic Jacobian of the mismatch vector wrt [ang(pv+pq); |V|(pq)].

    Mismatch is target - computed, so entries are minus the partial
    derivatives of the computed injections (matches finite differences of
    power_mismatch directly).
    """
    v = v_mag * np.exp(1j * v_ang)
    ibus = y @ v
    e = v / v_mag
    ds_dang = 1j * np.diag(v) @ (np.diag(np.conj(ibus)) - np.conj(y) @ np.diag(np.conj(v)))
    ds_dvm = np.diag(e) @ np.diag(np.conj(ibus)) + np.diag(v) @ np.conj(y) @ np.diag(np.conj(e))
    ang_vars = np.concatenate([pv, pq]).astype(int)
    p_rows = ang_vars
    j11 = -ds_dang[np.ix_(p_rows, ang_vars)].real
    j12 = -ds_dvm[np.ix_(p_rows, pq)].real
    j21 = -ds_dang[np.ix_(pq, ang_vars)].imag
    j22 = -ds_dvm[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def solve_power_flow(buses, y, p_target, q_target, tol=1e-8, max_iter=50):
    """Newton-Raphson power flow from a flat start.

    p_target/q_target are per-bus net injection targets in pu; q_target is
    only honored at pq buses, |V| setpoints at pv and slack buses. Raises
    PowerFlowError carrying the last mismatch norm on divergence.
    """
    idx = _index_buses(buses)
    n = len(buses)
    kinds = np.array([b.kind for b in buses])
    slack = int(np.where(kinds == "slack")[0][0])
    pv = np.where(kinds == "pv")[0]
    pq = np.where(kinds == "pq")[0]

    v_mag = np.ones(n)
    for b in buses:
        if b.kind in ("pv", "slack"):
            v_mag[idx[b.id]] = b.vset
    v_ang = np.zeros(n)

    mism = power_mismatch(y, v_mag, v_ang, p_target, q_target, pv, pq)
    it = 0
    while np.max(np.abs(mism)) > tol:
        if it >= max_iter:
            raise PowerFlowError(
                f"power flow diverged after {max_iter} iterations "
                f"(max mismatch {np.max(np.abs(mism)):.3e} pu)",
                mismatch=float(np.max(np.abs(mism))))
        jac = power_flow_jacobian(y, v_mag, v_ang, pv, pq)
        try:
            step = -np.linalg.solve(jac, mism)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {it}: {exc}")
        n_ang = len(pv) + len(pq)
        v_ang[np.concatenate([pv, pq]).astype(int)] += step[:n_ang]
        v_mag[pq] += step[n_ang:]
        mism = power_mismatch(y, v_mag, v_ang, p_target, q_target, pv, pq)
        it += 1

    v = v_mag * np.exp(1j * v_ang)
    s = v * np.conj(y @ v)
    return PowerFlowSolution(v=v, p_injection=s.real, q_injection=s.imag,
                             iterations=it, max_mismatch=float(np.max(np.abs(mism))))


def constant_power_blocks(p, q, v):
    """2x2 Jacobian blocks (dIr/de, dIr/df, dIi/de, dIi/df) of the current
    injected by a constant-power device, I = conj(S)/conj(V)."""
    e, f = v.real, v.imag
    d = e * e + f * f
    a = p * e + q * f       # Ir * d
    b = p * f - q * e       # Ii * d
    d2 = d * d
    return ((p * d - 2 * e * a) / d2,
            (q * d - 2 * f * a) / d2,
            (-q * d - 2 * e * b) / d2,
            (p * d - 2 * f * b) / d2)


class AlgebraicSolver:
    """Network solve Y V = I(V) with voltage-dependent injections.

    Iterates a chord-Newton scheme in stacked real coordinates: the network
    matrix (with device shunt stamps) plus the constant-power device blocks
    are factorized once per linearization point and reused every step; the
    matrix is refreshed on topology events or when an iteration struggles.
    For linear injections this reduces to a single direct solve.
    """

    def __init__(self, y, tol=1e-8, max_iter=50):
        self.tol = tol
        self.max_iter = max_iter
        self._jac_blocks = None
        self._v_lin = None
        self.set_matrix(y)

    def set_matrix(self, y):
        self.y = y
        n = y.shape[0]
        g, b = y.real, y.imag
        self._a_net = np.block([[g, -b], [b, g]])
        if not np.all(np.isfinite(self._a_net)):
            raise NetworkSolveError("admittance matrix has nonfinite entries")
        self._v_lin = None  # force re-linearization

    def linearize(self, v, jac_fn):
        """Factorize the chord matrix at voltage v."""
        a = self._a_net.copy()
        n = self.y.shape[0]
        if jac_fn is not None:
            dre, drf, die, dif = jac_fn(v)
            idx = np.arange(n)
            a[idx, idx] -= dre
            a[idx, idx + n] -= drf
            a[idx + n, idx] -= die
            a[idx + n, idx + n] -= dif
        try:
            self._lu = lu_factor(a)
        except Exception as exc:
            raise NetworkSolveError(f"network matrix not factorizable: {exc}")
        if not np.all(np.isfinite(self._lu[0])) or \
                np.min(np.abs(np.diag(self._lu[0]))) < 1e-12:
            raise NetworkSolveError("network matrix is singular "
                                    "(islanded bus with no path to slack?)")
        self._v_lin = v.copy()
        self._jac_fn = jac_fn

    def solve(self, injection_fn, v0=None, jac_fn=None):
        """Drive Y V - I(V) to zero; returns (v, iterations).

        jac_fn(v) may supply the per-bus 2x2 injection Jacobian blocks of
        the voltage-dependent devices; without it the chord matrix is the
        bare network.
        """
        n = self.y.shape[0]
        v = np.ones(n, dtype=complex) if v0 is None else v0.astype(complex).copy()
        if self._v_lin is None:
            self.linearize(v, jac_fn)
        for it in range(self.max_iter):
            resid = self.y @ v - injection_fn(v)
            rhs = np.concatenate([resid.real, resid.imag])
            dx = lu_solve(self._lu, rhs)
            dv = dx[:n] + 1j * dx[n:]
            v -= dv
            err = np.max(np.abs(dv))
            if err < self.tol:
                return v, it + 1
            if it in (6, 18, 34):
                # struggling: refresh the linearization at the iterate
                self.linearize(v, jac_fn)
        raise NetworkSolveError(
            f"network solve did not converge (last dV={err:.3e} pu)")
