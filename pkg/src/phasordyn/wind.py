"""Aggregated wind power plants as grid-following controlled power injections.

Each plant tracks its available-power profile with a first-order lag and
delivers P + j0 at its terminals (constant power factor, zero reactive
reference; reactive compensation at wind buses is carried by network
shunts). The grid interface is a current-regulated internal source behind
the aggregated machine transient reactance: the source angle rides a
per-plant PLL (type-2, so a frequency offset leaves no phase error and the
plant contributes no synchronous inertia), while the source magnitude and
load angle are re-targeted with a short lag so the delivered power settles
to the filtered reference. At steady state the injected current is exactly
conj(S/V). Under depressed voltage the deliverable power backs off along an
active-current-limit characteristic and the current magnitude is clamped.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class WindPlantParams:
    name: str
    bus: int
    mva: float
    i_limit: float = 1.1     # pu of rating
    tau: float = 0.05        # power tracking time constant, s
    tau_e: float = 0.05      # internal-source regulation lag, s
    x_eq: float = 0.20       # aggregated transient reactance, pu of rating
    v_pq: float = 0.95       # power-voltage backoff knee, pu
    v_ride_through: float = 0.1
    pll_kp: float = 60.0
    pll_ki: float = 1400.0


class WindFleet:
    """Vectorized wind plants.

    Continuous states per plant: filtered power reference (pu of rating),
    PLL angle and integrator, internal-source magnitude and load angle
    relative to the PLL frame.
    """

    NSTATES = 5

    def __init__(self, params):
        self.params = params
        self.n = len(params)
        self.names = [p.name for p in params]
        self.bus_idx = None
        self.mva = np.array([p.mva for p in params])
        self.i_limit = np.array([p.i_limit for p in params])
        self.tau = np.array([p.tau for p in params])
        self.tau_e = np.array([p.tau_e for p in params])
        self.v_pq = np.array([p.v_pq for p in params])
        self.v_rt = np.array([p.v_ride_through for p in params])
        self.kp = np.array([p.pll_kp for p in params])
        self.ki = np.array([p.pll_ki for p in params])
        # coupling impedance and admittance on the 100 MVA base
        self.zw = 1j * np.array([p.x_eq for p in params]) * 100.0 / self.mva \
            if self.n else np.zeros(0, dtype=complex)
        self.yw = 1.0 / self.zw if self.n else np.zeros(0, dtype=complex)
        self.in_service = np.ones(self.n, dtype=bool)
        self.p_avail = np.zeros(self.n)
        # states
        self.state = np.zeros(self.n)          # filtered power, pu of rating
        self.theta = np.zeros(self.n)          # PLL angle
        self.xi = np.zeros(self.n)             # PLL integrator, rad/s
        self.m = np.ones(self.n)               # source magnitude
        self.phi = np.zeros(self.n)            # source angle over PLL frame
        self.curtailed = np.zeros(self.n, dtype=bool)
        self._limit_active = np.zeros(self.n, dtype=bool)

    # ------------------------------------------------------------------

    def initialize(self, p_mw, v):
        p = np.asarray(p_mw, dtype=float) / self.mva
        self.p_avail = p.copy()
        self.state = p.copy()
        if self.n:
            vb = v[self.bus_idx]
            self.theta = np.angle(vb)
            self.xi = np.zeros(self.n)
            e_t = self._emf_target(self.state, vb)
            self.m = np.abs(e_t)
            self.phi = np.angle(e_t) - self.theta
        self.curtailed[:] = False
        self._limit_active[:] = False

    def _emf_target(self, pf, vb):
        """Internal voltage that delivers the filtered power at unity power
        factor into the present terminal voltage. Below the v_pq knee the
        deliverable power backs off quadratically (active-current limit
        characteristic of a weak-grid-connected plant)."""
        vmag = np.abs(vb)
        backoff = np.minimum(vmag / self.v_pq, 1.0) ** 2
        s_sys = pf * backoff * self.mva / 100.0
        i_ref = np.conj(np.where(vmag < 1e-6, 0.0, s_sys + 0j) /
                        np.where(vmag < 1e-6, 1.0, vb))
        return vb + self.zw * i_ref

    def set_available(self, p_mw):
        self.p_avail = np.asarray(p_mw, dtype=float) / self.mva

    def emf(self):
        return self.m * np.exp(1j * (self.theta + self.phi))

    # ------------------------------------------------------------------

    def state_vector(self):
        return np.concatenate([self.state, self.theta, self.xi, self.m,
                               self.phi])

    def set_state_vector(self, x):
        n = self.n
        self.state = np.clip(x[:n], 0.0, 1.0)
        self.theta = x[n:2 * n]
        self.xi = x[2 * n:3 * n]
        self.m = np.clip(x[3 * n:4 * n], 0.1, 1.5)
        self.phi = x[4 * n:]

    def derivatives_at(self, x, v):
        n = self.n
        pf, theta, xi, m, phi = (x[k * n:(k + 1) * n] for k in range(5))
        live = self.in_service
        dp = np.where(live, (self.p_avail - pf) / self.tau, 0.0)
        vq = np.abs(v) * np.sin(np.angle(v) - theta)
        dtheta = np.where(live, self.kp * vq + xi, 0.0)
        dxi = np.where(live, self.ki * vq, 0.0)
        e_t = self._emf_target(pf, v)
        dm = np.where(live, (np.abs(e_t) - m) / self.tau_e, 0.0)
        phi_t = np.angle(e_t * np.exp(-1j * theta))
        dphi_raw = np.angle(np.exp(1j * (phi_t - phi)))
        dphi = np.where(live, dphi_raw / self.tau_e, 0.0)
        return np.concatenate([dp, dtheta, dxi, dm, dphi])

    # ------------------------------------------------------------------

    def update_limit_state(self, v):
        """Re-evaluate the current limiter and ride-through flags once per
        integration step; the branch is frozen within the network solves to
        keep the Newton iteration off the limiter kink."""
        if not self.n:
            return
        vb = v[self.bus_idx]
        i = (np.where(self.in_service, self.emf(), vb) - vb) * self.yw
        i_max = self.i_limit * self.mva / 100.0
        self._limit_active = np.abs(i) > i_max
        ride = np.abs(vb) < self.v_rt
        self.curtailed = (self._limit_active | ride) & self.in_service

    def _limited_current(self, v):
        vb = v[self.bus_idx]
        emf = np.where(self.in_service, self.emf(), vb)
        i = (emf - vb) * self.yw
        if self._limit_active.any():
            i_max = self.i_limit * self.mva / 100.0
            imag = np.abs(i)
            scale = np.where(self._limit_active & (imag > 0),
                             i_max / np.where(imag == 0, 1.0, imag), 1.0)
            i = i * np.minimum(scale, 1.0)
        return i, vb

    def injections(self, v, out=None):
        """Norton currents for the augmented network (yw stamped at the
        plant buses); the current limit acts by internal-voltage backoff."""
        if out is None:
            out = np.zeros(len(v), dtype=complex)
        if not self.n:
            return out
        i, vb = self._limited_current(v)
        emf = vb + i * self.zw
        # the yw stamp is removed from the network matrix for tripped plants
        out[self.bus_idx] += np.where(self.in_service, emf * self.yw, 0.0)
        return out

    def terminal_power(self, v):
        """Delivered complex power at the plant buses, pu on 100 MVA."""
        i, vb = self._limited_current(v)
        return vb * np.conj(i) * self.in_service

    def power_mw(self, v):
        return self.terminal_power(v).real * 100.0

    def trip(self, name):
        i = self.names.index(name)
        if not self.in_service[i]:
            return False
        self.in_service[i] = False
        return True


def resample_profile(minute_series, sigma=0.005, seed=0):
    """Resample a 1-minute available-power series (pu of rating, in [0, 1])
    to 1 s resolution: linear interpolation plus seeded zero-mean
    perturbation of standard deviation sigma, clamped to [0, 1]."""
    minute_series = np.asarray(minute_series, dtype=float)
    if minute_series.size == 0:
        raise ValueError("minute series must be nonempty")
    if np.any((minute_series < 0) | (minute_series > 1)):
        raise ValueError("minute series must lie in [0, 1]")
    t_min = np.arange(minute_series.size) * 60.0
    t_sec = np.arange((minute_series.size - 1) * 60 + 1)
    base = np.interp(t_sec, t_min, minute_series)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        base = base + rng.normal(0.0, sigma, size=base.size)
    return np.clip(base, 0.0, 1.0)
