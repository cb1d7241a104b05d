"""VSC control laws for the battery converter: grid-following with
grid-supporting droop mode (PLL-synchronized current injection) and PLL-free
grid-forming (voltage source behind the transformer impedance).

Controller-internal quantities are per-unit on the converter rating; the
network exchange is converted to the 100 MVA system base at the interface.
Angles are tracked in the synchronous reference frame (deviations only).
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .machines import OMEGA_BASE


def deadband_release(x, band):
    """Offset-style deadband: zero inside the band, |x| - band beyond it."""
    return np.sign(x) * np.maximum(np.abs(x) - band, 0.0)


def following_droop(df, dv, k_pf=20.0, k_qv=10.0, db_f=0.001, db_v=0.005,
                    limit=1.0):
    """Grid-supporting droop commands from frequency/voltage deviations.

    dP = -k_pf * release(df), dQ = -k_qv * release(dv), both clamped to the
    converter rating (pu).
    """
    dp = np.clip(-k_pf * deadband_release(df, db_f), -limit, limit)
    dq = np.clip(-k_qv * deadband_release(dv, db_v), -limit, limit)
    return dp, dq


def forming_reactive_power(vg, vm, delta, rc, xc):
    """Reactive power injected at the PCC by a voltage source vm at angle
    difference delta = theta_g - theta_m behind the impedance rc + j xc:

        Q = vg / (rc^2 + xc^2) * [rc vm sin(delta) + xc (vm cos(delta) - vg)]

    This equals Im(vg * conj((vm e^{-j delta} - vg) / (rc + j xc))), i.e. the
    converter-to-grid injection convention (positive when the converter is
    overexcited).
    """
    zsq = rc * rc + xc * xc
    if zsq == 0:
        raise ValueError("coupling impedance must be nonzero")
    return vg / zsq * (rc * vm * np.sin(delta) + xc * (vm * np.cos(delta) - vg))


class Pll:
    """Synchronous-frame PLL with a one-cycle mean filter on the q-axis
    voltage. Continuous states: tracked angle (deviation frame), PI
    integrator (rad/s), filtered angular-velocity deviation (rad/s)."""

    NSTATES = 3

    MAXBUF = 40

    def __init__(self, kp=60.0, ki=1400.0, f_filter_tau=0.02, cycle_filter=True,
                 nominal_hz=60.0):
        self.kp = kp
        self.ki = ki
        self.tau = f_filter_tau
        self.cycle_filter = cycle_filter
        self.nominal_hz = nominal_hz
        self.theta = 0.0
        self.xi = 0.0
        self.xw = 0.0
        self._vq_buf = np.zeros(self.MAXBUF)
        self._pos = 0
        self.vq_filtered = 0.0

    def initialize(self, v):
        self.theta = float(np.angle(v))
        self.xi = 0.0
        self.xw = 0.0
        self._vq_buf[:] = 0.0
        self._pos = 0
        self.vq_filtered = 0.0

    def state_vector(self):
        return np.array([self.theta, self.xi, self.xw])

    def set_state_vector(self, x):
        self.theta, self.xi, self.xw = x

    def vq(self, v, theta=None):
        th = self.theta if theta is None else theta
        return float(np.abs(v) * np.sin(np.angle(v) - th))

    def derivatives_at(self, x, v):
        theta, xi, xw = x
        vq = self.vq_filtered if self.cycle_filter else self.vq(v, theta)
        w_dev = self.kp * vq + xi
        return np.array([w_dev, self.ki * vq, (w_dev - xw) / self.tau])

    def post_step(self, v, dt):
        """Discrete one-cycle mean on the q-axis voltage; the window length
        follows the previous frequency estimate."""
        vq = self.vq(v)
        self._vq_buf[self._pos % self.MAXBUF] = vq
        self._pos += 1
        if self.cycle_filter:
            f_hz = max(self.frequency_estimate() * self.nominal_hz, 20.0)
            n = int(min(max(round(1.0 / (f_hz * dt)), 1),
                        min(self._pos, self.MAXBUF)))
            idx = (self._pos - 1 - np.arange(n)) % self.MAXBUF
            self.vq_filtered = float(self._vq_buf[idx].mean())
        else:
            self.vq_filtered = vq

    def frequency_estimate(self):
        return 1.0 + self.xw / OMEGA_BASE

    @property
    def angle(self):
        return self.theta


@dataclass
class FollowingParams:
    k_pf: float = 20.0
    db_f: float = 0.001
    k_qv: float = 10.0
    db_v: float = 0.005
    i_max: float = 1.0       # pu of rating, P-priority
    tau_i: float = 0.005     # averaged current-loop time constant
    tau_v: float = 0.02      # voltage measurement filter


class GridFollowingControl:
    """PLL-synchronized current injection with f-P / V-Q droop support.

    Continuous states: PLL (3), filtered |V| (1), dq currents (2).
    """

    def __init__(self, rating_mva, params=None, pll=None):
        self.rating = rating_mva
        self.p = params or FollowingParams()
        self.pll = pll or Pll()
        self.pref = 0.0
        self.qref = 0.0
        self.fref = 1.0
        self.vref = 1.0
        self.xv = 1.0
        self.id = 0.0
        self.iq = 0.0
        self.undervoltage = False

    def initialize(self, v, pref=0.0, qref=0.0):
        self.pll.initialize(v)
        self.pref = pref
        self.qref = qref
        self.vref = float(np.abs(v))
        self.xv = float(np.abs(v))
        vd = float(np.abs(v))
        self.id = pref / vd
        self.iq = -qref / vd
        self.undervoltage = False

    def state_vector(self):
        return np.concatenate([self.pll.state_vector(),
                               [self.xv, self.id, self.iq]])

    def set_state_vector(self, x):
        self.pll.set_state_vector(x[:3])
        self.xv, self.id, self.iq = x[3:]

    def current_references(self, f_est, v_meas):
        dp, dq = following_droop(f_est - self.fref, v_meas - self.vref,
                                 self.p.k_pf, self.p.k_qv,
                                 self.p.db_f, self.p.db_v)
        p_cmd = np.clip(self.pref + dp, -1.0, 1.0)
        q_cmd = np.clip(self.qref + dq, -1.0, 1.0)
        vd = max(v_meas, 0.2)
        id_ref = p_cmd / vd
        iq_ref = -q_cmd / vd
        # P-priority inside the current limit circle
        imax = self.p.i_max
        id_ref = np.clip(id_ref, -imax, imax)
        iq_room = np.sqrt(max(imax ** 2 - id_ref ** 2, 0.0))
        iq_ref = np.clip(iq_ref, -iq_room, iq_room)
        return id_ref, iq_ref

    def derivatives_at(self, x, v):
        pll_x = x[:3]
        xv, idc, iqc = x[3:]
        dpll = self.pll.derivatives_at(pll_x, v)
        dxv = (float(np.abs(v)) - xv) / self.p.tau_v
        f_est = 1.0 + pll_x[2] / OMEGA_BASE
        id_ref, iq_ref = self.current_references(f_est, xv)
        did = (id_ref - idc) / self.p.tau_i
        diq = (iq_ref - iqc) / self.p.tau_i
        return np.concatenate([dpll, [dxv, did, diq]])

    def post_step(self, v, dt):
        self.pll.post_step(v, dt)
        self.undervoltage = bool(np.abs(v) < 0.1)

    def injection(self, v):
        """Complex current injection on the 100 MVA base."""
        i_conv = (self.id + 1j * self.iq) * np.exp(1j * self.pll.theta)
        return i_conv * self.rating / 100.0

    def measured_power(self, v):
        s = v * np.conj(self.injection(v)) * 100.0 / self.rating
        return float(s.real), float(s.imag)


@dataclass
class FormingParams:
    m_p: float = 0.05
    w_lp: float = 31.4
    t1: float = 0.0333
    t2: float = 0.0111
    db_f: float = 0.001      # frequency deadband matching the following droop
    kv: float = 5.0          # magnitude regulator integral gain
    i_max: float = 1.2
    rc: float = 0.005        # transformer impedance, pu on converter rating
    xc: float = 0.15


class GridFormingControl:
    """PLL-free grid-forming control: droop between active-power error and
    the modulated angle, lead-lag + low-pass on the power measurement, and a
    slow magnitude regulator holding the PCC voltage.

    Continuous states: x_ll (lead-lag), x_lp (filtered power), theta_m
    (modulated angle, deviation frame), v_m (magnitude).
    """

    def __init__(self, rating_mva, params=None):
        self.rating = rating_mva
        self.p = params or FormingParams()
        zc = complex(self.p.rc, self.p.xc) * 100.0 / rating_mva
        self.zc_sys = zc                # on 100 MVA base
        self.yc_sys = 1.0 / zc
        self.pref = 0.0
        self.vg_ref = 1.0
        self.x_ll = 0.0
        self.x_lp = 0.0
        self.theta_m = 0.0
        self.v_m = 1.0
        self.current_limited = False

    def initialize(self, v, pref=0.0):
        self.pref = pref
        self.vg_ref = float(np.abs(v))
        self.theta_m = float(np.angle(v))
        self.v_m = float(np.abs(v))
        self.x_ll = pref
        self.x_lp = pref
        self.current_limited = False

    def state_vector(self):
        return np.array([self.x_ll, self.x_lp, self.theta_m, self.v_m])

    def set_state_vector(self, x):
        self.x_ll, self.x_lp, self.theta_m, self.v_m = x
        self.v_m = float(np.clip(self.v_m, 0.2, 1.4))

    def droop_speed_deviation(self, p_filtered):
        """Raw droop law output (pu speed deviation)."""
        return self.p.m_p * (self.pref - p_filtered)

    def _sync_offset(self, w_raw):
        """Deadband offset in the synchronization path: beyond the band the
        realized steady-state droop matches the offset-deadband law of the
        grid-following controller exactly."""
        db = self.p.db_f
        if db <= 0:
            return w_raw
        eps = db / 10.0
        return w_raw + db * np.clip(w_raw / eps, -1.0, 1.0)

    def internal_voltage(self, theta=None, vmag=None):
        th = self.theta_m if theta is None else theta
        vm = self.v_m if vmag is None else vmag
        return vm * np.exp(1j * th)

    def branch_current(self, v, e=None):
        """Converter current into the PCC on the 100 MVA base."""
        e = self.internal_voltage() if e is None else e
        return (e - v) * self.yc_sys

    def measured_power(self, v, x=None):
        if x is None:
            e = self.internal_voltage()
        else:
            e = self.internal_voltage(theta=x[2], vmag=x[3])
        s = v * np.conj((e - v) * self.yc_sys) * 100.0 / self.rating
        return float(s.real), float(s.imag)

    def derivatives_at(self, x, v):
        x_ll, x_lp, theta_m, v_m = x
        p_meas, _ = self.measured_power(v, x)
        y_ll = (self.p.t1 / self.p.t2) * p_meas + (1.0 - self.p.t1 / self.p.t2) * x_ll
        dx_ll = (p_meas - x_ll) / self.p.t2
        dx_lp = self.p.w_lp * (y_ll - x_lp)
        w_eff = self._sync_offset(self.droop_speed_deviation(x_lp))
        dtheta = OMEGA_BASE * w_eff
        dv_m = self.p.kv * (self.vg_ref - float(np.abs(v)))
        return np.array([dx_ll, dx_lp, dtheta, dv_m])

    def post_step(self, v, dt):
        pass

    def injection(self, v):
        """Norton injection for the augmented network (Yc stamped at the
        PCC); applies the hard current limit by backing off the internal
        voltage for the step when it would be exceeded."""
        e = self.internal_voltage()
        i = self.branch_current(v, e)
        i_max = self.p.i_max * self.rating / 100.0
        if np.abs(i) > i_max:
            i = i * (i_max / np.abs(i))
            e = v + i * self.zc_sys
            self.current_limited = True
        else:
            self.current_limited = False
        return e * self.yc_sys
