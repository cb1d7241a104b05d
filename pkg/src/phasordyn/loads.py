"""Voltage- and frequency-dependent dynamic loads (EPRI LOADSYN form) with
buffered frequency and windowed RMS voltage measurements.

P(t) = P0(t) (V/V0)^Kpv [1 + Kpf (f - f0)]
Q(t) = Q0(t) (V/V0)^Kqv [1 + Kqf (f - f0)]

V and f are the *measured* quantities: a 240-sample mean buffer advancing
20 samples per report for frequency (1 ms raw updates, report every 20 ms),
and a 240 ms RMS window reported every 20 ms for voltage. Between reports
the last reported value holds, so each load behaves as constant power at
the sampled (P, Q) during the network solve.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class LoadParams:
    kpv: float = 1.0
    kpf: float = 1.0
    kqv: float = 2.0
    kqf: float = -1.0
    v0: float = 1.0
    f0: float = 1.0

    def __post_init__(self):
        if self.v0 <= 0:
            raise ValueError("V0 must be positive")


def load_power(p0, q0, v, f, params):
    """Evaluate the LOADSYN equations at measured voltage v and frequency f."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("voltage must be positive (collapse guard is applied "
                         "upstream on the instantaneous solve)")
    ratio = v / params.v0
    p = p0 * ratio ** params.kpv * (1.0 + params.kpf * (f - params.f0))
    q = q0 * ratio ** params.kqv * (1.0 + params.kqf * (f - params.f0))
    return p, q


class BufferedMeasurement:
    """Sliding-buffer measurement shared by the frequency (mean) and voltage
    (RMS) operators: n_buffer samples on the 1 ms grid, a new report every
    n_buffer - n_overlap samples, last report held in between."""

    def __init__(self, n_channels, initial, n_buffer=240, n_overlap=220, rms=False):
        if not 0 <= n_overlap < n_buffer:
            raise ValueError("overlap must be smaller than the buffer")
        self.n_buffer = n_buffer
        self.n_report = n_buffer - n_overlap
        self.rms = rms
        init = np.broadcast_to(np.asarray(initial, dtype=float), (n_channels,))
        self.buffer = np.tile(init[:, None], (1, n_buffer)).astype(float)
        self.pos = 0
        self.countdown = self.n_report
        self.reported = init.copy().astype(float)
        self.just_reported = False

    def step(self, raw):
        """Push one raw sample per channel; refresh the report on the
        n_report cadence. Returns the currently reported values."""
        self.buffer[:, self.pos] = raw
        self.pos = (self.pos + 1) % self.n_buffer
        self.countdown -= 1
        self.just_reported = self.countdown == 0
        if self.just_reported:
            self.countdown = self.n_report
            if self.rms:
                self.reported = np.sqrt(np.mean(self.buffer ** 2, axis=1))
            else:
                self.reported = np.mean(self.buffer, axis=1)
        return self.reported


def frequency_measurement_step(meas, raw):
    """Advance the buffered frequency measurement by one 1 ms sample."""
    return meas.step(raw)


def rms_measurement_step(meas, raw):
    """Advance the windowed RMS voltage measurement by one 1 ms sample."""
    return meas.step(raw)


class LoadBank:
    """All dynamic loads of a scenario, vectorized per bus.

    Attaches to the network as current injections computed from the sampled
    (P, Q). Below v_guard the exponent model continues as constant impedance
    to avoid numerical blow-up.
    """

    def __init__(self, bus_idx, p0_mw, q0_mvar, params=None, v_guard=0.3,
                 f_filter_tau=0.01, base_mva=100.0):
        self.bus_idx = np.asarray(bus_idx, dtype=int)
        self.n = len(self.bus_idx)
        self.base_mva = base_mva
        self.params = params or LoadParams()
        self.v_guard = v_guard
        self.p0 = np.asarray(p0_mw, dtype=float) / base_mva
        self.q0 = np.asarray(q0_mvar, dtype=float) / base_mva
        self.p_sched = self.p0.copy()   # profile-driven rated demand
        self.q_sched = self.q0.copy()
        self.f_filter_tau = f_filter_tau
        self.in_service = np.ones(self.n, dtype=bool)
        # filled by initialize()
        self.v0 = np.ones(self.n)
        self.fmeas = None
        self.vmeas = None
        self._prev_angle = np.zeros(self.n)
        self._f_raw = np.ones(self.n)
        self.p = self.p0.copy()
        self.q = self.q0.copy()
        self._sched_dirty = False

    def initialize(self, v):
        vb = v[self.bus_idx]
        # per-bus rated voltage = power-flow voltage, so the equilibrium is
        # the identity point of the model
        self.v0 = np.abs(vb)
        self.fmeas = BufferedMeasurement(self.n, 1.0)
        self.vmeas = BufferedMeasurement(self.n, np.abs(vb), rms=True)
        self._prev_angle = np.angle(vb)
        self._f_raw = np.ones(self.n)
        self.p = self.p_sched.copy()
        self.q = self.q_sched.copy()

    def set_schedule(self, p_mw, q_mvar):
        self.p_sched = np.asarray(p_mw, dtype=float) / self.base_mva
        self.q_sched = np.asarray(q_mvar, dtype=float) / self.base_mva
        self._sched_dirty = True

    def post_step(self, v, dt):
        """Discrete measurement update on the 1 ms grid, then refresh the
        sampled load powers from the LOADSYN law."""
        vb = v[self.bus_idx]
        ang = np.angle(vb)
        dtheta = np.angle(np.exp(1j * (ang - self._prev_angle)))
        self._prev_angle = ang
        from .machines import OMEGA_BASE
        f_inst = 1.0 + dtheta / (dt * OMEGA_BASE)
        f_inst = np.clip(f_inst, 0.8, 1.2)
        alpha = dt / (self.f_filter_tau + dt)
        self._f_raw += alpha * (f_inst - self._f_raw)
        f_rep = self.fmeas.step(self._f_raw)
        v_rep = self.vmeas.step(np.abs(vb))
        if not (self.fmeas.just_reported or self.vmeas.just_reported
                or self._sched_dirty):
            return
        self._sched_dirty = False
        ratio = np.maximum(v_rep, 1e-6) / self.v0
        self.p = self.p_sched * ratio ** self.params.kpv \
            * (1.0 + self.params.kpf * (f_rep - self.params.f0))
        self.q = self.q_sched * ratio ** self.params.kqv \
            * (1.0 + self.params.kqf * (f_rep - self.params.f0))

    def injections(self, v, out=None):
        """Norton currents drawn from the network at the current iterate.

        The sampled (p, q) set the drawn power at each measurement refresh;
        between refreshes the load behaves as a constant-magnitude current
        at the sampled power factor (the current-source realization of the
        measurement-driven load). Below v_guard the demand scales with
        |V|^2 (constant impedance continuation).
        """
        vb = v[self.bus_idx]
        vmag = np.abs(vb)
        s = (self.p + 1j * self.q) * self.in_service
        vr = np.maximum(self.vmeas.reported if self.vmeas is not None
                        else self.v0, 1e-6)
        scale = vmag / vr
        low = vmag < self.v_guard
        if low.any():
            scale = np.where(low, (vmag / self.v_guard) ** 2
                             * (self.v_guard / vr), scale)
        i = np.conj(s * scale / np.where(vmag < 1e-6, 1e-6, vb))
        if out is None:
            out = np.zeros(len(v), dtype=complex)
        out[self.bus_idx] -= i
        return out

    def add_jacobian(self, v, dre, drf, die, dif):
        """Accumulate the injection Jacobian blocks of the loads: constant
        current at the sampled power factor, I = c V/|V| with
        c = conj(S)/V_reported (linear in V below the collapse guard)."""
        vb = v[self.bus_idx]
        e, f = vb.real, vb.imag
        r2 = e * e + f * f
        r3 = np.maximum(r2 * np.sqrt(r2), 1e-12)
        vr = np.maximum(self.vmeas.reported if self.vmeas is not None
                        else self.v0, 1e-6)
        s = -(self.p + 1j * self.q) * self.in_service
        c = np.conj(s) / vr
        cr, ci = c.real, c.imag
        # d(V/|V|)/d(e,f) composed with multiplication by c
        a11 = f * f / r3
        a12 = -e * f / r3
        a22 = e * e / r3
        j1 = cr * a11 - ci * a12
        j2 = cr * a12 - ci * a22
        j3 = ci * a11 + cr * a12
        j4 = ci * a12 + cr * a22
        low = np.sqrt(r2) < self.v_guard
        if low.any():
            vg2 = self.v_guard * vr
            p, q = s.real, s.imag
            j1 = np.where(low, p / vg2, j1)
            j2 = np.where(low, q / vg2, j2)
            j3 = np.where(low, -q / vg2, j3)
            j4 = np.where(low, p / vg2, j4)
        dre[self.bus_idx] += j1
        drf[self.bus_idx] += j2
        die[self.bus_idx] += j3
        dif[self.bus_idx] += j4

    def total_demand(self):
        return self.p.sum(), self.q.sum()

    def trip(self, bus_id_pos):
        if not self.in_service[bus_id_pos]:
            return False
        self.in_service[bus_id_pos] = False
        return True


def synthetic_profile(p0_mw, q0_mvar, duration_s, seed, amplitude=0.01,
                      dt_ms=20):
    """Band-limited random-walk demand profile at 20 ms resolution.

    Returns (t_ms, p_mw, q_mvar) arrays; the walk is reflected at
    +/- amplitude of the rated value and low-pass smoothed.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * 1000.0 / dt_ms)) + 1
    steps = rng.normal(0.0, amplitude / 20.0, size=n)
    walk = np.cumsum(steps)
    # reflect into the band
    walk = amplitude - np.abs(np.mod(walk + amplitude, 4 * amplitude) - 2 * amplitude)
    # light smoothing to band-limit the steps
    out = np.empty_like(walk)
    acc = walk[0]
    for i, w in enumerate(walk):
        acc += 0.2 * (w - acc)
        out[i] = acc
    t_ms = np.arange(n) * dt_ms
    return t_ms, p0_mw * (1.0 + out), q0_mvar * (1.0 + out)
