"""Synchronous machine fleet: sixth-order electrical model, DC1A excitation,
hydro/steam turbine-governors with droop, and secondary frequency control.

All machine electrical quantities are per-unit on the 100 MVA system base
(the shipped dataset is already referred to that base). Governors work in
per-unit of the machine MVA rating; mechanical power is converted at the
interface. The electrical model is the two-axis model with subtransient
circuits (Sauer-Pai formulation): states delta, dw, Eq', Ed', psi_d'', psi_q''.
"""

from dataclasses import dataclass

import numpy as np

OMEGA_BASE = 2.0 * np.pi * 60.0


class MachineInitError(RuntimeError):
    """Equilibrium back-solve left a nonzero state derivative."""


@dataclass
class MachineParams:
    name: str
    bus: int
    mva: float          # machine rating, used as governor/droop base
    h: float            # inertia constant on 100 MVA base, s
    d: float            # damping torque coefficient, pu/pu speed
    ra: float
    xl: float
    xd: float
    xdp: float
    xdpp: float
    xq: float
    xqp: float
    xqpp: float
    td0p: float
    td0pp: float
    tq0p: float
    tq0pp: float
    governor: str       # 'hydro' | 'steam'
    rp: float = 0.05    # droop on machine base
    pmax: float = 1.0   # pu of rating
    ramp: float = 0.1   # gate/valve rate limit, pu of rating per s
    secondary: bool = False

    def __post_init__(self):
        if not (self.xd >= self.xdp >= self.xdpp > 0):
            raise ValueError(f"{self.name}: need Xd >= Xd' >= Xd'' > 0")
        if not (self.xq >= self.xqp >= self.xqpp > 0):
            raise ValueError(f"{self.name}: need Xq >= Xq' >= Xq'' > 0")
        for tc in (self.td0p, self.td0pp, self.tq0p, self.tq0pp):
            if tc <= 0:
                raise ValueError(f"{self.name}: time constants must be positive")


@dataclass
class ExciterParams:
    """IEEE DC1A: transducer, regulator, exciter, washout feedback."""
    name: str = ""
    tr: float = 0.02
    ka: float = 40.0
    ta: float = 0.05
    ke: float = 1.0
    te: float = 0.8
    kf: float = 0.06
    tf: float = 1.0
    vrmax: float = 8.0
    vrmin: float = -8.0
    asat: float = 0.0    # SE(E) = asat * exp(bsat * E)
    bsat: float = 0.0
    efdmin: float = 0.0
    efdmax: float = 12.0


def hydro_governor_tuning(h):
    """Mechanical-inertia-matched tuning for the hydro governor.

    TM = 2H, TM:Tw = 3:1, 1/KP = 0.625 Tw / H, KP/KI = 3.33 Tw.
    h is the inertia constant on the machine base, in seconds.
    """
    if np.any(np.asarray(h) <= 0):
        raise ValueError("inertia constant must be positive")
    tm = 2.0 * np.asarray(h, dtype=float)
    tw = tm / 3.0
    kp = np.asarray(h) / (0.625 * tw)
    ki = kp / (3.33 * tw)
    return tm, tw, kp, ki


def saturation(efd, asat, bsat):
    if np.all(asat == 0):
        return 0.0
    return asat * np.exp(bsat * np.abs(efd))


class Dc1aExciterBank:
    """Vectorized DC1A exciters. States: vc, vr, efd, xf (washout)."""

    NSTATES = 4

    def __init__(self, params):
        self.p = params
        n = len(params)
        self.tr = np.array([p.tr for p in params])
        self.ka = np.array([p.ka for p in params])
        self.ta = np.array([p.ta for p in params])
        self.ke = np.array([p.ke for p in params])
        self.te = np.array([p.te for p in params])
        self.kf = np.array([p.kf for p in params])
        self.tf = np.array([p.tf for p in params])
        self.vrmax = np.array([p.vrmax for p in params])
        self.vrmin = np.array([p.vrmin for p in params])
        self.asat = np.array([p.asat for p in params])
        self.bsat = np.array([p.bsat for p in params])
        self.efdmin = np.array([p.efdmin for p in params])
        self.efdmax = np.array([p.efdmax for p in params])
        self.vref = np.zeros(n)
        self.state = np.zeros((self.NSTATES, n))

    def initialize(self, vt, efd0):
        se = saturation(efd0, self.asat, self.bsat)
        vr0 = (self.ke + se) * efd0
        if np.any(vr0 > self.vrmax) or np.any(vr0 < self.vrmin):
            raise MachineInitError("exciter regulator limit violated at equilibrium")
        self.state[0] = vt
        self.state[1] = vr0
        self.state[2] = efd0
        self.state[3] = (self.kf / self.tf) * efd0
        self.vref = vt + vr0 / self.ka

    def derivatives(self, state, vt, out=None):
        vc, vr, efd, xf = state
        if out is None:
            out = np.empty_like(state)
        out[0] = (vt - vc) / self.tr
        vfb = (self.kf / self.tf) * efd - xf
        verr = self.vref - vc - vfb
        dvr = (self.ka * verr - vr) / self.ta
        # non-windup regulator limit
        dvr[(vr >= self.vrmax) & (dvr > 0)] = 0.0
        dvr[(vr <= self.vrmin) & (dvr < 0)] = 0.0
        out[1] = dvr
        se = saturation(efd, self.asat, self.bsat)
        defd = (vr - (self.ke + se) * efd) / self.te
        defd[(efd >= self.efdmax) & (defd > 0)] = 0.0
        defd[(efd <= self.efdmin) & (defd < 0)] = 0.0
        out[2] = defd
        out[3] = ((self.kf / self.tf) * efd - xf) / self.tf
        return out

    def clamp(self, state):
        state[1] = np.clip(state[1], self.vrmin, self.vrmax)
        state[2] = np.clip(state[2], self.efdmin, self.efdmax)
        return state

    @property
    def efd(self):
        return self.state[2]


class HydroGovernorBank:
    """PI governor with gate droop and linearized water column.

    Water column (1 - Tw s)/(1 + 0.5 Tw s) is realized as
    pm = 3 xw - 2 g with dxw/dt = (g - xw)/(0.5 Tw), which reproduces the
    non-minimum-phase gate response exactly.
    States: g (gate, after servo), xi (PI integrator), xw (water).
    """

    NSTATES = 3

    def __init__(self, machines):
        self.m = machines
        n = len(machines)
        h_machine = np.array([p.h * 100.0 / p.mva for p in machines])
        self.tm, self.tw, self.kp, self.ki = hydro_governor_tuning(h_machine)
        self.rp = np.array([p.rp for p in machines])
        self.pmax = np.array([p.pmax for p in machines])
        self.ramp = np.array([p.ramp for p in machines])
        self.tg = np.full(n, 0.2)       # gate servo time constant
        self.gref = np.zeros(n)
        self.state = np.zeros((self.NSTATES, n))

    def initialize(self, pm0):
        # pm0 in pu of machine rating; DC gain of the water column is 1
        self.gref = pm0.copy()
        self.state[0] = pm0
        self.state[1] = pm0     # PI integrator holds the gate command
        self.state[2] = pm0

    def derivatives(self, state, dw, secondary, out=None):
        g, xi, xw = state
        if out is None:
            out = np.empty_like(state)
        err = -dw - self.rp * (g - self.gref - secondary)
        u = self.kp * err + xi
        dxi = self.ki * err
        # anti-windup: freeze the integrator when the gate is railed
        dxi[(g >= self.pmax) & (dxi > 0)] = 0.0
        dxi[(g <= 0.0) & (dxi < 0)] = 0.0
        dg = np.minimum(np.maximum((u - g) / self.tg, -self.ramp), self.ramp)
        dg[(g >= self.pmax) & (dg > 0)] = 0.0
        dg[(g <= 0.0) & (dg < 0)] = 0.0
        out[0] = dg
        out[1] = dxi
        out[2] = (g - xw) / (0.5 * self.tw)
        return out

    def clamp(self, state):
        state[0] = np.clip(state[0], 0.0, self.pmax)
        return state

    def pm(self, state):
        g, _, xw = state
        return np.minimum(np.maximum(3.0 * xw - 2.0 * g, 0.0), 1.2 * self.pmax)


class SteamGovernorBank:
    """Proportional-droop steam governor: speed delay, servo, and a
    tandem-compound single-reheat turbine (chest / reheater / crossover).

    States: xs (speed delay), v (valve), xc (chest), xr (reheat), xx (crossover).
    """

    NSTATES = 5

    def __init__(self, machines, tsd=0.1, tsv=0.3, tch=0.3, trh=7.0, tco=0.4,
                 fhp=0.3, fip=0.4, flp=0.3):
        self.m = machines
        n = len(machines)
        self.rp = np.array([p.rp for p in machines])
        self.pmax = np.array([p.pmax for p in machines])
        self.ramp = np.array([p.ramp for p in machines])
        self.tsd = np.full(n, tsd)
        self.tsv = np.full(n, tsv)
        self.tch = np.full(n, tch)
        self.trh = np.full(n, trh)
        self.tco = np.full(n, tco)
        self.fhp, self.fip, self.flp = fhp, fip, flp
        self.pref = np.zeros(n)
        self.state = np.zeros((self.NSTATES, n))

    def initialize(self, pm0):
        self.pref = pm0.copy()
        self.state[0] = 0.0
        self.state[1:] = pm0

    def derivatives(self, state, dw, secondary, out=None):
        xs, v, xc, xr, xx = state
        if out is None:
            out = np.empty_like(state)
        out[0] = (dw - xs) / self.tsd
        p_cmd = np.minimum(np.maximum(self.pref + secondary - xs / self.rp,
                                      0.0), self.pmax)
        dv = np.minimum(np.maximum((p_cmd - v) / self.tsv, -self.ramp),
                        self.ramp)
        dv[(v >= self.pmax) & (dv > 0)] = 0.0
        dv[(v <= 0.0) & (dv < 0)] = 0.0
        out[1] = dv
        out[2] = (v - xc) / self.tch
        out[3] = (xc - xr) / self.trh
        out[4] = (xr - xx) / self.tco
        return out

    def clamp(self, state):
        state[1] = np.clip(state[1], 0.0, self.pmax)
        return state

    def pm(self, state):
        _, _, xc, xr, xx = state
        return np.minimum(np.maximum(
            self.fhp * xc + self.fip * xr + self.flp * xx, 0.0),
            1.2 * self.pmax)


class SecondaryController:
    """Integral frequency restoration on the participating machine(s).

    Output is a power-setpoint offset in pu of the machine rating:
    d(offset)/dt = -dw / T with T = 120 s. Anti-windup freezes the
    integrator once the governor has no headroom left.
    """

    def __init__(self, participating, t_int=120.0, limit=1.0):
        self.participating = np.asarray(participating, dtype=bool)
        self.t_int = t_int
        self.limit = limit
        self.state = np.zeros(1)

    def derivatives(self, state, dw_participant, railed):
        if not self.participating.any():
            return np.zeros(1)
        d = -dw_participant / self.t_int
        if railed and d > 0:
            d = 0.0
        if abs(state[0]) >= self.limit and np.sign(d) == np.sign(state[0]):
            d = 0.0
        return np.array([d])

    def offsets(self, state):
        out = np.zeros(self.participating.shape[0])
        out[self.participating] = state[0]
        return out


class MachineFleet:
    """All in-service synchronous machines of a scenario, stepped together.

    Continuous state layout (per machine): delta, dw, eqp, edp, psid, psiq,
    followed by exciter states, governor states (hydro bank then steam bank)
    and the secondary-controller integrator.
    """

    def __init__(self, params, exciter_params):
        self.params = params
        self.n = len(params)
        self.names = [p.name for p in params]
        self.bus_idx = None      # filled by the simulator (network positions)
        self.in_service = np.ones(self.n, dtype=bool)

        def arr(attr):
            return np.array([getattr(p, attr) for p in params], dtype=float)

        self.h = arr("h")
        self.d = arr("d")
        self.mva = arr("mva")
        self.ra = arr("ra")
        self.xl = arr("xl")
        self.xd, self.xdp, self.xdpp = arr("xd"), arr("xdp"), arr("xdpp")
        self.xq, self.xqp, self.xqpp = arr("xq"), arr("xqp"), arr("xqpp")
        self.td0p, self.td0pp = arr("td0p"), arr("td0pp")
        self.tq0p, self.tq0pp = arr("tq0p"), arr("tq0pp")

        self.gd1 = (self.xdpp - self.xl) / (self.xdp - self.xl)
        self.gd2 = (1.0 - self.gd1) / (self.xdp - self.xl)
        self.gq1 = (self.xqpp - self.xl) / (self.xqp - self.xl)
        self.gq2 = (1.0 - self.gq1) / (self.xqp - self.xl)
        self.mva_over_base = self.mva / 100.0

        # Norton admittance used to stamp the network matrix
        self.yg = (self.ra - 0.5j * (self.xdpp + self.xqpp)) / \
            (self.ra ** 2 + self.xdpp * self.xqpp)

        self.state = np.zeros((6, self.n))   # delta, dw, eqp, edp, psid, psiq
        self.exciters = Dc1aExciterBank(exciter_params)

        self.hydro_sel = np.array([p.governor == "hydro" for p in params])
        self.steam_sel = ~self.hydro_sel
        self.hydro = HydroGovernorBank([p for p in params if p.governor == "hydro"])
        self.steam = SteamGovernorBank([p for p in params if p.governor == "steam"])
        self.secondary = SecondaryController(arr("secondary").astype(bool))
        self._sec_idx = int(np.argmax(self.secondary.participating)) \
            if self.secondary.participating.any() else 0

        self.pm = np.zeros(self.n)   # mechanical power, 100 MVA base

    # ---- equilibrium ------------------------------------------------------

    def initialize(self, vt, s_inj):
        """Back-solve machine, exciter and governor states from the power
        flow terminal conditions (complex voltage and injection, pu)."""
        ia = np.conj(s_inj / vt)
        eq = vt + (self.ra + 1j * self.xq) * ia
        delta = np.angle(eq)
        phi = np.angle(ia)
        iamag = np.abs(ia)
        idq = iamag * np.sin(delta - phi)
        iq = iamag * np.cos(delta - phi)
        vd = np.abs(vt) * np.sin(delta - np.angle(vt))
        vq = np.abs(vt) * np.cos(delta - np.angle(vt))

        edp = vd - self.xqpp * iq + self.ra * idq - \
            (1.0 - self.gq1) * (self.xqp - self.xl) * iq
        eqp = vq + self.xdpp * idq + self.ra * iq + \
            (1.0 - self.gd1) * (self.xdp - self.xl) * idq
        psid = eqp - (self.xdp - self.xl) * idq
        psiq = -edp - (self.xqp - self.xl) * iq
        efd = eqp + (self.xd - self.xdp) * (
            idq - self.gd2 * psid - (1.0 - self.gd1) * idq + self.gd2 * eqp)

        self.state[0] = delta
        self.state[1] = 0.0
        self.state[2] = eqp
        self.state[3] = edp
        self.state[4] = psid
        self.state[5] = psiq

        pe = (vd + self.ra * idq) * idq + (vq + self.ra * iq) * iq
        self.pm = pe.copy()
        self.exciters.initialize(np.abs(vt), efd)
        pm_rated = self.pm * 100.0 / self.mva
        self.hydro.initialize(pm_rated[self.hydro_sel])
        self.steam.initialize(pm_rated[self.steam_sel])
        self.secondary.state[:] = 0.0

        dx = self.derivatives_at(self.state_vector(), vt)
        resid = float(np.max(np.abs(dx)))
        if resid > 1e-8:
            per_machine = np.abs(dx[:6 * self.n].reshape(6, self.n)).max(axis=0)
            worst = self.names[int(np.argmax(per_machine))]
            raise MachineInitError(
                f"equilibrium residual {resid:.2e} exceeds 1e-8 "
                f"(worst machine block: {worst})")

    # ---- state vector plumbing -------------------------------------------

    def state_vector(self):
        return np.concatenate([
            self.state.ravel(),
            self.exciters.state.ravel(),
            self.hydro.state.ravel(),
            self.steam.state.ravel(),
            self.secondary.state,
        ])

    def set_state_vector(self, x):
        n = self.n
        k = 6 * n
        self.state = x[:k].reshape(6, n).copy()
        nk = k + self.exciters.NSTATES * n
        self.exciters.state = self.exciters.clamp(
            x[k:nk].reshape(self.exciters.NSTATES, n).copy())
        k = nk
        nh = self.hydro.state.shape[1]
        nk = k + self.hydro.NSTATES * nh
        self.hydro.state = self.hydro.clamp(
            x[k:nk].reshape(self.hydro.NSTATES, nh).copy())
        k = nk
        ns = self.steam.state.shape[1]
        nk = k + self.steam.NSTATES * ns
        self.steam.state = self.steam.clamp(
            x[k:nk].reshape(self.steam.NSTATES, ns).copy())
        self.secondary.state = x[nk:nk + 1].copy()

    # ---- dynamics ---------------------------------------------------------

    def dq_currents(self, state, vt):
        """Stator currents in the rotor frame given terminal voltage."""
        delta = state[0]
        eqp, edp, psid, psiq = state[2], state[3], state[4], state[5]
        vd = np.abs(vt) * np.sin(delta - np.angle(vt))
        vq = np.abs(vt) * np.cos(delta - np.angle(vt))
        num = (-vq + self.gd1 * eqp + (1.0 - self.gd1) * psid
               - self.ra / self.xqpp * (vd - self.gq1 * edp + (1.0 - self.gq1) * psiq))
        idq = num / (self.xdpp + self.ra ** 2 / self.xqpp)
        iq = (vd + self.ra * idq - self.gq1 * edp + (1.0 - self.gq1) * psiq) / self.xqpp
        return idq, iq, vd, vq

    def electrical_power(self, state, vt):
        idq, iq, vd, vq = self.dq_currents(state, vt)
        return (vd + self.ra * idq) * idq + (vq + self.ra * iq) * iq

    def norton_injection(self, state, vt):
        """Current injected into the augmented network (Yg stamped on the
        diagonal). Zero for out-of-service machines."""
        idq, iq, _, _ = self.dq_currents(state, vt)
        inet = (iq - 1j * idq) * np.exp(1j * state[0])
        im = inet + self.yg * vt
        return np.where(self.in_service, im, 0.0)

    def derivatives_at(self, x, vt):
        """Full fleet derivative vector at state x and terminal voltages vt."""
        n = self.n
        k = 6 * n
        ms = x[:k].reshape(6, n)
        exs = x[k:k + self.exciters.NSTATES * n].reshape(self.exciters.NSTATES, n)
        k2 = k + self.exciters.NSTATES * n
        nh = self.hydro.state.shape[1]
        hs = x[k2:k2 + self.hydro.NSTATES * nh].reshape(self.hydro.NSTATES, nh)
        k3 = k2 + self.hydro.NSTATES * nh
        ns = self.steam.state.shape[1]
        ss = x[k3:k3 + self.steam.NSTATES * ns].reshape(self.steam.NSTATES, ns)
        k4 = k3 + self.steam.NSTATES * ns
        sec = x[k4:k4 + 1]

        out = np.zeros_like(x)
        dms = out[:k].reshape(6, n)
        dex = out[k:k2].reshape(self.exciters.NSTATES, n)
        dh = out[k2:k3].reshape(self.hydro.NSTATES, nh)
        dst = out[k3:k4].reshape(self.steam.NSTATES, ns)

        delta, dw, eqp, edp, psid, psiq = ms
        idq, iq, vd, vq = self.dq_currents(ms, vt)
        efd = exs[2]

        dms[2] = (efd - (self.xd - self.xdp) *
                  (idq - self.gd2 * psid - (1.0 - self.gd1) * idq
                   + self.gd2 * eqp) - eqp) / self.td0p
        dms[3] = ((self.xq - self.xqp) *
                  (iq - self.gq2 * psiq - (1.0 - self.gq1) * iq
                   - self.gq2 * edp) - edp) / self.tq0p
        dms[4] = (eqp - (self.xdp - self.xl) * idq - psid) / self.td0pp
        dms[5] = (-edp - (self.xqp - self.xl) * iq - psiq) / self.tq0pp

        pe = (vd + self.ra * idq) * idq + (vq + self.ra * iq) * iq
        sec_off = self.secondary.offsets(sec)
        pm_rated = np.zeros(n)
        pm_rated[self.hydro_sel] = self.hydro.pm(hs)
        pm_rated[self.steam_sel] = self.steam.pm(ss)
        pm = pm_rated * self.mva_over_base
        self.pm = pm

        dms[1] = (pm - pe - self.d * dw) / (2.0 * self.h)
        dms[0] = OMEGA_BASE * dw

        self.exciters.derivatives(exs, np.abs(vt), out=dex)
        self.hydro.derivatives(hs, dw[self.hydro_sel], sec_off[self.hydro_sel],
                               out=dh)
        self.steam.derivatives(ss, dw[self.steam_sel], sec_off[self.steam_sel],
                               out=dst)
        live = self.in_service
        if not live.all():
            dms[:, ~live] = 0.0
            dex[:, ~live] = 0.0
            dh[:, ~live[self.hydro_sel]] = 0.0
            dst[:, ~live[self.steam_sel]] = 0.0

        if self.secondary.participating.any():
            i = self._sec_idx
            railed = bool(pm_rated[i] >= self.params[i].pmax - 1e-9) \
                or not self.in_service[i]
            out[k4:k4 + 1] = self.secondary.derivatives(sec, dw[i], railed)
        return out

    # ---- observations ------------------------------------------------------

    def speeds(self):
        return 1.0 + self.state[1]

    def coi_frequency(self):
        """Inertia-weighted mean machine speed (center of inertia), pu."""
        h = np.where(self.in_service, self.h, 0.0)
        if h.sum() == 0:
            return np.nan
        return float(1.0 + (h * self.state[1]).sum() / h.sum())

    def trip(self, name):
        """Remove a machine from service. Returns False if already out."""
        i = self.names.index(name)
        if not self.in_service[i]:
            return False
        self.in_service[i] = False
        self.state[1, i] = 0.0
        return True
