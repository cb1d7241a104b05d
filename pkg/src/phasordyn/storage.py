"""Battery stack: three-time-constant equivalent circuit with SOC-bracketed
parameters, coulomb-counting SOC, and the DC power interface of the
converter.

State space (per sampling step, exact zero-order-hold discretization):
    d v_Ck / dt = -v_Ck / (Rk Ck) + (i/156) / Ck        k = 1..3
    y = v_C1 + v_C2 + v_C3 + Rs (i/156) + E
Positive current charges the battery (SOC rises, terminal voltage above E).
"""

from dataclasses import dataclass

import numpy as np

PARALLEL_STRINGS = 156


@dataclass(frozen=True)
class BatteryParams:
    """One SOC-bracket row of the parameter table (stack level, ohms/farads)."""
    soc_lo: float
    soc_hi: float
    e: float
    rs: float
    r1: float
    c1: float
    r2: float
    c2: float
    r3: float
    c3: float

    def __post_init__(self):
        for name in ("rs", "r1", "c1", "r2", "c2", "r3", "c3"):
            if getattr(self, name) <= 0:
                raise ValueError(f"battery parameter {name} must be positive")


@dataclass
class StackConfig:
    series_count: int = 2
    parallel_count: int = PARALLEL_STRINGS
    c_nom_ah: float = 117e3
    ts: float = 0.001
    rating_mva: float = 225.0
    efficiency: float = 0.975


class BatteryTable:
    """SOC-bracketed parameter table; brackets are half-open [lo, hi) with
    the final bracket closed at 100 %."""

    def __init__(self, rows):
        rows = sorted(rows, key=lambda r: r.soc_lo)
        if len(rows) != 5:
            raise ValueError("expected exactly five SOC brackets")
        self.rows = rows

    def lookup(self, soc):
        if not 0.0 <= soc <= 1.0:
            raise ValueError(f"SOC {soc} outside [0, 1]")
        for row in self.rows:
            if row.soc_lo <= 100.0 * soc < row.soc_hi:
                return row
        return self.rows[-1]


def battery_params_lookup(table, soc):
    return table.lookup(soc)


def stack_parameter_scaling(cell_rows):
    """Scale single-stack parameters to the two-in-series configuration:
    voltages and resistances double, capacitances halve (time constants
    Rk Ck are preserved exactly)."""
    out = []
    for r in cell_rows:
        out.append(BatteryParams(
            soc_lo=r.soc_lo, soc_hi=r.soc_hi,
            e=2.0 * r.e, rs=2.0 * r.rs,
            r1=2.0 * r.r1, c1=0.5 * r.c1,
            r2=2.0 * r.r2, c2=0.5 * r.c2,
            r3=2.0 * r.r3, c3=0.5 * r.c3))
    return out


def battery_step(vc, i_total, dt, params):
    """Advance the RC branch voltages by dt with the current held constant
    (exact ZOH discretization) and return (vc_next, terminal_voltage).

    The terminal voltage is evaluated at the pre-step branch voltages, i.e.
    y_k = C x_k + D u_k, matching the sampled-data form of the model.
    """
    r = np.array([params.r1, params.r2, params.r3])
    c = np.array([params.c1, params.c2, params.c3])
    i_str = i_total / PARALLEL_STRINGS
    v_terminal = float(np.sum(vc) + params.rs * i_str + params.e)
    decay = np.exp(-dt / (r * c))
    vc_next = vc * decay + r * i_str * (1.0 - decay)
    return vc_next, v_terminal


def soc_update(soc, i_total, ts, c_nom_ah):
    """Coulomb counting; returns (soc_next, clamped)."""
    if ts <= 0:
        raise ValueError("sampling time must be positive")
    raw = soc + (ts / 3600.0) * i_total / c_nom_ah
    clamped = raw < 0.0 or raw > 1.0
    return min(max(raw, 0.0), 1.0), clamped


def solve_dc_current(vc_sum, e, rs, p_draw, tol=1e-9, max_iter=60):
    """Solve v_terminal(i) * i = -p_draw for the battery current.

    p_draw > 0 means the converter draws power from the battery
    (discharge, i < 0). One-dimensional Newton with bisection fallback on
    g(i) = -(vc_sum + E + Rs i / 156) i - p_draw.
    """
    v0 = vc_sum + e
    a = rs / PARALLEL_STRINGS

    def g(i):
        return -(v0 + a * i) * i - p_draw

    def dg(i):
        return -v0 - 2.0 * a * i

    i = -p_draw / v0  # constant-voltage first guess
    for _ in range(max_iter):
        gi = g(i)
        if abs(gi) < tol * max(1.0, abs(p_draw)):
            return i
        d = dg(i)
        if d == 0:
            break
        i = i - gi / d
    # bisection fallback on a generous bracket
    lo, hi = -10.0 * (abs(p_draw) / v0 + 1.0), 10.0 * (abs(p_draw) / v0 + 1.0)
    if g(lo) * g(hi) > 0:
        raise RuntimeError("DC power equation has no bracketed root "
                           f"(p_draw={p_draw:.3e} W)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(lo) * g(mid) <= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


class BatteryStack:
    """Sampled battery model driven by the converter AC-side power."""

    def __init__(self, table, config=None, soc0=0.7):
        self.table = table
        self.config = config or StackConfig()
        self.soc = soc0
        self.vc = np.zeros(3)
        self.i_dc = 0.0
        self.v_terminal = float(table.lookup(soc0).e)
        self.clamp_events = 0

    def initialize(self, soc0=None):
        if soc0 is not None:
            self.soc = soc0
        self.vc = np.zeros(3)
        self.i_dc = 0.0
        self.v_terminal = float(self.table.lookup(self.soc).e)
        self.clamp_events = 0

    def step(self, p_ac_w, dt):
        """Advance one sampling period with AC-side power p_ac_w (W,
        positive = injecting into the grid). Returns the terminal voltage."""
        eta = self.config.efficiency
        p_draw = p_ac_w / eta if p_ac_w >= 0 else p_ac_w * eta
        params = self.table.lookup(self.soc)
        self.i_dc = solve_dc_current(float(np.sum(self.vc)), params.e,
                                     params.rs, p_draw)
        self.vc, self.v_terminal = battery_step(self.vc, self.i_dc, dt, params)
        self.soc, clamped = soc_update(self.soc, self.i_dc, dt,
                                       self.config.c_nom_ah)
        if clamped:
            self.clamp_events += 1
        return self.v_terminal
