"""Scenario assembly, equilibrium initialization, fixed-step DAE integration
and contingency events.

The integration scheme is partitioned: device ODEs advance with an explicit
trapezoidal (Heun) or classic RK4 stage rule, with an algebraic network
solve after every stage. Sampled subsystems (measurement buffers, the PLL
cycle filter, the battery) update once per completed step on the 1 ms grid.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from .converter import GridFollowingControl, GridFormingControl
from .loads import LoadBank, LoadParams
from .machines import MachineFleet, MachineInitError
from .network import (AlgebraicSolver, NetworkSolveError, add_shunts,
                      build_admittance, solve_power_flow)
from .storage import BatteryStack, StackConfig
from .wind import WindFleet


class InitializationError(RuntimeError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, msg, t=None, snapshot=None):
        super().__init__(msg)
        self.t = t
        self.snapshot = snapshot


@dataclass
class Trace:
    """Fixed-cadence simulation record with metadata."""
    columns: list
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def col(self, name):
        return self.data[:, self.columns.index(name)]

    @property
    def t(self):
        return self.col("time_s")

    def save_csv(self, path):
        with open(path, "w") as fh:
            for k in sorted(self.meta):
                fh.write(f"# {k}={self.meta[k]}\n")
            fh.write(",".join(self.columns) + "\n")
            np.savetxt(fh, self.data, delimiter=",", fmt="%.10g")

    @classmethod
    def load_csv(cls, path):
        meta = {}
        header = None
        skip = 0
        with open(path) as fh:
            for line in fh:
                skip += 1
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k.strip()] = _parse_meta(v.strip())
                else:
                    header = [c.strip() for c in line.strip().split(",")]
                    break
        if header is None:
            raise ValueError(f"{path}: no header row")
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
        return cls(columns=header, data=data, meta=meta)


def _parse_meta(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            continue
    return v


class System:
    """A fully assembled scenario: network + device fleets + event queue."""

    def __init__(self, scenario):
        self.scenario = scenario
        root = dataio._dataset_root(scenario["dataset"])
        cfg = scenario["configuration"]
        data_cfg = "config1" if cfg == "config1" else "config2"
        self.buses = dataio.load_buses(root, data_cfg)
        self.branches = dataio.load_branches(root)
        self.bus_index = {b.id: i for i, b in enumerate(self.buses)}
        self.n_bus = len(self.buses)
        self.loads_table = dataio.load_loads(root, data_cfg)
        self.dispatch = dataio.load_dispatch(root, data_cfg)
        self.shunts = dataio.load_shunts(root, data_cfg)

        machines_all = dataio.load_machines(root)
        exciters_all = {e.name: e for e in dataio.load_exciters(root)}
        if cfg == "config1":
            roster = [m for m in machines_all]
        else:
            roster = [m for m in machines_all if m.name in self.dispatch]
        self.machines = MachineFleet(
            roster, [exciters_all[m.name] for m in roster])
        self.machines.bus_idx = np.array(
            [self.bus_index[m.bus] for m in roster])

        if cfg == "config1":
            self.wind = WindFleet([])
            self.wind.bus_idx = np.array([], dtype=int)
        else:
            wind_params = dataio.load_wind(root)
            self.wind = WindFleet(wind_params)
            self.wind.bus_idx = np.array(
                [self.bus_index[w.bus] for w in wind_params])

        load_buses = sorted(self.loads_table)
        lp_over = dict(scenario.get("overrides", {}).get("load_params", {}))
        v_guard = float(lp_over.pop("v_guard", 0.3))
        lp = LoadParams(**lp_over) if lp_over else None
        self.loadbank = LoadBank(
            [self.bus_index[b] for b in load_buses],
            [self.loads_table[b][0] for b in load_buses],
            [self.loads_table[b][1] for b in load_buses],
            params=lp, v_guard=v_guard)
        self.load_bus_ids = load_buses

        self.converter = None
        self.battery = None
        if cfg == "config2_bess":
            bess = dict(scenario.get("bess", {}))
            self.bess_bus = int(bess.get("bus", 17))
            rating = float(bess.get("rating_mva", 225.0))
            self.bess_rating = rating
            table = dataio.load_battery_table(root)
            self.battery = BatteryStack(
                table, StackConfig(rating_mva=rating),
                soc0=float(bess.get("soc0", 0.7)))
            if scenario["controller"] == "forming":
                self.converter = GridFormingControl(rating)
            else:
                self.converter = GridFollowingControl(rating)
            self.pcc_idx = self.bus_index[self.bess_bus]

        self.y_static = add_shunts(
            build_admittance(self.buses, self.branches), self.buses, self.shunts)
        self.solver = None
        self.v = None
        self.t = 0.0
        self.events = [dict(e, applied=False) for e in scenario["events"]]
        self.event_log = []
        self.max_balance_residual = 0.0
        self._fleets = None

    # ------------------------------------------------------------------
    # initialization

    def power_flow_targets(self):
        """Per-bus net injection targets in pu for the initialization flow."""
        p = np.zeros(self.n_bus)
        q = np.zeros(self.n_bus)
        for b, (pl, ql) in self.loads_table.items():
            p[self.bus_index[b]] -= pl / 100.0
            q[self.bus_index[b]] -= ql / 100.0
        for m in self.machines.params:
            if self.buses[self.bus_index[m.bus]].kind == "pv":
                p[self.bus_index[m.bus]] += self.dispatch[m.name] / 100.0
        for i, w in enumerate(self.wind.params):
            p[self.bus_index[w.bus]] += self.dispatch[w.name] / 100.0
        return p, q

    def init_equilibrium(self):
        p_t, q_t = self.power_flow_targets()
        pf = solve_power_flow(self.buses, self.y_static, p_t, q_t)
        self.pf = pf
        v = pf.v.copy()

        # devices are back-solved from their terminal conditions
        s_net = pf.p_injection + 1j * pf.q_injection
        s_mach = s_net[self.machines.bus_idx].copy()
        for k, m in enumerate(self.machines.params):
            if m.bus in self.loads_table:
                pl, ql = self.loads_table[m.bus]
                s_mach[k] += (pl + 1j * ql) / 100.0
            # wind plant sharing the bus is not possible in the shipped set
        try:
            self.machines.initialize(v[self.machines.bus_idx], s_mach)
        except MachineInitError as exc:
            raise InitializationError(str(exc))

        self.wind.initialize([self.dispatch[w.name] for w in self.wind.params], v)
        self.loadbank.initialize(v)

        if self.converter is not None:
            bess = dict(self.scenario.get("bess", {}))
            pref = float(bess.get("p_mw", 0.0)) / self.bess_rating
            self.converter.initialize(v[self.pcc_idx], pref=pref)

        self._rebuild_solver()
        self.v, _ = self.solver.solve(self.injections, v0=v,
                                      jac_fn=self._device_jacobian)
        if np.max(np.abs(self.v - v)) > 1e-6:
            raise InitializationError(
                "network solve inconsistent with power flow at equilibrium "
                f"(dV={np.max(np.abs(self.v - v)):.2e})")
        self.t = 0.0
        self._collect_fleets()
        resid = np.max(np.abs(self._derivatives(self.v)))
        if resid > 1e-8:
            raise InitializationError(
                f"equilibrium state derivative residual {resid:.2e} > 1e-8")
        return pf

    def realized_injections(self):
        """Per-unit realized injections from the initialization power flow,
        grouped the way the published nodal table counts them (wind plants
        include their collocated compensation shunts)."""
        out = {}
        v = self.pf.v
        s_net = self.pf.p_injection + 1j * self.pf.q_injection
        for k, m in enumerate(self.machines.params):
            s = s_net[self.bus_index[m.bus]]
            if m.bus in self.loads_table:
                pl, ql = self.loads_table[m.bus]
                s += (pl + 1j * ql) / 100.0
            out[m.name] = (s.real * 100.0, s.imag * 100.0)
        for w in self.wind.params:
            i = self.bus_index[w.bus]
            s = s_net[i]
            if w.bus in self.loads_table:
                pl, ql = self.loads_table[w.bus]
                s += (pl + 1j * ql) / 100.0
            q_shunt = self.shunts.get(w.bus, 0.0) * np.abs(v[i]) ** 2
            out[w.name] = (s.real * 100.0, (s.imag + q_shunt) * 100.0)
        return out

    # ------------------------------------------------------------------
    # dynamics

    def _collect_fleets(self):
        fleets = [
            (self.machines, self.machines.bus_idx),
            (self.wind, self.wind.bus_idx),
        ]
        if self.converter is not None:
            fleets.append((self.converter, self.pcc_idx))
        self._fleets = fleets
        self._sizes = [len(f.state_vector()) for f, _ in fleets]
        self._slices = []
        k = 0
        for n in self._sizes:
            self._slices.append(slice(k, k + n))
            k += n

    def _state_vector(self):
        return np.concatenate([f.state_vector() for f, _ in self._fleets])

    def _set_state(self, x):
        for (f, _), sl in zip(self._fleets, self._slices):
            f.set_state_vector(x[sl])

    def _derivatives(self, v, x=None):
        """Derivative vector at state x (defaults to the fleets' current
        internal state) and network voltages v."""
        outs = []
        for (f, bi), sl in zip(self._fleets, self._slices):
            xf = f.state_vector() if x is None else x[sl]
            outs.append(f.derivatives_at(xf, v[bi]))
        return np.concatenate(outs) if outs else np.empty(0)

    def _rebuild_solver(self):
        y = self.y_static.copy()
        idx = self.machines.bus_idx
        y[idx, idx] += self.machines.yg * self.machines.in_service
        if self.wind.n:
            widx = self.wind.bus_idx
            y[widx, widx] += self.wind.yw * self.wind.in_service
        if isinstance(self.converter, GridFormingControl):
            y[self.pcc_idx, self.pcc_idx] += self.converter.yc_sys
        if self.solver is None:
            self.solver = AlgebraicSolver(y)
        else:
            self.solver.set_matrix(y)

    def _device_jacobian(self, v):
        """Per-bus injection Jacobian blocks of the voltage-dependent
        devices, for the network solver's chord matrix."""
        dre = np.zeros(self.n_bus)
        drf = np.zeros(self.n_bus)
        die = np.zeros(self.n_bus)
        dif = np.zeros(self.n_bus)
        self.loadbank.add_jacobian(v, dre, drf, die, dif)
        return dre, drf, die, dif

    def injections(self, v):
        out = np.zeros(self.n_bus, dtype=complex)
        out[self.machines.bus_idx] += self.machines.norton_injection(
            self.machines.state, v[self.machines.bus_idx])
        if self.wind.n:
            self.wind.injections(v, out)
        self.loadbank.injections(v, out)
        if self.converter is not None:
            out[self.pcc_idx] += self.converter.injection(v[self.pcc_idx])
        return out

    def _solve_network(self, check_balance=False):
        try:
            self.v, _ = self.solver.solve(self.injections, v0=self.v,
                                          jac_fn=self._device_jacobian)
        except NetworkSolveError as exc:
            raise SimulationError(
                f"network solve failed at t={self.t:.4f} s: {exc}",
                t=self.t, snapshot=self._state_vector())
        if check_balance:
            resid = np.abs(np.sum(self.v * np.conj(
                self.injections(self.v) - self.solver.y @ self.v)))
            self.max_balance_residual = max(self.max_balance_residual, resid)

    def apply_event(self, ev):
        """Apply one event; returns a log entry."""
        kind, target = ev["kind"], ev["target"]
        entry = {"time_s": self.t, "kind": kind, "target": target}
        if kind == "trip_generator":
            if target in self.machines.names:
                k = self.machines.names.index(target)
                p_mw = float(self.machines.pm[k] * 100.0)
                if self.machines.trip(target):
                    self._rebuild_solver()
                    entry["mw_loss"] = p_mw
                else:
                    entry["note"] = "already out of service"
            elif target in self.wind.names:
                k = self.wind.names.index(target)
                p_mw = float(self.wind.state[k] * self.wind.mva[k])
                if self.wind.trip(target):
                    entry["mw_loss"] = p_mw
                else:
                    entry["note"] = "already out of service"
            else:
                raise SimulationError(f"unknown generator '{target}'", t=self.t)
        elif kind == "trip_load":
            bus = int(target)
            if bus not in self.load_bus_ids:
                raise SimulationError(f"no load at bus {bus}", t=self.t)
            pos = self.load_bus_ids.index(bus)
            if self.loadbank.trip(pos):
                entry["mw_loss"] = -float(self.loadbank.p[pos] * 100.0)
            else:
                entry["note"] = "already out of service"
        elif kind == "set_reference":
            if self.converter is None:
                raise SimulationError("no converter in this scenario", t=self.t)
            self.converter.pref = float(ev["value"])
            entry["value"] = ev["value"]
        self.event_log.append(entry)
        return entry

    def step(self, dt, method="trapezoidal"):
        for ev in self.events:
            if not ev["applied"] and ev["time_s"] <= self.t + 1e-12:
                self.apply_event(ev)
                ev["applied"] = True
                self._solve_network()

        if self.wind.n:
            self.wind.update_limit_state(self.v)
        x0 = self._state_vector()
        if method == "rk4":
            k1 = self._derivatives(self.v)
            self._set_state(x0 + 0.5 * dt * k1)
            self._solve_network()
            k2 = self._derivatives(self.v)
            self._set_state(x0 + 0.5 * dt * k2)
            self._solve_network()
            k3 = self._derivatives(self.v)
            self._set_state(x0 + dt * k3)
            self._solve_network()
            k4 = self._derivatives(self.v)
            self._set_state(x0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        else:
            k1 = self._derivatives(self.v)
            self._set_state(x0 + dt * k1)
            self._solve_network()
            k2 = self._derivatives(self.v)
            self._set_state(x0 + 0.5 * dt * (k1 + k2))
        self._solve_network(check_balance=True)

        # sampled subsystems
        self.loadbank.post_step(self.v, dt)
        if self.converter is not None:
            self.converter.post_step(self.v[self.pcc_idx], dt)
            p_pu, _ = self.converter.measured_power(self.v[self.pcc_idx])
            self.battery.step(p_pu * self.bess_rating * 1e6, dt)
        self.t += dt


def trace_columns(system):
    cols = ["time_s", "freq_coi_pu"]
    cols += [f"freq_{n}_pu" for n in system.machines.names]
    cols += [f"vmag_bus{b.id}_pu" for b in system.buses]
    cols += ["conv_p_pu", "conv_q_pu", "dc_voltage_v", "dc_current_a", "soc"]
    return cols


def record_row(system, out):
    out[0] = system.t
    out[1] = system.machines.coi_frequency()
    n = system.machines.n
    out[2:2 + n] = np.where(system.machines.in_service,
                            1.0 + system.machines.state[1], np.nan)
    nb = system.n_bus
    out[2 + n:2 + n + nb] = np.abs(system.v)
    if system.converter is not None:
        p, q = system.converter.measured_power(system.v[system.pcc_idx])
        out[2 + n + nb] = p
        out[2 + n + nb + 1] = q
        out[2 + n + nb + 2] = system.battery.v_terminal
        out[2 + n + nb + 3] = system.battery.i_dc
        out[2 + n + nb + 4] = system.battery.soc
    else:
        out[2 + n + nb:2 + n + nb + 5] = np.nan


def run(scenario, method="trapezoidal", progress=False):
    """Initialize and integrate a scenario; returns a Trace."""
    system = System(scenario)
    system.init_equilibrium()
    dt = scenario["step_s"]
    n_steps = int(round(scenario["duration_s"] / dt))
    every = max(1, scenario["trace_every_steps"])
    n_rec = n_steps // every + 1
    cols = trace_columns(system)
    data = np.full((n_rec, len(cols)), np.nan)
    record_row(system, data[0])
    rec = 1
    wall0 = time.time()
    for k in range(n_steps):
        system.step(dt, method=method)
        if (k + 1) % every == 0:
            record_row(system, data[rec])
            rec += 1
        if progress and (k + 1) % 10000 == 0:
            print(f"  t={system.t:8.2f} s  wall={time.time() - wall0:6.1f} s",
                  flush=True)
    meta = {
        "scenario": scenario["name"],
        "configuration": scenario["configuration"],
        "controller": scenario["controller"]
        if scenario["configuration"] == "config2_bess" else "",
        "step_s": dt,
        "seed": scenario["seed"],
        "method": method,
        "max_balance_residual_pu": float(system.max_balance_residual),
    }
    trips = [e for e in system.event_log if e["kind"].startswith("trip")]
    if trips:
        meta["trip_time_s"] = trips[0]["time_s"]
        if "mw_loss" in trips[0]:
            meta["trip_mw_loss"] = round(trips[0]["mw_loss"], 3)
    return Trace(columns=cols, data=data[:rec], meta=meta)
