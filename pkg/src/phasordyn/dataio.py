"""Dataset and scenario file parsing.

Dataset layout (CSV tables with '#' comments, documented column order):

    <dataset>/branches.csv      from,to,r_pu,x_pu,b_pu,tap
    <dataset>/machines.csv      name,bus,mva,h,d,ra,xl,xd,xdp,xdpp,xq,xqp,
                                xqpp,td0p,td0pp,tq0p,tq0pp,governor,rp,pmax,
                                ramp,secondary
    <dataset>/exciters.csv      name,tr,ka,ta,ke,te,kf,tf,vrmax,vrmin,asat,
                                bsat,efdmin,efdmax
    <dataset>/wind.csv          name,bus,mva,i_limit,tau,v_ride_through
    <dataset>/battery_ttc.csv   soc_lo,soc_hi,e_v,rs_ohm,r1_ohm,c1_f,r2_ohm,
                                c2_f,r3_ohm,c3_f
    <dataset>/<config>/buses.csv     bus,kind,vset_pu,base_kv
    <dataset>/<config>/loads.csv     bus,p_mw,q_mvar
    <dataset>/<config>/dispatch.csv  unit,p_mw
    <dataset>/<config>/shunts.csv    bus,b_pu            (optional)

All electrical quantities are per-unit on the 100 MVA system base except
machine ratings (MVA) and demand/dispatch (MW / MVar).
"""

import csv
import io
from importlib import resources
from pathlib import Path

import yaml

from .machines import ExciterParams, MachineParams
from .network import Branch, Bus
from .storage import BatteryParams, BatteryTable
from .wind import WindPlantParams


class DatasetError(ValueError):
    """A dataset table is missing or malformed."""


def _read_csv(path_or_text, columns, name):
    if isinstance(path_or_text, Path):
        text = path_or_text.read_text()
    else:
        text = path_or_text
    rows = []
    reader = csv.reader(io.StringIO(text))
    header = None
    for rec in reader:
        if not rec or rec[0].lstrip().startswith("#"):
            continue
        rec = [c.strip() for c in rec]
        if header is None:
            header = rec
            if header != columns:
                raise DatasetError(
                    f"{name}: expected columns {columns}, found {header}")
            continue
        if len(rec) != len(columns):
            raise DatasetError(f"{name}: row {rec} has {len(rec)} fields, "
                               f"expected {len(columns)}")
        rows.append(dict(zip(columns, rec)))
    if header is None:
        raise DatasetError(f"{name}: no header row")
    return rows


def _dataset_root(dataset):
    """Resolve a dataset name to a directory: a filesystem path if it exists,
    otherwise a packaged dataset under phasordyn/data/."""
    p = Path(dataset)
    if p.is_dir():
        return p
    pkg = resources.files("phasordyn") / "data" / dataset
    if pkg.is_dir():
        return Path(str(pkg))
    raise DatasetError(f"dataset '{dataset}' not found")


def load_branches(root):
    rows = _read_csv(root / "branches.csv",
                     ["from", "to", "r_pu", "x_pu", "b_pu", "tap"],
                     "branches.csv")
    return [Branch(int(r["from"]), int(r["to"]), float(r["r_pu"]),
                   float(r["x_pu"]), float(r["b_pu"]), float(r["tap"]))
            for r in rows]


def load_buses(root, config):
    rows = _read_csv(root / config / "buses.csv",
                     ["bus", "kind", "vset_pu", "base_kv"], "buses.csv")
    return [Bus(int(r["bus"]), r["kind"], float(r["vset_pu"]),
                float(r["base_kv"])) for r in rows]


def load_machines(root):
    cols = ["name", "bus", "mva", "h", "d", "ra", "xl", "xd", "xdp", "xdpp",
            "xq", "xqp", "xqpp", "td0p", "td0pp", "tq0p", "tq0pp",
            "governor", "rp", "pmax", "ramp", "secondary"]
    rows = _read_csv(root / "machines.csv", cols, "machines.csv")
    out = []
    for r in rows:
        out.append(MachineParams(
            name=r["name"], bus=int(r["bus"]), mva=float(r["mva"]),
            h=float(r["h"]), d=float(r["d"]), ra=float(r["ra"]),
            xl=float(r["xl"]), xd=float(r["xd"]), xdp=float(r["xdp"]),
            xdpp=float(r["xdpp"]), xq=float(r["xq"]), xqp=float(r["xqp"]),
            xqpp=float(r["xqpp"]), td0p=float(r["td0p"]),
            td0pp=float(r["td0pp"]), tq0p=float(r["tq0p"]),
            tq0pp=float(r["tq0pp"]), governor=r["governor"],
            rp=float(r["rp"]), pmax=float(r["pmax"]), ramp=float(r["ramp"]),
            secondary=bool(int(r["secondary"]))))
    return out


def load_exciters(root):
    cols = ["name", "tr", "ka", "ta", "ke", "te", "kf", "tf", "vrmax",
            "vrmin", "asat", "bsat", "efdmin", "efdmax"]
    rows = _read_csv(root / "exciters.csv", cols, "exciters.csv")
    return [ExciterParams(name=r["name"], tr=float(r["tr"]), ka=float(r["ka"]),
                          ta=float(r["ta"]), ke=float(r["ke"]),
                          te=float(r["te"]), kf=float(r["kf"]),
                          tf=float(r["tf"]), vrmax=float(r["vrmax"]),
                          vrmin=float(r["vrmin"]), asat=float(r["asat"]),
                          bsat=float(r["bsat"]), efdmin=float(r["efdmin"]),
                          efdmax=float(r["efdmax"]))
            for r in rows]


def load_wind(root):
    cols = ["name", "bus", "mva", "i_limit", "tau", "v_ride_through"]
    rows = _read_csv(root / "wind.csv", cols, "wind.csv")
    return [WindPlantParams(name=r["name"], bus=int(r["bus"]),
                            mva=float(r["mva"]), i_limit=float(r["i_limit"]),
                            tau=float(r["tau"]),
                            v_ride_through=float(r["v_ride_through"]))
            for r in rows]


def load_loads(root, config):
    rows = _read_csv(root / config / "loads.csv",
                     ["bus", "p_mw", "q_mvar"], "loads.csv")
    return {int(r["bus"]): (float(r["p_mw"]), float(r["q_mvar"]))
            for r in rows}


def load_dispatch(root, config):
    rows = _read_csv(root / config / "dispatch.csv",
                     ["unit", "p_mw"], "dispatch.csv")
    return {r["unit"]: float(r["p_mw"]) for r in rows}


def load_shunts(root, config):
    path = root / config / "shunts.csv"
    if not path.exists():
        return {}
    rows = _read_csv(path, ["bus", "b_pu"], "shunts.csv")
    return {int(r["bus"]): float(r["b_pu"]) for r in rows}


def load_battery_table(root):
    cols = ["soc_lo", "soc_hi", "e_v", "rs_ohm", "r1_ohm", "c1_f", "r2_ohm",
            "c2_f", "r3_ohm", "c3_f"]
    rows = _read_csv(root / "battery_ttc.csv", cols, "battery_ttc.csv")
    return BatteryTable([BatteryParams(
        soc_lo=float(r["soc_lo"]), soc_hi=float(r["soc_hi"]),
        e=float(r["e_v"]), rs=float(r["rs_ohm"]),
        r1=float(r["r1_ohm"]), c1=float(r["c1_f"]),
        r2=float(r["r2_ohm"]), c2=float(r["c2_f"]),
        r3=float(r["r3_ohm"]), c3=float(r["c3_f"])) for r in rows])


class ScenarioError(ValueError):
    """Scenario file missing required fields or referencing unknown entities."""


_CONFIGS = ("config1", "config2", "config2_bess")
_CONTROLLERS = ("following", "forming")
_EVENT_KINDS = ("trip_generator", "trip_load", "set_reference")


def load_scenario(path):
    """Parse a scenario YAML file into a plain dict with defaults applied."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")

    def need(key):
        if key not in raw:
            raise ScenarioError(f"{path}: missing required field '{key}'")
        return raw[key]

    cfg = need("configuration")
    if cfg not in _CONFIGS:
        raise ScenarioError(f"{path}: configuration must be one of {_CONFIGS}")
    controller = raw.get("controller", "following")
    if controller not in _CONTROLLERS:
        raise ScenarioError(f"{path}: controller must be one of {_CONTROLLERS}")
    duration = float(need("duration_s"))
    events = []
    for ev in raw.get("events", []) or []:
        kind = ev.get("kind")
        if kind not in _EVENT_KINDS:
            raise ScenarioError(f"{path}: unknown event kind '{kind}'")
        t = float(ev.get("time_s", -1.0))
        if not 0.0 <= t <= duration:
            raise ScenarioError(f"{path}: event time {t} outside run duration")
        events.append({"time_s": t, "kind": kind,
                       "target": str(ev.get("target")),
                       "value": ev.get("value")})

    scen = {
        "name": raw.get("name", Path(path).stem),
        "configuration": cfg,
        "controller": controller,
        "dataset": raw.get("dataset", "ieee39"),
        "step_s": float(raw.get("step_s", 0.001)),
        "duration_s": duration,
        "seed": int(raw.get("seed", 0)),
        "trace_every_steps": int(raw.get("trace_every_steps", 20)),
        "events": sorted(events, key=lambda e: e["time_s"]),
        "bess": raw.get("bess", {}) or {},
        "profiles": raw.get("profiles", {}) or {},
        "overrides": raw.get("overrides", {}) or {},
    }
    if scen["step_s"] <= 0:
        raise ScenarioError(f"{path}: step_s must be positive")
    return scen
