"""System parameters, device health and the derived operating point.

All quantities are SI. Defaults are the 5 kW / 800 V grid-connected
two-level inverter used throughout the package.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

DEVICE_IDS = tuple(f"S{n}" for n in range(1, 7)) + tuple(f"D{n}" for n in range(1, 7))

# (top switch, top diode, bottom switch, bottom diode) per phase leg
LEG_DEVICES = {
    "a": ("S1", "D1", "S2", "D2"),
    "b": ("S3", "D3", "S4", "D4"),
    "c": ("S5", "D5", "S6", "D6"),
}
PHASES = ("a", "b", "c")

# fraction of the initial on-state resistance counted as end of life
EOL_FRACTION = 0.05


class ConfigError(ValueError):
    """Invalid parameter set or config file."""


class OvermodulationError(ConfigError):
    """Operating point needs a modulation index above one."""


def device_phase(device_id: str) -> str:
    for phase, devs in LEG_DEVICES.items():
        if device_id in devs:
            return phase
    raise KeyError(f"unknown device id {device_id!r}")


@dataclass(frozen=True)
class SystemParams:
    p_out: float = 5000.0
    v_dc: float = 800.0
    v_g_amp: float = 311.0
    c_bus: float = 600e-6
    r_c: float = 1e-3
    l_g: float = 6e-3
    r_l: float = 0.1
    l_s: float = 0.0
    r_s: float = 0.0
    f_g: float = 50.0
    f_sw: float = 20e3
    f_sa: float = 20e3
    k_pc: float = 40.0
    k_ic: float = 500.0
    k_pv: float = 0.6
    k_iv: float = 13.0
    t_deadtime: float = 1e-6
    theta_g0: float = math.pi / 2

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ConfigError(f"{f.name} must be finite, got {value}")
        for name in ("l_s", "r_s", "t_deadtime", "p_out"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("v_dc", "v_g_amp", "c_bus", "r_c", "l_g", "r_l", "f_g",
                     "f_sw", "f_sa", "k_pc", "k_ic", "k_pv", "k_iv"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not _is_integer_ratio(self.f_sw, self.f_g):
            raise ConfigError("f_sw must be an integer multiple of f_g")
        if not _is_integer_ratio(self.f_sa, self.f_g):
            raise ConfigError("f_sa must be an integer multiple of f_g")

    @property
    def t_sa(self) -> float:
        return 1.0 / self.f_sa

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.f_g

    @property
    def samples_per_cycle(self) -> int:
        return round(self.f_sa / self.f_g)

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)


def _is_integer_ratio(num: float, den: float) -> bool:
    r = num / den
    return abs(r - round(r)) < 1e-9 * max(1.0, r)


@dataclass(frozen=True)
class OperatingPoint:
    i_a_amp: float
    m_d: float
    omega: float

    def __post_init__(self):
        if not 0.0 < self.m_d <= 1.0:
            raise OvermodulationError(f"modulation index {self.m_d:.4f} outside (0, 1]")
        if self.i_a_amp < 0:
            raise ConfigError("i_a_amp must be >= 0")


def operating_point(p: SystemParams) -> OperatingPoint:
    """Unity-power-factor operating point.

    The filter drop is neglected, so the modulation index is set by the
    grid voltage alone.
    """
    i_a_amp = 2.0 * p.p_out / (3.0 * p.v_g_amp)
    m_d = p.v_g_amp / (p.v_dc / 2.0)
    return OperatingPoint(i_a_amp=i_a_amp, m_d=m_d, omega=p.omega)


@dataclass(frozen=True)
class DeviceModel:
    v_on0: float
    r_on: float

    def __post_init__(self):
        if self.v_on0 < 0 or self.r_on < 0:
            raise ConfigError("on-state parameters must be >= 0")

    def drop(self, current: float) -> float:
        return self.v_on0 + self.r_on * abs(current)


@dataclass(frozen=True)
class DeviceHealth:
    devices: Mapping[str, DeviceModel] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.devices) - set(DEVICE_IDS)
        if unknown:
            raise ConfigError(f"unknown device ids {sorted(unknown)}")
        missing = set(DEVICE_IDS) - set(self.devices)
        if missing:
            raise ConfigError(f"missing device ids {sorted(missing)}")

    @classmethod
    def uniform(cls, v_on0: float = 0.75, r_on: float = 22.5e-3) -> "DeviceHealth":
        model = DeviceModel(v_on0, r_on)
        return cls({d: model for d in DEVICE_IDS})

    @classmethod
    def ideal(cls) -> "DeviceHealth":
        return cls.uniform(0.0, 0.0)

    def __getitem__(self, device_id: str) -> DeviceModel:
        try:
            return self.devices[device_id]
        except KeyError:
            raise KeyError(f"unknown device id {device_id!r}") from None

    def with_device(self, device_id: str, model: DeviceModel) -> "DeviceHealth":
        self[device_id]
        devices = dict(self.devices)
        devices[device_id] = model
        return DeviceHealth(devices)

    def degrade(self, device_id: str, delta_r_on: float) -> "DeviceHealth":
        """Return a copy with ``delta_r_on`` added to one device's resistance."""
        if not delta_r_on >= 0:
            raise ConfigError("delta_r_on must be >= 0")
        dev = self[device_id]
        return self.with_device(device_id, DeviceModel(dev.v_on0, dev.r_on + delta_r_on))

    def leg(self, phase: str) -> tuple[DeviceModel, DeviceModel, DeviceModel, DeviceModel]:
        return tuple(self[d] for d in LEG_DEVICES[phase])


def default_params() -> SystemParams:
    return SystemParams()


def default_health() -> DeviceHealth:
    return DeviceHealth.uniform()


def end_of_life_delta_ron(h: DeviceHealth, device_id: str, fraction: float = EOL_FRACTION) -> float:
    return fraction * h[device_id].r_on


# ---------------------------------------------------------------------------
# config files (INI, one section per type)

@dataclass(frozen=True)
class ScenarioConfig:
    degraded_device: str = "S1"
    delta_r_on: float = 1e-3
    fidelity: str = "averaged"
    n_cycles: int = 10
    settle_cycles: int = 20
    n_over: int = 200

    def __post_init__(self):
        if self.fidelity not in ("averaged", "switched"):
            raise ConfigError(f"fidelity must be 'averaged' or 'switched', got {self.fidelity!r}")
        if not self.delta_r_on >= 0:
            raise ConfigError("delta_r_on must be >= 0")
        if self.degraded_device not in DEVICE_IDS:
            raise ConfigError(f"unknown device id {self.degraded_device!r}")
        if self.n_cycles < 1 or self.settle_cycles < 0 or self.n_over < 2:
            raise ConfigError("n_cycles >= 1, settle_cycles >= 0, n_over >= 2 required")


_SCENARIO_STR = {"degraded_device", "fidelity"}
_SCENARIO_INT = {"n_cycles", "settle_cycles", "n_over"}


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def dump_config(params: SystemParams, health: DeviceHealth | None = None,
                scenario: ScenarioConfig | None = None) -> str:
    """Serialize to INI text; floats use ``repr`` so parsing is bit-exact."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["system"] = {f.name: _fmt(getattr(params, f.name)) for f in fields(params)}
    if health is not None:
        section = {}
        for d in DEVICE_IDS:
            section[f"{d}_v_on0"] = _fmt(float(health[d].v_on0))
            section[f"{d}_r_on"] = _fmt(float(health[d].r_on))
        cp["health"] = section
    if scenario is not None:
        cp["scenario"] = {f.name: _fmt(getattr(scenario, f.name)) for f in fields(scenario)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_config(text: str) -> tuple[SystemParams, DeviceHealth, ScenarioConfig]:
    """Parse INI text. Missing sections/keys fall back to defaults; unknown keys raise."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown_sections = set(cp.sections()) - {"system", "health", "scenario"}
    if unknown_sections:
        raise ConfigError(f"unknown sections {sorted(unknown_sections)}")

    sys_kw = {}
    if cp.has_section("system"):
        names = {f.name for f in fields(SystemParams)}
        for key, raw in cp["system"].items():
            if key not in names:
                raise ConfigError(f"unknown key system.{key}")
            sys_kw[key] = _parse_float(f"system.{key}", raw)
    params = SystemParams(**sys_kw)

    health = default_health()
    if cp.has_section("health"):
        devices = dict(health.devices)
        uniform = {}
        per_device: dict[str, dict[str, float]] = {}
        for key, raw in cp["health"].items():
            value = _parse_float(f"health.{key}", raw)
            if key in ("v_on0", "r_on0"):
                uniform[key] = value
                continue
            dev, _, attr = key.partition("_")
            if dev not in DEVICE_IDS or attr not in ("v_on0", "r_on"):
                raise ConfigError(f"unknown key health.{key}")
            per_device.setdefault(dev, {})[attr] = value
        if uniform:
            base = DeviceModel(uniform.get("v_on0", 0.75), uniform.get("r_on0", 22.5e-3))
            devices = {d: base for d in DEVICE_IDS}
        for dev, attrs in per_device.items():
            old = devices[dev]
            devices[dev] = DeviceModel(attrs.get("v_on0", old.v_on0), attrs.get("r_on", old.r_on))
        health = DeviceHealth(devices)

    sc_kw = {}
    if cp.has_section("scenario"):
        names = {f.name for f in fields(ScenarioConfig)}
        for key, raw in cp["scenario"].items():
            if key not in names:
                raise ConfigError(f"unknown key scenario.{key}")
            if key in _SCENARIO_STR:
                sc_kw[key] = raw.strip()
            elif key in _SCENARIO_INT:
                try:
                    sc_kw[key] = int(raw)
                except ValueError:
                    raise ConfigError(f"scenario.{key} must be an integer") from None
            else:
                sc_kw[key] = _parse_float(f"scenario.{key}", raw)
    return params, health, ScenarioConfig(**sc_kw)


def _parse_float(name: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be numeric, got {raw!r}") from None


def load_config(path) -> tuple[SystemParams, DeviceHealth, ScenarioConfig]:
    return parse_config(Path(path).read_text())
