"""Device and OS sensor-rate capabilities.

A :class:`DeviceProfile` records, for each zero-permission sensor, the rates
the OS is able to deliver, the rates behind the ``SENSOR_DELAY_*`` constants
and, on Android 12 and later, the cap applied to apps that do not hold the
high-sampling-rate permission.
"""

from __future__ import annotations

import configparser
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

__all__ = [
    "CustomRate",
    "DetectionThreshold",
    "DeviceProfile",
    "NamedConstant",
    "ProfileError",
    "RateRequest",
    "SensorCaps",
    "SensorKind",
    "builtin_profiles",
    "classify_rate",
    "dump_profile",
    "get_profile",
    "load_profile",
    "resolve_request",
    "synthesize_caps",
]

# Tolerance used when matching an observed rate to a named constant.
CLASSIFY_WINDOW_HZ = 1.0
DETECTION_MARGIN_HZ = 0.5
UNPERMITTED_CAP_HZ = 206.0
_SYNTHESIZED_RATES = (5.0, 15.0, 20.0, 52.0, 100.0, 206.0, 416.0)


class ProfileError(ValueError):
    """Raised for malformed profiles or lookups of unknown sensors/devices."""


class SensorKind(str, enum.Enum):
    ACCELEROMETER = "accelerometer"
    GYROSCOPE = "gyroscope"
    MAGNETOMETER = "magnetometer"

    @classmethod
    def parse(cls, value: "str | SensorKind") -> "SensorKind":
        if isinstance(value, SensorKind):
            return value
        key = str(value).strip().lower()
        aliases = {"accel": "accelerometer", "accl": "accelerometer", "gyro": "gyroscope",
                   "magn": "magnetometer", "mag": "magnetometer"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ProfileError(f"unknown sensor kind: {value!r}") from None


ALL_SENSORS = (SensorKind.ACCELEROMETER, SensorKind.GYROSCOPE, SensorKind.MAGNETOMETER)


class NamedConstant(str, enum.Enum):
    NORMAL = "NORMAL"
    UI = "UI"
    GAME = "GAME"
    FASTEST = "FASTEST"


_CONSTANT_ORDER = (NamedConstant.NORMAL, NamedConstant.UI, NamedConstant.GAME, NamedConstant.FASTEST)


@dataclass(frozen=True)
class CustomRate:
    """Classification result for a rate that matches no named constant."""

    hz: float

    @property
    def value(self) -> str:
        return "CUSTOM"

    def __str__(self) -> str:
        return f"Custom({self.hz:g})"


@dataclass(frozen=True)
class RateRequest:
    """A listener registration's rate: either a named constant or a custom Hz value."""

    constant: NamedConstant | None = None
    hz: float | None = None
    high_rate_permission: bool = False

    def __post_init__(self):
        if (self.constant is None) == (self.hz is None):
            raise ValueError("RateRequest needs exactly one of constant or hz")
        if self.hz is not None and not (self.hz > 0 and math.isfinite(self.hz)):
            raise ValueError(f"custom rate must be positive and finite, got {self.hz!r}")

    @classmethod
    def named(cls, constant: "NamedConstant | str", permission: bool = False) -> "RateRequest":
        return cls(constant=NamedConstant(str(getattr(constant, "value", constant)).upper()),
                   high_rate_permission=permission)

    @classmethod
    def custom(cls, hz: float, permission: bool = False) -> "RateRequest":
        return cls(hz=float(hz), high_rate_permission=permission)

    def __str__(self) -> str:
        base = self.constant.value if self.constant is not None else f"{self.hz:g}Hz"
        return base + ("+perm" if self.high_rate_permission else "")


@dataclass(frozen=True)
class SensorCaps:
    f_min: float
    f_max: float
    supported_rates: tuple[float, ...]
    constant_map: Mapping[NamedConstant, float]
    cap_unpermitted: float | None = None

    def __post_init__(self):
        rates = tuple(float(r) for r in self.supported_rates)
        object.__setattr__(self, "supported_rates", rates)
        object.__setattr__(self, "constant_map", dict(self.constant_map))
        if not rates or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ProfileError("supported_rates must be a non-empty strictly ascending set")
        if rates[0] <= 0:
            raise ProfileError("supported rates must be positive")
        if self.f_min != rates[0] or self.f_max != rates[-1]:
            raise ProfileError(
                f"f_min/f_max ({self.f_min}, {self.f_max}) disagree with supported_rates {rates}")
        if self.cap_unpermitted is not None:
            if self.cap_unpermitted > self.f_max or self.cap_unpermitted not in rates:
                raise ProfileError(f"cap {self.cap_unpermitted} must be a supported rate <= f_max")
        missing = [c for c in _CONSTANT_ORDER if c not in self.constant_map]
        if missing:
            raise ProfileError(f"constant_map lacks {[c.value for c in missing]}")
        values = [self.constant_map[c] for c in _CONSTANT_ORDER]
        if any(v not in rates for v in values):
            raise ProfileError(f"constant_map values {values} must be supported rates")
        if any(b < a for a, b in zip(values, values[1:])):
            raise ProfileError("constant_map must be monotone NORMAL <= UI <= GAME <= FASTEST")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    android_version: int
    sensors: Mapping[SensorKind, SensorCaps] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sensors", {SensorKind.parse(k): v for k, v in self.sensors.items()})

    def caps(self, sensor: "SensorKind | str") -> SensorCaps:
        kind = SensorKind.parse(sensor)
        try:
            return self.sensors[kind]
        except KeyError:
            raise ProfileError(f"profile {self.name!r} has no {kind.value}") from None

    def f_min(self, sensor: "SensorKind | str") -> float:
        return self.caps(sensor).f_min

    @property
    def slug(self) -> str:
        return _slug(self.name)

    def __hash__(self):
        return hash((self.name, self.android_version))


@dataclass(frozen=True)
class DetectionThreshold:
    """Per-sensor usage thresholds, always ``f_min + 0.5`` Hz."""

    f_min: Mapping[SensorKind, float]
    margin_hz: float = DETECTION_MARGIN_HZ

    def __post_init__(self):
        object.__setattr__(self, "f_min", {SensorKind.parse(k): float(v) for k, v in self.f_min.items()})

    @classmethod
    def from_profile(cls, profile: DeviceProfile) -> "DetectionThreshold":
        return cls({s: c.f_min for s, c in profile.sensors.items()})

    def threshold(self, sensor: "SensorKind | str") -> float:
        return self.f_min[SensorKind.parse(sensor)] + self.margin_hz

    @property
    def thresholds(self) -> dict[SensorKind, float]:
        return {s: f + self.margin_hz for s, f in self.f_min.items()}


def _snap(rates: tuple[float, ...], hz: float) -> float:
    for r in rates:
        if r >= hz:
            return r
    return rates[-1]


def resolve_request(profile: DeviceProfile, sensor: "SensorKind | str", req: RateRequest) -> float:
    """Return the rate the OS grants to a listener issuing ``req``."""
    caps = profile.caps(sensor)
    if req.constant is not None:
        granted = caps.constant_map[req.constant]
    else:
        granted = _snap(caps.supported_rates, req.hz)
    # cap is applied after the constant lookup
    if caps.cap_unpermitted is not None and not req.high_rate_permission:
        granted = min(granted, caps.cap_unpermitted)
    return granted


def classify_rate(profile: DeviceProfile, sensor: "SensorKind | str", observed: float,
                  window_hz: float = CLASSIFY_WINDOW_HZ) -> "NamedConstant | CustomRate":
    if not observed > 0:
        raise ValueError(f"observed rate must be positive, got {observed!r}")
    caps = profile.caps(sensor)
    best = None
    for const in _CONSTANT_ORDER:
        dist = abs(caps.constant_map[const] - observed)
        # several constants can share a rate on clipped sensors; keep the lowest
        if dist <= window_hz and (best is None or dist < best[0]):
            best = (dist, const)
    return best[1] if best is not None else CustomRate(float(observed))


def synthesize_caps(sensor: "SensorKind | str", f_min: float, android_version: int) -> SensorCaps:
    """Build capabilities from a measured minimum rate using the stock rate ladder."""
    kind = SensorKind.parse(sensor)
    f_max = 100.0 if kind is SensorKind.MAGNETOMETER else 416.0
    f_min = float(f_min)
    if not 0 < f_min <= f_max:
        raise ProfileError(f"f_min {f_min} outside (0, {f_max}]")
    rates = tuple(sorted({f_min, *(r for r in _SYNTHESIZED_RATES if f_min <= r <= f_max)}))
    constant_map = {
        NamedConstant.NORMAL: _snap(rates, 5.0),
        NamedConstant.UI: _snap(rates, 15.0),
        NamedConstant.GAME: _snap(rates, 52.0),
        NamedConstant.FASTEST: f_max,
    }
    cap = None
    if android_version >= 12 and kind is not SensorKind.MAGNETOMETER:
        cap = UNPERMITTED_CAP_HZ
    return SensorCaps(f_min=f_min, f_max=f_max, supported_rates=rates,
                      constant_map=constant_map, cap_unpermitted=cap)


_BUILTIN_TABLE = (
    # name, android version, f_min for accelerometer/gyroscope/magnetometer
    ("Google Pixel 3", 12, (5, 1, 1)),
    ("Google Pixel 5", 12, (5, 1, 1)),
    ("Google Pixel 6", 13, (7, 2, 1)),
    ("OnePlus Nord N200", 12, (5, 1, 1)),
    ("Samsung Galaxy S9", 10, (1, 1, 1)),
    ("Samsung Galaxy S20", 13, (1, 1, 1)),
)

_ALIASES = {
    "oneplus-a12": "OnePlus Nord N200",
    "a12": "OnePlus Nord N200",
    "galaxy-s9-a10": "Samsung Galaxy S9",
    "a10": "Samsung Galaxy S9",
}


def _slug(name: str) -> str:
    return "-".join(name.lower().split())


def _build(name: str, version: int, f_mins: Iterable[float]) -> DeviceProfile:
    return DeviceProfile(name, version, {
        s: synthesize_caps(s, f, version) for s, f in zip(ALL_SENSORS, f_mins)})


_BUILTINS = {_slug(name): _build(name, v, f) for name, v, f in _BUILTIN_TABLE}


def builtin_profiles() -> tuple[DeviceProfile, ...]:
    return tuple(_BUILTINS.values())


def get_profile(name: str) -> DeviceProfile:
    """Look up a built-in profile by display name, slug or alias."""
    key = _slug(name)
    key = _slug(_ALIASES.get(key, key))
    try:
        return _BUILTINS[key]
    except KeyError:
        raise ProfileError(f"no built-in profile named {name!r}; "
                           f"choose from {sorted(_BUILTINS) + sorted(_ALIASES)}") from None


# -- profile files ----------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:g}"


def dump_profile(profile: DeviceProfile) -> str:
    cp = configparser.ConfigParser()
    cp["device"] = {"name": profile.name, "android_version": str(profile.android_version)}
    for kind in ALL_SENSORS:
        if kind not in profile.sensors:
            continue
        c = profile.sensors[kind]
        section = {
            "f_min": _fmt(c.f_min),
            "f_max": _fmt(c.f_max),
            "supported_rates": ", ".join(_fmt(r) for r in c.supported_rates),
        }
        if c.cap_unpermitted is not None:
            section["cap_unpermitted"] = _fmt(c.cap_unpermitted)
        for const in _CONSTANT_ORDER:
            section[const.value.lower()] = _fmt(c.constant_map[const])
        cp[kind.value] = section
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_profile(text: str) -> DeviceProfile:
    """Parse a profile file.

    Sensor sections that carry only ``f_min`` (as written by the profiler) are
    completed with the stock rate ladder for the device's Android version.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ProfileError(f"unreadable profile: {exc}") from exc
    if "device" not in cp:
        raise ProfileError("profile lacks a [device] section")
    dev = cp["device"]
    try:
        name = dev["name"]
        version = int(dev["android_version"])
    except (KeyError, ValueError) as exc:
        raise ProfileError(f"bad [device] section: {exc}") from exc
    sensors = {}
    for section in cp.sections():
        if section == "device":
            continue
        kind = SensorKind.parse(section)
        sec = cp[section]
        try:
            f_min = float(sec["f_min"])
            if "supported_rates" not in sec:
                sensors[kind] = synthesize_caps(kind, f_min, version)
                continue
            rates = tuple(float(x) for x in sec["supported_rates"].split(","))
            constant_map = {c: float(sec[c.value.lower()]) for c in _CONSTANT_ORDER}
            cap = float(sec["cap_unpermitted"]) if "cap_unpermitted" in sec else None
            sensors[kind] = SensorCaps(f_min=f_min, f_max=float(sec.get("f_max", rates[-1])),
                                       supported_rates=rates, constant_map=constant_map,
                                       cap_unpermitted=cap)
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ProfileError):
                raise
            raise ProfileError(f"bad [{section}] section: {exc}") from exc
    if not sensors:
        raise ProfileError("profile defines no sensors")
    return DeviceProfile(name, version, sensors)
