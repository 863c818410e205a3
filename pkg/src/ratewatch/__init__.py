"""Sensor sampling-rate arbitration simulator and zero-permission sensor usage detector."""

from .device import (
    CustomRate,
    DetectionThreshold,
    DeviceProfile,
    NamedConstant,
    ProfileError,
    RateRequest,
    SensorKind,
    builtin_profiles,
    classify_rate,
    get_profile,
    resolve_request,
)
from .detector import (
    OutlierCleaner,
    RateSeries,
    SensorEventTrace,
    UsageDetector,
    UsageInterval,
    UsageReport,
    clean_outliers,
    detect_all,
    detect_usage,
    instant_rates,
)
from .simulator import (
    AppState,
    Registration,
    Scenario,
    SimApp,
    arbitrate,
    simulate,
    standard_procedure_scenario,
)

__all__ = [
    "AppState",
    "CustomRate",
    "DetectionThreshold",
    "DeviceProfile",
    "NamedConstant",
    "OutlierCleaner",
    "ProfileError",
    "RateRequest",
    "RateSeries",
    "Registration",
    "Scenario",
    "SensorEventTrace",
    "SensorKind",
    "SimApp",
    "UsageDetector",
    "UsageInterval",
    "UsageReport",
    "arbitrate",
    "builtin_profiles",
    "classify_rate",
    "clean_outliers",
    "detect_all",
    "detect_usage",
    "get_profile",
    "instant_rates",
    "resolve_request",
    "simulate",
    "standard_procedure_scenario",
]

__version__ = "0.1.0"
