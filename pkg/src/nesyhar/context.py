"""Context aggregation: raw per-window signals to a discrete context state.

Raw context records carry provider-style measurements (GPS speed, barometric
pressure change, semantic place strings, transit-route proximity, weather).
:func:`aggregate_context` turns all records of one window into the predicates
of the window's :class:`~nesyhar.knowledge.ContextState`, emitting at most one
value per exclusive dimension and nothing when evidence is absent. Aggregation
uses order-free statistics only, so record order never matters.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .knowledge import ContextPredicate, ContextState, ContextVocabulary

log = logging.getLogger(__name__)

__all__ = ["RawContextRecord", "DiscretizationConfig", "aggregate_context",
           "SPEED", "LOCATION_TYPE", "SEMANTIC_PLACE", "TRANSPORT_ROUTE",
           "HEIGHT_VARIATION", "WEATHER"]

# Dimension names the aggregator knows how to populate.
SPEED = "speed"
LOCATION_TYPE = "location_type"
SEMANTIC_PLACE = "semantic_place"
TRANSPORT_ROUTE = "transport_route"
HEIGHT_VARIATION = "height_variation"
WEATHER = "weather"

SPEED_CLASSES = ("null", "low", "medium", "high")

_DEFAULT_PLACE_MAP = {
    "home": "home", "house": "home", "apartment": "home",
    "office": "office", "workplace": "office",
    "gym": "gym", "fitness center": "gym",
    "bar": "bar", "restaurant": "bar", "cafe": "bar",
    "park": "park", "public park": "park",
    "street": "street", "road": "street", "sidewalk": "street",
    "transit stop": "transit_stop", "bus stop": "transit_stop",
    "train station": "transit_stop",
}

_DEFAULT_PLACE_LOCATION = {
    "home": "indoor", "office": "indoor", "gym": "indoor", "bar": "indoor",
    "park": "outdoor", "street": "outdoor", "transit_stop": "outdoor",
}

_DEFAULT_WEATHER_MAP = {
    "clear": "sunny", "sunny": "sunny", "clouds": "cloudy", "cloudy": "cloudy",
    "rain": "rainy", "rainy": "rainy", "drizzle": "rainy",
    "snow": "snowy", "snowy": "snowy",
}


@dataclass(frozen=True)
class RawContextRecord:
    """One timestamped bundle of raw context signals; absent fields stay None."""

    timestamp: float
    speed: float | None = None
    pressure_delta: float | None = None
    semantic_place: str | None = None
    transport_route_nearby: bool | None = None
    weather: str | None = None
    extras: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class DiscretizationConfig:
    """Thresholds and provider-string mappings used by :func:`aggregate_context`.

    speed_thresholds are the null/low, low/medium and medium/high boundaries in
    m/s; height_epsilon is the barometric dead band in hPa below which a window
    counts as height_variation=null.
    """

    speed_thresholds: tuple[float, float, float] = (0.1, 2.0, 7.0)
    height_epsilon: float = 0.05
    place_map: Mapping[str, str] = field(default_factory=lambda: dict(_DEFAULT_PLACE_MAP))
    place_location: Mapping[str, str] = field(
        default_factory=lambda: dict(_DEFAULT_PLACE_LOCATION))
    weather_map: Mapping[str, str] = field(default_factory=lambda: dict(_DEFAULT_WEATHER_MAP))

    def __post_init__(self):
        t = tuple(self.speed_thresholds)
        if len(t) != 3 or not (t[0] < t[1] < t[2]):
            raise ValueError(f"speed thresholds must be strictly increasing, got {t}")
        if self.height_epsilon <= 0:
            raise ValueError("height_epsilon must be positive")

    def speed_class(self, speed: float) -> str:
        for boundary, name in zip(self.speed_thresholds, SPEED_CLASSES):
            if speed < boundary:
                return name
        return SPEED_CLASSES[-1]


def _mode(values: Sequence[str]) -> str:
    """Most frequent value; ties broken lexicographically for determinism."""
    counts = Counter(values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def aggregate_context(records: Sequence[RawContextRecord], cfg: DiscretizationConfig,
                      vocab: ContextVocabulary) -> ContextState:
    """Derive the discrete context state of one window from its raw records.

    Only dimensions declared in ``vocab`` are emitted. Provider strings without
    a mapping (or mapping to an undeclared value) are logged and skipped, never
    a hard failure.
    """
    preds: list[ContextPredicate] = []

    def emit(dimension: str, value: str) -> None:
        if not vocab.has_dimension(dimension):
            return
        pred = ContextPredicate(dimension, value)
        if pred not in vocab:
            log.warning("derived %s=%s is not in the context vocabulary; leaving "
                        "%s unobserved", dimension, value, dimension)
            return
        preds.append(pred)

    speeds = [r.speed for r in records if r.speed is not None]
    if speeds:
        emit(SPEED, cfg.speed_class(sum(speeds) / len(speeds)))

    deltas = [r.pressure_delta for r in records if r.pressure_delta is not None]
    if deltas:
        total = sum(deltas)
        if abs(total) <= cfg.height_epsilon:
            emit(HEIGHT_VARIATION, "null")
        else:
            # Barometric pressure drops as elevation rises.
            emit(HEIGHT_VARIATION, "positive" if total < 0 else "negative")

    raw_places = [r.semantic_place for r in records if r.semantic_place is not None]
    if raw_places:
        mapped = []
        for place in raw_places:
            value = cfg.place_map.get(place.strip().lower())
            if value is None:
                log.warning("unmapped semantic place %r; ignoring record", place)
            else:
                mapped.append(value)
        if mapped:
            place = _mode(mapped)
            emit(SEMANTIC_PLACE, place)
            location = cfg.place_location.get(place)
            if location is None:
                log.warning("no indoor/outdoor mapping for place %r", place)
            else:
                emit(LOCATION_TYPE, location)

    routes = [r.transport_route_nearby for r in records if r.transport_route_nearby is not None]
    if routes:
        emit(TRANSPORT_ROUTE, "true" if sum(routes) * 2 >= len(routes) else "false")

    raw_weather = [r.weather for r in records if r.weather is not None]
    if raw_weather:
        mapped = []
        for w in raw_weather:
            value = cfg.weather_map.get(w.strip().lower())
            if value is None:
                log.warning("unmapped weather string %r; ignoring record", w)
            else:
                mapped.append(value)
        if mapped:
            emit(WEATHER, _mode(mapped))

    state = ContextState(frozenset(preds))
    vocab.validate_state(state)
    return state
