"""Declarative experiment description: protocol, network, faults, load.

Scenarios are human-editable YAML with five top-level keys (`protocol`,
`network`, `faults`, `load`, `horizon`) plus `seed` and `name`.  Parsing
validates structural constraints (n = 3f+1, availability requirement in
[f+1, 2f+1], fault budget within f, post-stabilization delays within the
network bound) and round-trips losslessly.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import yaml

from ..config import ConfigError, ProtocolConfig, Variant
from .faults import ADVERSARY_BEHAVIORS, Corruption, Crash, FaultPlan
from .network import DelayModel, DropWindow, Partition


class ScenarioError(ValueError):
    """A scenario file violates a structural constraint."""


@dataclass
class LoadSpec:
    rate: float = 0.0          # submissions per time unit per replica
    tx_size: int = 310


@dataclass
class Scenario:
    name: str
    protocol: ProtocolConfig
    network: dict               # validated raw network section
    faults: FaultPlan
    load: LoadSpec
    horizon: float
    seed: int
    raw: dict = field(repr=False, default_factory=dict)

    def with_overrides(self, seed: Optional[int] = None,
                       variant: Optional[str] = None) -> "Scenario":
        data = copy.deepcopy(self.raw)
        if seed is not None:
            data["seed"] = seed
        if variant is not None:
            data.setdefault("protocol", {})["variant"] = variant
        return scenario_from_dict(data)


_PROTOCOL_KEYS = {
    "variant", "n", "f", "availability", "sub_blocks", "delta", "epsilon",
    "min_batch_age", "batch_interval", "batch_capacity", "two_chain_commit",
    "crypto_scheme",
}


def _parse_protocol(section: dict) -> ProtocolConfig:
    unknown = set(section) - _PROTOCOL_KEYS
    if unknown:
        raise ScenarioError(f"unknown protocol keys: {sorted(unknown)}")
    section = dict(section)
    if "variant" in section:
        try:
            section["variant"] = Variant(section["variant"])
        except ValueError:
            raise ScenarioError(
                f"unknown variant {section['variant']!r}; expected one of "
                f"{[v.value for v in Variant]}") from None
    n = section.get("n", 4)
    section.setdefault("f", (n - 1) // 3)
    section.setdefault("availability", section["f"] + 1)
    try:
        return ProtocolConfig(**section)
    except ConfigError as exc:
        raise ScenarioError(str(exc)) from None


def _parse_delay(section: dict, n: int) -> DelayModel:
    kind = section.get("kind", "fixed")
    if kind == "fixed":
        return DelayModel("fixed", value=float(section.get("delta_msg", 1.0)))
    if kind == "uniform":
        lo = float(section.get("lo", 0.0))
        hi = float(section.get("hi", 1.0))
        if lo < 0 or hi < lo:
            raise ScenarioError("uniform delay needs 0 <= lo <= hi")
        return DelayModel("uniform", lo=lo, hi=hi)
    if kind == "matrix":
        regions = section.get("regions")
        matrix = section.get("matrix")
        if not regions or not matrix or len(regions) != n:
            raise ScenarioError("matrix delay needs `regions` (one per replica) "
                                "and a square `matrix`")
        return DelayModel("matrix", matrix=[[float(x) for x in row] for row in matrix],
                          regions=list(regions))
    raise ScenarioError(f"unknown delay kind {kind!r}")


def _parse_network(section: dict, config: ProtocolConfig) -> dict:
    section = dict(section)
    base = _parse_delay(section, config.n)
    channels = {}
    for channel in ("consensus", "data", "qs-control"):
        override = section.get("channels", {}).get(channel)
        channels[channel] = (_parse_delay(override, config.n)
                             if override else base)
        if channels[channel].max_delay() > config.delta + 1e-12:
            raise ScenarioError(
                f"{channel} delay bound {channels[channel].max_delay()} exceeds "
                f"the synchrony bound delta={config.delta}")
    bandwidth = {k: float(v) for k, v in section.get("bandwidth", {}).items()}
    for channel in bandwidth:
        if channel not in ("consensus", "data", "qs-control"):
            raise ScenarioError(f"bandwidth names unknown channel {channel!r}")
    pre = section.get("pre_gst", {})
    cost = float(section.get("processing_cost", 0.0))
    if cost < 0:
        raise ScenarioError("processing_cost must be >= 0")
    skew = section.get("timer_skew")
    if skew is not None:
        skew = [float(s) for s in skew]
        if len(skew) != config.n or any(s <= 0 for s in skew):
            raise ScenarioError("timer_skew needs one positive factor per replica")
    return {
        "timer_skew": skew,
        "delays": channels,
        "gst": float(section.get("gst", 0.0)),
        "pre_gst_max_delay": float(pre.get("max_delay", 0.0)),
        "pre_gst_drop": float(pre.get("drop_rate", 0.0)),
        "bandwidth": bandwidth,
        "processing_cost": cost,
    }


def _parse_faults(entries, config: ProtocolConfig) -> FaultPlan:
    crashes, corruptions, drops, partitions = [], [], [], []
    for entry in entries or ():
        kind = entry.get("kind")
        if kind == "crash":
            crashes.append(Crash(int(entry["replica"]), float(entry.get("at", 0.0))))
        elif kind == "byzantine":
            behavior = entry.get("behavior")
            if behavior not in ADVERSARY_BEHAVIORS:
                raise ScenarioError(f"unknown adversary behavior {behavior!r}")
            corruptions.append(Corruption(
                int(entry["replica"]), behavior, float(entry.get("at", 0.0)),
                dict(entry.get("params", {}))))
        elif kind == "drop":
            replicas = entry.get("replicas", "all")
            members = None if replicas == "all" else frozenset(int(r) for r in replicas)
            rate = float(entry["rate"])
            if not (0.0 <= rate <= 1.0):
                raise ScenarioError(f"drop rate {rate} outside [0, 1]")
            drops.append(DropWindow(members, rate,
                                    float(entry.get("from", 0.0)),
                                    float(entry.get("until", float("inf")))))
        elif kind == "partition":
            groups = [frozenset(int(r) for r in group)
                      for group in entry["groups"]]
            partitions.append(Partition(groups,
                                        float(entry.get("from", 0.0)),
                                        float(entry.get("until", float("inf")))))
        else:
            raise ScenarioError(f"unknown fault kind {kind!r}")
    plan = FaultPlan(tuple(crashes), tuple(corruptions), tuple(drops),
                     tuple(partitions))
    try:
        plan.validate(config.n, config.f)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    return plan


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario root must be a mapping")
    unknown = set(data) - {"name", "protocol", "network", "faults", "load",
                           "horizon", "seed"}
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    config = _parse_protocol(data.get("protocol", {}))
    network = _parse_network(data.get("network", {}), config)
    faults = _parse_faults(data.get("faults"), config)
    load_section = data.get("load", {})
    load = LoadSpec(rate=float(load_section.get("rate", 0.0)),
                    tx_size=int(load_section.get("tx_size", 310)))
    horizon = float(data.get("horizon", 100.0))
    if horizon <= 0:
        raise ScenarioError("horizon must be positive")
    return Scenario(
        name=str(data.get("name", "unnamed")),
        protocol=config,
        network=network,
        faults=faults,
        load=load,
        horizon=horizon,
        seed=int(data.get("seed", 0)),
        raw=copy.deepcopy(data),
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return scenario_from_dict(data)


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.raw, sort_keys=True)
