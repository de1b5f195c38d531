"""Long-lived state: flow-id registry, ContextualSummaries, update rules, blacklist.

Numeric flow slots fold with a weighted average (so the fold equals the plain
mean of per-window values), protocol flags fold with set union, UA strings are
stored raw so distinct-UA statistics recount exactly. Profile slots are only
ever overwritten at recompute boundaries, never averaged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .features import FLOW_SLOTS, FeatureVector, N_FEATURES
from .records import ClassLabel, FlowId, PairFlow, PairKey

BLOCKED = "BLOCKED"
PASS = "PASS"


def update_numeric(old: float, n_prev: int, incoming: float) -> float:
    """Weighted average absorbing one more window; n_prev is the prior flow count."""
    return (old * n_prev + incoming) / (n_prev + 1)


def update_flags(old: set[str], incoming: set[str]) -> set[str]:
    return old | incoming


def update_ua_store(store: set[str], incoming: Iterable[str]) -> set[str]:
    return store | set(incoming)


@dataclass
class ContextualSummary:
    cs_id: int
    pair: PairKey
    window_span: tuple[float, float]
    last_pf_id: int
    features: FeatureVector
    epflag_union: set[str] = field(default_factory=set)
    ua_store: set[str] = field(default_factory=set)
    fqdn_store: set[str] = field(default_factory=set)
    label: ClassLabel = ClassLabel.UNLABELED

    def to_obj(self) -> dict:
        return {
            "cs_id": self.cs_id,
            "capture": self.pair.capture_name,
            "source": self.pair.source,
            "destination": self.pair.destination,
            "window_span": list(self.window_span),
            "last_pf_id": self.last_pf_id,
            "values": [float(v) for v in self.features.values],
            "present": [bool(b) for b in self.features.present],
            "epflag": sorted(self.epflag_union),
            "ua_store": sorted(self.ua_store),
            "fqdn_store": sorted(self.fqdn_store),
            "label": self.label.value,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "ContextualSummary":
        vec = FeatureVector(values=np.array(obj["values"], dtype=float),
                            present=np.array(obj["present"], dtype=bool))
        return cls(
            cs_id=obj["cs_id"],
            pair=PairKey(obj["capture"], obj["source"], obj["destination"]),
            window_span=tuple(obj["window_span"]),
            last_pf_id=obj["last_pf_id"],
            features=vec,
            epflag_union=set(obj["epflag"]),
            ua_store=set(obj["ua_store"]),
            fqdn_store=set(obj["fqdn_store"]),
            label=ClassLabel(obj.get("label", "unlabeled")),
        )


class SummaryRegistry:
    """Pair bookkeeping: cs_id assignment, pf_id sequencing, summary storage.

    Persistence is an append-only JSONL log of summary states plus a compacted
    snapshot; replaying the log after the snapshot restores the newest state,
    so cs_id assignments survive a crash.
    """

    SCHEMA = "pairflow.registry.v1"

    def __init__(self, directory: Optional[str | Path] = None):
        self._pairs: dict[PairKey, tuple[int, int]] = {}  # pair -> (cs_id, last_pf)
        self._summaries: dict[int, ContextualSummary] = {}
        self._next_cs = 0
        self.directory = Path(directory) if directory else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._load()

    # -- flow id assignment -------------------------------------------------
    def assign(self, pair: PairKey) -> FlowId:
        if pair in self._pairs:
            cs_id, last_pf = self._pairs[pair]
            self._pairs[pair] = (cs_id, last_pf + 1)
            return FlowId(cs_id, last_pf + 1)
        cs_id = self._next_cs
        self._next_cs += 1
        self._pairs[pair] = (cs_id, 0)
        return FlowId(cs_id, 0)

    def get(self, pair: PairKey) -> Optional[ContextualSummary]:
        entry = self._pairs.get(pair)
        if entry is None:
            return None
        return self._summaries.get(entry[0])

    def summaries(self) -> list[ContextualSummary]:
        return [self._summaries[cs] for cs in sorted(self._summaries)]

    # -- summary updates ----------------------------------------------------
    def upsert(self, flow_vec: FeatureVector, flow: PairFlow) -> ContextualSummary:
        cs_id = flow.flow_id.cs_id
        if cs_id not in self._summaries:
            summary = ContextualSummary(
                cs_id=cs_id,
                pair=flow.pair,
                window_span=tuple(flow.time_window),
                last_pf_id=flow.flow_id.pf_id,
                features=flow_vec.copy(),
                epflag_union=set(flow.epflag),
                ua_store=set(flow.user_agents),
                fqdn_store={name for name, _a, _ns, _age in flow.fqdns},
                label=flow.label,
            )
            self._summaries[cs_id] = summary
            if flow.pair not in self._pairs:
                self._pairs[flow.pair] = (cs_id, flow.flow_id.pf_id)
                self._next_cs = max(self._next_cs, cs_id + 1)
            self._log(summary)
            return summary
        summary = self._summaries[cs_id]
        n_prev = summary.last_pf_id + 1
        for fid in sorted(FLOW_SLOTS):
            old = summary.features.values[fid - 1]
            incoming = flow_vec.values[fid - 1]
            summary.features.values[fid - 1] = update_numeric(old, n_prev, incoming)
            summary.features.present[fid - 1] |= flow_vec.present[fid - 1]
        summary.epflag_union = update_flags(summary.epflag_union, flow.epflag)
        summary.ua_store = update_ua_store(summary.ua_store, flow.user_agents)
        summary.fqdn_store |= {name for name, _a, _ns, _age in flow.fqdns}
        summary.window_span = (min(summary.window_span[0], flow.time_window[0]),
                               max(summary.window_span[1], flow.time_window[1]))
        summary.last_pf_id = flow.flow_id.pf_id
        if flow.label is not ClassLabel.UNLABELED:
            summary.label = flow.label
        cur = self._pairs.get(flow.pair, (cs_id, -1))
        self._pairs[flow.pair] = (cs_id, max(cur[1], flow.flow_id.pf_id))
        self._log(summary)
        return summary

    def refresh_profile_slots(self, cs_id: int, merged: FeatureVector) -> None:
        """Overwrite slots 51-102 from a recompute; flow slots are untouched."""
        summary = self._summaries[cs_id]
        for fid in range(51, N_FEATURES + 1):
            summary.features.values[fid - 1] = merged.values[fid - 1]
            summary.features.present[fid - 1] = merged.present[fid - 1]
        self._log(summary)

    # -- persistence ----------------------------------------------------------
    def _snapshot_path(self) -> Path:
        return self.directory / "snapshot.json"

    def _log_path(self) -> Path:
        return self.directory / "log.jsonl"

    def _log(self, summary: ContextualSummary) -> None:
        if self.directory is None:
            return
        with open(self._log_path(), "a") as fh:
            fh.write(json.dumps(summary.to_obj(), sort_keys=True,
                                separators=(",", ":")) + "\n")

    def _install(self, summary: ContextualSummary) -> None:
        self._summaries[summary.cs_id] = summary
        self._pairs[summary.pair] = (summary.cs_id, summary.last_pf_id)
        self._next_cs = max(self._next_cs, summary.cs_id + 1)

    def _load(self) -> None:
        snap = self._snapshot_path()
        if snap.exists():
            with open(snap) as fh:
                obj = json.load(fh)
            for row in obj.get("summaries", []):
                self._install(ContextualSummary.from_obj(row))
            self._next_cs = max(self._next_cs, obj.get("next_cs_id", 0))
        log = self._log_path()
        if log.exists():
            with open(log) as fh:
                for line in fh:
                    if line.strip():
                        self._install(ContextualSummary.from_obj(json.loads(line)))

    def compact(self) -> None:
        """Write the snapshot and truncate the log."""
        if self.directory is None:
            return
        obj = {"schema": self.SCHEMA, "next_cs_id": self._next_cs,
               "summaries": [s.to_obj() for s in self.summaries()]}
        with open(self._snapshot_path(), "w") as fh:
            json.dump(obj, fh, sort_keys=True)
        with open(self._log_path(), "w") as fh:
            fh.write("")


@dataclass
class Blacklist:
    ips: set[str] = field(default_factory=set)
    fqdns: set[str] = field(default_factory=set)
    provenance: dict[str, tuple[int, float]] = field(default_factory=dict)

    def add(self, indicator: str, kind: str, cs_id: int = -1,
            detected_at: float = 0.0) -> None:
        if kind == "ip":
            self.ips.add(indicator)
        elif kind == "fqdn":
            self.fqdns.add(indicator)
        else:
            raise ValueError(f"unknown indicator kind {kind!r}")
        self.provenance[f"{kind}:{indicator}"] = (cs_id, detected_at)

    def check(self, destination: str, fqdns: Iterable[str]) -> str:
        if destination in self.ips:
            return BLOCKED
        if any(f in self.fqdns for f in fqdns):
            return BLOCKED
        return PASS

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for ip in sorted(self.ips):
                fh.write(f"ip:{ip}\n")
            for fqdn in sorted(self.fqdns):
                fh.write(f"fqdn:{fqdn}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Blacklist":
        bl = cls()
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                kind, _, value = line.partition(":")
                if kind in ("ip", "fqdn") and value:
                    bl.add(value, kind)
        return bl


def upsert_summary(flow_vec: FeatureVector, flow: PairFlow,
                   registry: SummaryRegistry) -> ContextualSummary:
    """Create or update the ContextualSummary matching this flow's pair."""
    return registry.upsert(flow_vec, flow)


def blacklist_check(flow: PairFlow, bl: Blacklist) -> str:
    """BLOCKED if the destination IP or any flow FQDN is listed, else PASS."""
    return bl.check(flow.pair.destination, (name for name, _a, _ns, _age in flow.fqdns))
