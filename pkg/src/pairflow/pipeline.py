"""Pipeline wiring: capture files -> PairFlows -> features.csv, fused or via files.

The fused in-memory path and the file path (compile writing http.jsonl,
featurize reading it back) produce identical features by construction; the
composability test pins that.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .features import (FeatureVector, N_FEATURES, UaStats, destination_features,
                       flow_features, host_features, merge_profile_slots,
                       primary_url_key, url_features)
from .flows import assign_flow_id, attach_dns, encapsulate, hygiene_filter, track_pairs
from .ingest import CaptureDecoder, window_buffer
from .profiles import pivot_profiles
from .records import CaptureLabel, ClassLabel, PairFlow
from .summary import SummaryRegistry, upsert_summary

FEATURES_SCHEMA = "pairflow.features.v1"


@dataclass
class PipelineConfig:
    window_t: float = 600.0
    recompute_t: float = 900.0
    sma_rate: float = 1.0
    sma_k: Optional[int] = None
    mode: str = "http"
    task: str = "malicious"
    seed: int = 0
    whois_ages_path: Optional[str] = None
    registry_dir: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.recompute_t <= self.window_t:
            raise ValueError("profile recompute interval must exceed the window size")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_whois_ages(path: Optional[str]) -> Optional[dict[str, float]]:
    if not path:
        return None
    with open(path) as fh:
        return {str(k): float(v) for k, v in json.load(fh).items()}


@dataclass
class CompileResult:
    flows: list[PairFlow]
    removed: dict[str, int]
    window_counts: dict[tuple[str, int], int] = field(default_factory=dict)
    decode_reports: dict[str, dict] = field(default_factory=dict)


def compile_captures(paths: list[str | Path], config: PipelineConfig,
                     labels: Optional[dict[str, str]] = None,
                     registry: Optional[SummaryRegistry] = None) -> CompileResult:
    """ingest -> track -> attach -> assign -> encapsulate -> hygiene."""
    registry = registry if registry is not None else SummaryRegistry()
    whois = load_whois_ages(config.whois_ages_path)
    labels = labels or {}
    flows: list[PairFlow] = []
    window_counts: dict[tuple[str, int], int] = {}
    reports: dict[str, dict] = {}
    for path in sorted(str(p) for p in paths):
        stem = Path(path).stem
        label = ClassLabel(labels.get(stem, "unlabeled"))
        decoder = CaptureDecoder(path, CaptureLabel(stem, label))
        for batch in window_buffer(iter(decoder), config.window_t):
            if not batch.packets:
                continue
            pairs, dns_pool = track_pairs(batch, stem)
            pairs = attach_dns(pairs, dns_pool)
            count = 0
            for pair, packets in pairs.items():
                flow_id = assign_flow_id(pair, registry)
                flow = encapsulate(flow_id, pair, packets,
                                   (batch.start, batch.end), whois)
                flow.label = label
                flows.append(flow)
                count += 1
            window_counts[(stem, batch.window_index)] = count
        reports[stem] = {
            "records": decoder.report.n_records,
            "packets": decoder.report.n_packets,
            "skipped_non_ip": decoder.report.n_skipped_non_ip,
            "failed": decoder.report.n_failed,
        }
    kept, removed = hygiene_filter(flows)
    return CompileResult(flows=kept, removed=removed,
                         window_counts=window_counts, decode_reports=reports)


def _interval_key(flow: PairFlow, recompute_t: float) -> int:
    return int(math.floor(flow.time_window[0] / recompute_t))


def featurize_flows(flows: list[PairFlow], config: PipelineConfig,
                    registry: Optional[SummaryRegistry] = None) -> SummaryRegistry:
    """Per-flow vectors upsert summaries; profile slots refresh per recompute interval."""
    registry = registry if registry is not None else SummaryRegistry()
    intervals: dict[int, list[PairFlow]] = {}
    for flow in flows:
        intervals.setdefault(_interval_key(flow, config.recompute_t), []).append(flow)
    for key in sorted(intervals):
        batch = intervals[key]
        for flow in batch:
            vec = flow_features(flow, config.sma_rate, config.sma_k)
            upsert_summary(vec, flow, registry)
        hosts, dests, urls = pivot_profiles(batch)
        enterprise = UaStats.from_hosts(hosts.values())
        host_vecs = {k: host_features(p, enterprise) for k, p in hosts.items()}
        dest_vecs = {k: destination_features(p) for k, p in dests.items()}
        url_vecs = {k: url_features(p) for k, p in urls.items()}
        pair_key_flow: dict[int, PairFlow] = {}
        for flow in batch:
            pair_key_flow.setdefault(flow.flow_id.cs_id, flow)
            if not flow.urls and not flow.fqdns:
                continue
            # prefer a flow that names the URL-profile key
            if not pair_key_flow[flow.flow_id.cs_id].urls and flow.urls:
                pair_key_flow[flow.flow_id.cs_id] = flow
        for cs_id in sorted(pair_key_flow):
            flow = pair_key_flow[cs_id]
            merged = FeatureVector.empty()
            merge_profile_slots(merged, host_vecs[flow.pair.host_key],
                                dest_vecs[flow.pair.destination],
                                url_vecs[primary_url_key(flow)])
            registry.refresh_profile_slots(cs_id, merged)
    return registry


def write_features_csv(registry: SummaryRegistry, path: str | Path,
                       config_hash: str = "") -> int:
    """One row per ContextualSummary; unmasked slot values, identity up front."""
    rows = registry.summaries()
    with open(path, "w") as fh:
        fh.write(f"# {FEATURES_SCHEMA} config_hash={config_hash}\n")
        header = ["cs_id", "capture", "source", "destination", "label", "fqdns"]
        header += [f"f{fid}" for fid in range(1, N_FEATURES + 1)]
        fh.write(",".join(header) + "\n")
        for s in rows:
            cells = [str(s.cs_id), s.pair.capture_name, s.pair.source,
                     s.pair.destination, s.label.value,
                     "|".join(sorted(s.fqdn_store))]
            cells += [repr(float(v)) for v in s.features.values]
            fh.write(",".join(cells) + "\n")
    return len(rows)


@dataclass
class FeatureTable:
    meta: list[dict]
    X: np.ndarray
    labels: list[str]
    groups: list[tuple[str, str]]
    config_hash: str = ""

    def task_rows(self, task: str) -> tuple[np.ndarray, list[str], list[tuple[str, str]]]:
        """Project to a binary task: apt, botnet, or malicious vs legitimate."""
        keep, y = [], []
        for i, label in enumerate(self.labels):
            if task == "apt" and label in ("apt", "legitimate"):
                keep.append(i)
                y.append(label)
            elif task == "botnet" and label in ("botnet", "legitimate"):
                keep.append(i)
                y.append(label)
            elif task == "malicious":
                keep.append(i)
                y.append("malicious" if label in ("apt", "botnet") else label)
            elif task == "multiclass":
                keep.append(i)
                y.append(label)
        idx = np.array(keep, dtype=int)
        return self.X[idx], y, [self.groups[i] for i in keep]


def load_features_csv(path: str | Path) -> FeatureTable:
    meta: list[dict] = []
    values: list[list[float]] = []
    labels: list[str] = []
    groups: list[tuple[str, str]] = []
    config_hash = ""
    with open(path) as fh:
        first = fh.readline().strip()
        if first.startswith("#"):
            for token in first.split():
                if token.startswith("config_hash="):
                    config_hash = token.split("=", 1)[1]
            header = fh.readline().strip().split(",")
        else:
            header = first.split(",")
        n_meta = len(header) - N_FEATURES
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            row_meta = dict(zip(header[:n_meta], cells[:n_meta]))
            meta.append(row_meta)
            values.append([float(v) for v in cells[n_meta:]])
            labels.append(row_meta["label"])
            groups.append((f"{row_meta['capture']}!{row_meta['source']}",
                           row_meta["destination"]))
    X = np.array(values, dtype=float) if values else np.zeros((0, N_FEATURES))
    return FeatureTable(meta=meta, X=X, labels=labels, groups=groups,
                        config_hash=config_hash)


def run_fused(paths: list[str | Path], config: PipelineConfig,
              labels: Optional[dict[str, str]] = None,
              ) -> tuple[CompileResult, SummaryRegistry]:
    """compile + featurize without the serialization round trip."""
    registry = SummaryRegistry(config.registry_dir) if config.registry_dir \
        else SummaryRegistry()
    compiled = compile_captures(paths, config, labels, registry)
    featurize_flows(compiled.flows, config, registry)
    return compiled, registry
