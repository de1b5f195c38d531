"""Variant file export: four JSONL projections of the PairFlow stream.

Each file starts with a schema-version header line, then one JSON object per
flow. Values are verbatim copies of PairFlow fields (projection, never
recomputation). The HTTPS variant honors the opacity contract: no URL paths,
UA strings, status codes or content types.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .errors import UnknownVariant
from .records import PairFlow, pairflow_to_obj

VARIANTS = ("fqdn", "planes", "http", "https")

VARIANT_FILENAMES = {
    "fqdn": "fqdn.jsonl",
    "planes": "tcp-udp-icmp.jsonl",
    "http": "http.jsonl",
    "https": "https.jsonl",
}

SCHEMA_VERSION = 1

_PLAINTEXT_STATS = ("content_length_total", "content_length_max",
                    "content_length_min", "content_length_median")


def _identity(obj: dict) -> dict:
    return {
        "flow_id": obj["flow_id"],
        "capture": obj["capture"],
        "source": obj["source"],
        "destination": obj["destination"],
        "time_window": obj["time_window"],
        "label": obj["label"],
    }


def _project_fqdn(obj: dict) -> dict:
    out = _identity(obj)
    out["fqdns"] = obj["fqdns"]
    return out


def _project_planes(obj: dict) -> dict:
    out = _identity(obj)
    for plane in ("tcp_control_plane", "tcp_data_plane", "udp_plane", "icmp_plane"):
        out[plane] = obj[plane]
    stats = obj["stats"]
    out["stats"] = {k: stats[k] for k in
                    ("ttl_max", "ttl_min", "ttl_mean", "ttl_sd",
                     "delta_max", "delta_min", "delta_mean", "delta_sd",
                     "duration")}
    return out


def _project_http(obj: dict) -> dict:
    out = dict(obj)
    out.pop("tls_client")
    out.pop("tls_server")
    return out


def _project_https(obj: dict) -> dict:
    out = _identity(obj)
    out["epflag"] = obj["epflag"]
    out["epflag_bits"] = obj["epflag_bits"]
    out["fqdns"] = obj["fqdns"]
    out["tls_client"] = obj["tls_client"]
    out["tls_server"] = obj["tls_server"]
    out["tcp_control_plane"] = obj["tcp_control_plane"]
    out["udp_plane"] = obj["udp_plane"]
    out["icmp_plane"] = obj["icmp_plane"]
    # data points keep index/tag/time/length; request and response context is opaque
    out["tcp_data_plane"] = [[r[0], r[1], r[3], r[4]]
                             for r in obj["tcp_data_plane"]]
    out["stats"] = {k: v for k, v in obj["stats"].items()
                    if k not in _PLAINTEXT_STATS}
    return out


_PROJECTIONS = {
    "fqdn": _project_fqdn,
    "planes": _project_planes,
    "http": _project_http,
    "https": _project_https,
}


def project_variant(flow: PairFlow, variant: str) -> dict:
    if variant not in _PROJECTIONS:
        raise UnknownVariant(variant)
    return _PROJECTIONS[variant](pairflow_to_obj(flow))


def export_variant(flows: Iterable[PairFlow], variant: str, path: str | Path,
                   config_hash: str = "") -> int:
    """Write one variant file; returns the number of flow lines written."""
    if variant not in _PROJECTIONS:
        raise UnknownVariant(variant)
    count = 0
    with open(path, "w") as fh:
        header = {"schema": f"pairflow.variant.{variant}.v{SCHEMA_VERSION}",
                  "config_hash": config_hash}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for flow in flows:
            fh.write(json.dumps(project_variant(flow, variant),
                                sort_keys=True, separators=(",", ":")) + "\n")
            count += 1
    return count


def read_variant(path: str | Path) -> tuple[dict, list[dict]]:
    """Read any variant file back as (header, rows)."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    return header, rows


def read_http_variant(path: str | Path) -> list[PairFlow]:
    """Rebuild PairFlows from an http.jsonl file (TLS settings are not carried)."""
    from .records import pairflow_from_obj

    header, rows = read_variant(path)
    if "http" not in header.get("schema", ""):
        raise UnknownVariant(f"{path} is not an http variant file")
    flows = []
    for obj in rows:
        obj = dict(obj)
        obj.setdefault("tls_client", None)
        obj.setdefault("tls_server", None)
        flows.append(pairflow_from_obj(obj))
    return flows
