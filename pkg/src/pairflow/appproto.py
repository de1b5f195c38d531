"""Application-layer wire formats: HTTP sniffing, DNS and TLS parse/build.

Detection is content-based, not port-based, since command-and-control traffic
routinely camouflages on nonstandard ports. Builders exist so the synthetic
corpus generator emits bytes this same module can decode back.
"""

from __future__ import annotations

import struct
from typing import Optional

from .records import ApplicationMeta, AppKind, TlsMeta

HTTP_METHODS = (b"GET", b"POST", b"PUT", b"DELETE", b"HEAD", b"OPTIONS", b"PATCH")

DNS_TYPE_NAMES = {1: "A", 2: "NS", 5: "CNAME", 28: "AAAA"}
DNS_TYPE_CODES = {v: k for k, v in DNS_TYPE_NAMES.items()}

TLS_EXT_NAMES = {
    0x0000: "server_name",
    0x000A: "supported_groups",
    0x000B: "ec_point_formats",
    0x000D: "signature_algorithms",
    0x0010: "alpn",
    0x0017: "extended_master_secret",
    0x0023: "session_ticket",
}


# ---------------------------------------------------------------------------
# HTTP

def parse_http(payload: bytes) -> Optional[ApplicationMeta]:
    """Recognize an HTTP/1.x request or response at the start of a TCP payload."""
    if payload.startswith(b"HTTP/1."):
        return _parse_http_response(payload)
    for method in HTTP_METHODS:
        if payload.startswith(method + b" "):
            return _parse_http_request(payload)
    return None


def _split_headers(payload: bytes) -> tuple[list[bytes], dict[str, str]]:
    head = payload.split(b"\r\n\r\n", 1)[0]
    lines = head.split(b"\r\n")
    headers = {}
    for line in lines[1:]:
        if b":" not in line:
            continue
        name, _, value = line.partition(b":")
        headers[name.strip().lower().decode("latin-1")] = value.strip().decode("latin-1")
    return lines, headers


def _parse_http_request(payload: bytes) -> Optional[ApplicationMeta]:
    lines, headers = _split_headers(payload)
    parts = lines[0].split(b" ")
    if len(parts) < 3 or not parts[2].startswith(b"HTTP/"):
        return None
    method = parts[0].decode("latin-1")
    path = parts[1].decode("latin-1", errors="replace")
    host = headers.get("host", "")
    url = host + path if host else path
    meta = ApplicationMeta(
        kind=AppKind.HTTP_REQUEST,
        http_method=method,
        url=url,
        user_agent=headers.get("user-agent"),
        server_name=host or None,
        content_type=headers.get("content-type"),
    )
    if "content-length" in headers:
        try:
            meta.content_length = int(headers["content-length"])
        except ValueError:
            pass
    return meta


def _parse_http_response(payload: bytes) -> Optional[ApplicationMeta]:
    lines, headers = _split_headers(payload)
    parts = lines[0].split(b" ")
    if len(parts) < 2:
        return None
    try:
        status = int(parts[1])
    except ValueError:
        return None
    meta = ApplicationMeta(
        kind=AppKind.HTTP_RESPONSE,
        http_status=status,
        content_type=headers.get("content-type"),
        server_name=headers.get("server"),
    )
    if "content-length" in headers:
        try:
            meta.content_length = int(headers["content-length"])
        except ValueError:
            pass
    return meta


def build_http_request(method: str, host: str, path: str, user_agent: str,
                       content_type: Optional[str] = None, body: bytes = b"") -> bytes:
    lines = [f"{method} {path} HTTP/1.1", f"Host: {host}", f"User-Agent: {user_agent}"]
    if content_type:
        lines.append(f"Content-Type: {content_type}")
    if body:
        lines.append(f"Content-Length: {len(body)}")
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + body


def build_http_response(status: int, content_type: Optional[str],
                        content_length: Optional[int] = None,
                        server: Optional[str] = None, body: bytes = b"") -> bytes:
    reason = {200: "OK", 301: "Moved Permanently", 302: "Found", 404: "Not Found",
              403: "Forbidden", 500: "Internal Server Error", 503: "Service Unavailable",
              304: "Not Modified"}.get(status, "Status")
    lines = [f"HTTP/1.1 {status} {reason}"]
    if server:
        lines.append(f"Server: {server}")
    if content_type:
        lines.append(f"Content-Type: {content_type}")
    if content_length is not None:
        lines.append(f"Content-Length: {content_length}")
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + body


# ---------------------------------------------------------------------------
# DNS

def _encode_name(name: str) -> bytes:
    out = b""
    for label in name.rstrip(".").split("."):
        raw = label.encode("idna") if label else b""
        out += bytes([len(raw)]) + raw
    return out + b"\x00"


def _decode_name(data: bytes, offset: int, depth: int = 0) -> tuple[str, int]:
    if depth > 8:
        raise ValueError("dns name pointer loop")
    labels = []
    while True:
        if offset >= len(data):
            raise ValueError("dns name runs past packet")
        length = data[offset]
        if length == 0:
            offset += 1
            break
        if length & 0xC0 == 0xC0:
            if offset + 1 >= len(data):
                raise ValueError("dns pointer truncated")
            ptr = ((length & 0x3F) << 8) | data[offset + 1]
            if ptr >= offset:
                raise ValueError("dns forward pointer")
            tail, _ = _decode_name(data, ptr, depth + 1)
            labels.append(tail)
            offset += 2
            return ".".join(labels), offset
        if length > 63:
            raise ValueError("dns label too long")
        offset += 1
        label = data[offset:offset + length]
        if len(label) < length:
            raise ValueError("dns label truncated")
        labels.append(label.decode("ascii", errors="strict"))
        offset += length
    return ".".join(labels), offset


def parse_dns(payload: bytes) -> Optional[ApplicationMeta]:
    """Strictly parse a DNS message; returns None on anything malformed."""
    if len(payload) < 12:
        return None
    try:
        txid, flags, qd, an, ns, ar = struct.unpack(">HHHHHH", payload[:12])
    except struct.error:
        return None
    if qd == 0 or qd > 8 or an > 64 or ns > 64 or ar > 64:
        return None
    try:
        offset = 12
        qname = None
        for _ in range(qd):
            name, offset = _decode_name(payload, offset)
            offset += 4  # qtype + qclass
            if qname is None:
                qname = name
        answers: list[tuple[str, str]] = []
        for _ in range(an + ns):
            name, offset = _decode_name(payload, offset)
            if offset + 10 > len(payload):
                raise ValueError("rr header truncated")
            rtype, rclass, ttl, rdlen = struct.unpack(">HHIH", payload[offset:offset + 10])
            offset += 10
            rdata = payload[offset:offset + rdlen]
            if len(rdata) < rdlen:
                raise ValueError("rdata truncated")
            offset += rdlen
            tname = DNS_TYPE_NAMES.get(rtype)
            if tname == "A" and rdlen == 4:
                answers.append(("A", ".".join(str(b) for b in rdata)))
            elif tname == "AAAA" and rdlen == 16:
                answers.append(("AAAA", rdata.hex()))
            elif tname in ("NS", "CNAME"):
                value, _ = _decode_name(payload, offset - rdlen)
                answers.append((tname, value))
    except (ValueError, UnicodeDecodeError):
        return None
    is_response = bool(flags & 0x8000)
    return ApplicationMeta(
        kind=AppKind.DNS_RESPONSE if is_response else AppKind.DNS_REQUEST,
        dns_qname=qname,
        dns_answers=answers if is_response else [],
    )


def build_dns_request(txid: int, qname: str) -> bytes:
    header = struct.pack(">HHHHHH", txid, 0x0100, 1, 0, 0, 0)
    return header + _encode_name(qname) + struct.pack(">HH", 1, 1)


def build_dns_response(txid: int, qname: str,
                       a_records: list[str], ns_records: list[str] = ()) -> bytes:
    header = struct.pack(">HHHHHH", txid, 0x8180, 1, len(a_records), len(ns_records), 0)
    out = header + _encode_name(qname) + struct.pack(">HH", 1, 1)
    qbytes = _encode_name(qname)
    for ip in a_records:
        rdata = bytes(int(p) for p in ip.split("."))
        out += qbytes + struct.pack(">HHIH", 1, 1, 300, 4) + rdata
    for ns in ns_records:
        rdata = _encode_name(ns)
        out += qbytes + struct.pack(">HHIH", 2, 1, 300, len(rdata)) + rdata
    return out


# ---------------------------------------------------------------------------
# TLS

def looks_like_tls(payload: bytes) -> bool:
    if len(payload) < 5:
        return False
    ctype, major, minor, rlen = payload[0], payload[1], payload[2], \
        struct.unpack(">H", payload[3:5])[0]
    if ctype not in (20, 21, 22, 23):
        return False
    if major != 3 or minor > 4:
        return False
    return rlen <= len(payload) - 5 or rlen <= 16384


def parse_tls(payload: bytes) -> Optional[ApplicationMeta]:
    """Classify a TLS record and extract handshake settings when present."""
    if not looks_like_tls(payload):
        return None
    ctype, minor = payload[0], payload[2]
    legacy = minor == 0  # record-layer SSLv3 and below
    if ctype != 22:
        return ApplicationMeta(kind=AppKind.TLS_APPDATA, tls_legacy=legacy)
    body = payload[5:]
    if len(body) < 4:
        return ApplicationMeta(kind=AppKind.TLS_HANDSHAKE, tls_legacy=legacy)
    hs_type = body[0]
    meta = ApplicationMeta(kind=AppKind.TLS_HANDSHAKE, tls_legacy=legacy)
    if hs_type == 1:
        meta.tls_fields = _parse_client_hello(body)
    elif hs_type == 2:
        meta.tls_fields = _parse_server_hello(body)
    return meta


def _parse_extensions(data: bytes, meta: TlsMeta) -> None:
    if len(data) < 2:
        return
    (total,) = struct.unpack(">H", data[:2])
    blob = data[2:2 + total]
    meta.extension_bytes = len(blob)
    off = 0
    while off + 4 <= len(blob):
        etype, elen = struct.unpack(">HH", blob[off:off + 4])
        edata = blob[off + 4:off + 4 + elen]
        off += 4 + elen
        name = TLS_EXT_NAMES.get(etype, f"0x{etype:04x}")
        meta.extension_types.append(name)
        if etype == 0x000D and len(edata) >= 2:
            (n,) = struct.unpack(">H", edata[:2])
            for i in range(2, min(2 + n, len(edata)) - 1, 2):
                meta.signature_algorithms.append(f"0x{edata[i]:02x}{edata[i+1]:02x}")
        elif etype == 0x000A and len(edata) >= 2:
            (n,) = struct.unpack(">H", edata[:2])
            for i in range(2, min(2 + n, len(edata)) - 1, 2):
                group = struct.unpack(">H", edata[i:i + 2])[0]
                meta.supported_groups.append({23: "secp256r1", 24: "secp384r1",
                                              25: "secp521r1", 29: "x25519"}.get(
                                                  group, f"0x{group:04x}"))
        elif etype == 0x0010 and len(edata) >= 2:
            off2 = 2
            while off2 < len(edata):
                alen = edata[off2]
                meta.alpn_protocols.append(
                    edata[off2 + 1:off2 + 1 + alen].decode("latin-1"))
                off2 += 1 + alen
        elif etype == 0x000B and len(edata) >= 1:
            for fmt in edata[1:1 + edata[0]]:
                meta.ec_point_formats.append(str(fmt))


def _parse_client_hello(body: bytes) -> Optional[TlsMeta]:
    try:
        off = 4 + 2 + 32  # hs header, version, random
        sid_len = body[off]
        off += 1 + sid_len
        (cs_len,) = struct.unpack(">H", body[off:off + 2])
        off += 2
        meta = TlsMeta(role="CLIENT", handshake_bytes=len(body), cipher_suite_bytes=cs_len)
        for i in range(off, off + cs_len, 2):
            suite = struct.unpack(">H", body[i:i + 2])[0]
            meta.cipher_suites.append(f"0x{suite:04x}")
        off += cs_len
        comp_len = body[off]
        off += 1 + comp_len
        _parse_extensions(body[off:], meta)
        return meta
    except (IndexError, struct.error):
        return None


def _parse_server_hello(body: bytes) -> Optional[TlsMeta]:
    try:
        off = 4 + 2 + 32
        sid_len = body[off]
        off += 1 + sid_len
        suite = struct.unpack(">H", body[off:off + 2])[0]
        off += 3  # suite + compression
        meta = TlsMeta(role="SERVER", handshake_bytes=len(body), cipher_suite_bytes=2,
                       cipher_suites=[f"0x{suite:04x}"])
        _parse_extensions(body[off:], meta)
        return meta
    except (IndexError, struct.error):
        return None


def _build_extensions(groups: list[int], alpn: list[str]) -> bytes:
    exts = b""
    if groups:
        body = struct.pack(">H", len(groups) * 2)
        for g in groups:
            body += struct.pack(">H", g)
        exts += struct.pack(">HH", 0x000A, len(body)) + body
    if alpn:
        inner = b""
        for proto in alpn:
            raw = proto.encode("latin-1")
            inner += bytes([len(raw)]) + raw
        exts += struct.pack(">HH", 0x0010, len(inner) + 2) + struct.pack(">H", len(inner)) + inner
    exts += struct.pack(">HH", 0x0017, 0)  # extended master secret
    return struct.pack(">H", len(exts)) + exts


def build_client_hello(cipher_suites: list[int], minor_version: int = 3,
                       groups: list[int] = (29, 23), alpn: list[str] = ()) -> bytes:
    suites = b"".join(struct.pack(">H", s) for s in cipher_suites)
    hello = struct.pack(">H", 0x0303) + b"\x11" * 32 + b"\x00"
    hello += struct.pack(">H", len(suites)) + suites + b"\x01\x00"
    hello += _build_extensions(list(groups), list(alpn))
    hs = b"\x01" + struct.pack(">I", len(hello))[1:] + hello
    return bytes([22, 3, minor_version]) + struct.pack(">H", len(hs)) + hs


def build_server_hello(cipher_suite: int, minor_version: int = 3) -> bytes:
    hello = struct.pack(">H", 0x0303) + b"\x22" * 32 + b"\x00"
    hello += struct.pack(">H", cipher_suite) + b"\x00"
    hello += _build_extensions([23], [])
    hs = b"\x02" + struct.pack(">I", len(hello))[1:] + hello
    return bytes([22, 3, minor_version]) + struct.pack(">H", len(hs)) + hs


def build_tls_appdata(length: int, minor_version: int = 3) -> bytes:
    body = bytes((i * 37 + 11) % 251 for i in range(length))
    return bytes([23, 3, minor_version]) + struct.pack(">H", length) + body
