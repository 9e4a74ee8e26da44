"""Ethernet/IPv4/TCP frame construction and classic pcap file primitives.

Synthetic captures only need enough realism for a parser to do honest work:
real IPv4 header checksums, real sequence numbers, MSS-sized segments. TCP
checksums are left zero since nothing in the lab validates them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1
GLOBAL_HEADER_FMT = "<IHHiIII"
PACKET_HEADER_FMT = "<IIII"

ETHERTYPE_IPV4 = 0x0800
IP_PROTO_TCP = 6

FIN = 0x01
SYN = 0x02
RST = 0x04
PSH = 0x08
ACK = 0x10

ETH_LEN = 14
IP_LEN = 20
TCP_LEN = 20
FRAME_OVERHEAD = ETH_LEN + IP_LEN + TCP_LEN


class PcapFormatError(ValueError):
    """Raised when a capture file cannot be interpreted."""


@dataclass(frozen=True)
class ParsedSegment:
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    seq: int
    flags: int
    payload: bytes


def ipv4_checksum(header: bytes) -> int:
    if len(header) % 2:
        header += b"\x00"
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) | header[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _mac_for(ip: str) -> bytes:
    # Locally administered address keyed on the host part, purely cosmetic.
    last = int(ip.rsplit(".", 1)[1])
    return bytes([0x02, 0, 0, 0, 0, last & 0xFF])


def _pack_ip(ip: str) -> bytes:
    parts = [int(p) for p in ip.split(".")]
    if len(parts) != 4 or any(p < 0 or p > 255 for p in parts):
        raise ValueError(f"bad IPv4 address {ip!r}")
    return bytes(parts)


def _unpack_ip(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def build_frame(
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    seq: int,
    ack: int,
    flags: int,
    payload: bytes = b"",
    ip_id: int = 0,
) -> bytes:
    eth = struct.pack("!6s6sH", _mac_for(dst_ip), _mac_for(src_ip), ETHERTYPE_IPV4)
    total_len = IP_LEN + TCP_LEN + len(payload)
    ip_wo_csum = struct.pack(
        "!BBHHHBBH4s4s",
        0x45,
        0,
        total_len,
        ip_id & 0xFFFF,
        0x4000,  # don't fragment
        64,
        IP_PROTO_TCP,
        0,
        _pack_ip(src_ip),
        _pack_ip(dst_ip),
    )
    csum = ipv4_checksum(ip_wo_csum)
    ip_hdr = ip_wo_csum[:10] + struct.pack("!H", csum) + ip_wo_csum[12:]
    tcp_hdr = struct.pack(
        "!HHIIBBHHH",
        src_port,
        dst_port,
        seq & 0xFFFFFFFF,
        ack & 0xFFFFFFFF,
        5 << 4,
        flags,
        65535,
        0,  # checksum not validated anywhere in the lab
        0,
    )
    return eth + ip_hdr + tcp_hdr + payload


def parse_frame(frame: bytes) -> ParsedSegment | None:
    """Decode an Ethernet frame down to its TCP payload.

    Returns None for anything that is not IPv4/TCP; the caller counts those.
    Raises PcapFormatError on structurally broken IPv4/TCP headers.
    """
    if len(frame) < ETH_LEN:
        return None
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    if ethertype != ETHERTYPE_IPV4:
        return None
    if len(frame) < ETH_LEN + IP_LEN:
        raise PcapFormatError("truncated IPv4 header")
    ver_ihl = frame[ETH_LEN]
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < IP_LEN or len(frame) < ETH_LEN + ihl:
        raise PcapFormatError("bad IPv4 header length")
    total_len = struct.unpack_from("!H", frame, ETH_LEN + 2)[0]
    proto = frame[ETH_LEN + 9]
    if proto != IP_PROTO_TCP:
        return None
    src_ip = _unpack_ip(frame[ETH_LEN + 12 : ETH_LEN + 16])
    dst_ip = _unpack_ip(frame[ETH_LEN + 16 : ETH_LEN + 20])
    tcp_off = ETH_LEN + ihl
    if len(frame) < tcp_off + TCP_LEN or total_len < ihl + TCP_LEN:
        raise PcapFormatError("truncated TCP header")
    src_port, dst_port, seq, _ack = struct.unpack_from("!HHII", frame, tcp_off)
    data_off = (frame[tcp_off + 12] >> 4) * 4
    if data_off < TCP_LEN:
        raise PcapFormatError("bad TCP data offset")
    flags = frame[tcp_off + 13]
    payload_start = tcp_off + data_off
    payload_end = ETH_LEN + total_len
    if payload_end > len(frame) or payload_start > payload_end:
        raise PcapFormatError("TCP payload extends past frame")
    return ParsedSegment(src_ip, dst_ip, src_port, dst_port, seq, flags, frame[payload_start:payload_end])


class PcapWriter:
    """Writes a classic little-endian pcap file."""

    def __init__(self, fh: BinaryIO):
        self._fh = fh
        self._fh.write(
            struct.pack(GLOBAL_HEADER_FMT, PCAP_MAGIC, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET)
        )

    def write_packet(self, timestamp: float, frame: bytes) -> None:
        if timestamp < 0:
            raise ValueError("pcap timestamps cannot be negative")
        ts_sec = int(timestamp)
        ts_usec = int(round((timestamp - ts_sec) * 1_000_000))
        if ts_usec >= 1_000_000:
            ts_sec += 1
            ts_usec -= 1_000_000
        self._fh.write(struct.pack(PACKET_HEADER_FMT, ts_sec, ts_usec, len(frame), len(frame)))
        self._fh.write(frame)


def read_packets(path: str | Path) -> Iterator[tuple[float, bytes]]:
    """Yield (timestamp, frame) pairs from a classic pcap file.

    Both byte orders are accepted. Structural damage raises PcapFormatError.
    """
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize(GLOBAL_HEADER_FMT))
        if len(head) < struct.calcsize(GLOBAL_HEADER_FMT):
            raise PcapFormatError("file too short for a pcap global header")
        magic_le = struct.unpack_from("<I", head)[0]
        if magic_le == PCAP_MAGIC:
            endian = "<"
        elif magic_le == PCAP_MAGIC_SWAPPED:
            endian = ">"
        else:
            raise PcapFormatError(f"unrecognized magic 0x{magic_le:08x}")
        _magic, vmaj, _vmin, _tz, _sf, _snap, network = struct.unpack(endian + "IHHiIII", head)
        if vmaj != 2:
            raise PcapFormatError(f"unsupported pcap version {vmaj}")
        if network != LINKTYPE_ETHERNET:
            raise PcapFormatError(f"unsupported link type {network}")
        pkt_hdr_len = struct.calcsize(PACKET_HEADER_FMT)
        while True:
            hdr = fh.read(pkt_hdr_len)
            if not hdr:
                return
            if len(hdr) < pkt_hdr_len:
                raise PcapFormatError("truncated packet header at end of file")
            ts_sec, ts_usec, incl_len, orig_len = struct.unpack(endian + "IIII", hdr)
            if incl_len > orig_len or incl_len > 0x40000:
                raise PcapFormatError(f"implausible capture length {incl_len}")
            frame = fh.read(incl_len)
            if len(frame) < incl_len:
                raise PcapFormatError("truncated packet body at end of file")
            yield ts_sec + ts_usec / 1_000_000, frame
