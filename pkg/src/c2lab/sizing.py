"""Plaintext-to-record size arithmetic for the simulated TLS channel.

The cipher model is block-aligned AEAD: a plaintext of p bytes becomes a
ciphertext of ceil((p + tag) / block) * block bytes, which is what the
record's length field advertises. The 5-byte record header sits outside the
length field and only matters for wire accounting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

RECORD_HEADER_LEN = 5


@dataclass(frozen=True)
class TlsSizeModel:
    tag_len: int = 16
    block_len: int = 16

    def __post_init__(self) -> None:
        if self.tag_len < 0:
            raise ValueError("negative tag length")
        if self.block_len < 1:
            raise ValueError("block length must be at least 1")

    def framed_size(self, plaintext_len: int) -> int:
        """Record length field for a plaintext of the given size."""
        if plaintext_len < 0:
            raise ValueError("negative plaintext length")
        return math.ceil((plaintext_len + self.tag_len) / self.block_len) * self.block_len

    def min_framed_size(self) -> int:
        """Smallest length field any record can carry (empty plaintext)."""
        return self.framed_size(0)

    def wire_size(self, plaintext_len: int) -> int:
        """Bytes the record occupies in the TCP stream, header included."""
        return RECORD_HEADER_LEN + self.framed_size(plaintext_len)

    def on_grid(self, framed: int) -> bool:
        return framed >= self.min_framed_size() and framed % self.block_len == 0

    def snap(self, framed: float) -> int:
        """Round an arbitrary size onto the achievable record-size grid."""
        snapped = round(framed / self.block_len) * self.block_len
        return max(snapped, self.min_framed_size())
