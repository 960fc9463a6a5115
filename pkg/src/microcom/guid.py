"""128-bit globally unique identifiers used for both class and interface ids.

One ``Guid`` type serves both roles; whether a value names a class or an
interface is a matter of which API boundary it crosses.  The canonical text
form is the 38-character braced, uppercase rendering
``{XXXXXXXX-XXXX-XXXX-XXXX-XXXXXXXXXXXX}``; parsing additionally accepts
lowercase hex and brace-less input.
"""

from __future__ import annotations

import random
import secrets
from dataclasses import dataclass
from functools import total_ordering

from .errors import MalformedGuid, RandomnessUnavailable

# Hyphens sit after hex digits 8, 12, 16 and 20 of the 32-digit body.
_HYPHEN_POSITIONS = (8, 13, 18, 23)
_BODY_LENGTH = 36
_HEX_DIGITS = frozenset("0123456789abcdefABCDEF")


@total_ordering
@dataclass(frozen=True)
class Guid:
    """An immutable 16-octet identifier, ordered and compared bytewise."""

    octets: bytes

    def __post_init__(self):
        if not isinstance(self.octets, bytes) or len(self.octets) != 16:
            raise MalformedGuid("a Guid is exactly 16 raw bytes")

    def __str__(self) -> str:
        return guid_format(self)

    def __repr__(self) -> str:
        return f"Guid({guid_format(self)!r})"

    def __lt__(self, other: "Guid") -> bool:
        if not isinstance(other, Guid):
            return NotImplemented
        return self.octets < other.octets


ZERO_GUID = Guid(bytes(16))


def guid_parse(text: str) -> Guid:
    """Parse upper- or lowercase hex, with or without surrounding braces.

    Raises :class:`MalformedGuid` for wrong length, misplaced hyphens, a
    single unbalanced brace, or non-hex digits.
    """
    if not isinstance(text, str):
        raise MalformedGuid(f"expected a string, got {type(text).__name__}")
    body = text
    if body.startswith("{") or body.endswith("}"):
        if not (body.startswith("{") and body.endswith("}")):
            raise MalformedGuid(f"unbalanced braces in {text!r}")
        body = body[1:-1]
    if len(body) != _BODY_LENGTH:
        raise MalformedGuid(
            f"expected {_BODY_LENGTH} characters between braces, got {len(body)} in {text!r}"
        )
    digits = []
    for i, ch in enumerate(body):
        if i in _HYPHEN_POSITIONS:
            if ch != "-":
                raise MalformedGuid(f"expected '-' at position {i} in {text!r}")
        elif ch in _HEX_DIGITS:
            digits.append(ch)
        else:
            raise MalformedGuid(f"invalid hex digit {ch!r} at position {i} in {text!r}")
    return Guid(bytes.fromhex("".join(digits)))


def guid_format(g: Guid) -> str:
    """Render the canonical 38-character braced uppercase form."""
    h = g.octets.hex().upper()
    return f"{{{h[0:8]}-{h[8:12]}-{h[12:16]}-{h[16:20]}-{h[20:32]}}}"


def guid_new_unique(rng: random.Random | None = None) -> Guid:
    """Return a fresh random Guid.

    The version nibble is forced to 4 and the variant bits to ``10`` so
    generated ids are distinguishable from hand-authored well-known ones.
    ``rng`` is for deterministic tests only; production callers use the OS
    entropy source.
    """
    if rng is not None:
        raw = rng.randbytes(16)
    else:
        try:
            raw = secrets.token_bytes(16)
        except NotImplementedError as exc:  # no OS entropy source
            raise RandomnessUnavailable("no randomness source available") from exc
    b = bytearray(raw)
    b[6] = (b[6] & 0x0F) | 0x40
    b[8] = (b[8] & 0x3F) | 0x80
    return Guid(bytes(b))
