"""Layered LoRa data frame codec for smart-meter telemetry.

Three layers are modeled: a structural PHY frame (preamble/header/CRC),
the MAC frame (1-byte header, payload, 4-byte integrity code), and the
application frame (device address, counters, port, payload). The
application payload for a meter is a fixed 96-byte big-endian record;
spreading factors 9..12 cannot carry it whole, so it splits into two
packets of at most 51 bytes joined by a two-byte identifier.

Wire layout of the 96-byte meter record:

    0   u32  timestamp (unix seconds)
    4   u16  meter id
    6   u16  frequency, centi-hertz
    8   u8   status
    9   u8   reserved
    10  u32  point voltage, mV        (18-byte point block)
    14  u32  point current, mA
    18  u32  point active power, W
    22  i32  point reactive power, var
    26  u16  power factor x 1e4
    28  4 x 16-byte component blocks: WT, PV, MT, FC
         u32 P (W) | i32 Q (var) | u32 V (mV) | u32 I (mA)
    92  i32  converter power, W (signed)

A component block of sixteen 0xFF bytes marks that component as absent;
an absent-marker power field with any other trailing byte is malformed.
Integrity uses AES-128 CMAC truncated to 4 bytes; payload privacy uses
an AES-128 counter keystream keyed by device address and frame counter.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from typing import Sequence

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.cmac import CMAC

__all__ = [
    "CodecError",
    "FieldRangeError",
    "FrameLengthError",
    "MalformedFrameError",
    "FragmentError",
    "MType",
    "FPortClass",
    "PointBlock",
    "ComponentBlock",
    "MeterReading",
    "PhyHeader",
    "PhyFrame",
    "MacFrame",
    "AppFrame",
    "SessionKeys",
    "encode_reading",
    "decode_reading",
    "fragment",
    "reassemble",
    "seal",
    "open_frame",
    "verify_mic",
    "classify_fport",
    "READING_SIZE",
    "MAX_FRAGMENT_SIZE",
]

READING_SIZE = 96
MAX_FRAGMENT_SIZE = 51
_FRAG_DATA_FIRST = 49
_ABSENT_BLOCK = b"\xff" * 16
_ABSENT_POWER = 0xFFFFFFFF
_U32 = 0xFFFFFFFF
_I32_MIN, _I32_MAX = -(2**31), 2**31 - 1


class CodecError(ValueError):
    """Base error for every malformed frame or field."""


class FieldRangeError(CodecError):
    def __init__(self, field: str, value):
        super().__init__(f"field {field!r} out of range: {value!r}")
        self.field = field


class FrameLengthError(CodecError):
    pass


class MalformedFrameError(CodecError):
    pass


class FragmentError(CodecError):
    pass


class MType(enum.IntEnum):
    JOIN_REQUEST = 0
    JOIN_ACCEPT = 1
    UNCONFIRMED_DATA_UP = 2
    UNCONFIRMED_DATA_DOWN = 3
    CONFIRMED_DATA_UP = 4
    CONFIRMED_DATA_DOWN = 5
    RFU = 6
    PROPRIETARY = 7


class FPortClass(enum.Enum):
    MAC_COMMAND = "mac-command"
    APPLICATION = "application"
    TEST = "test"
    DISCARD = "discard"


def classify_fport(fport: int) -> FPortClass:
    """Total classification of the 8-bit port field."""
    if not (0 <= fport <= 255):
        raise FieldRangeError("fport", fport)
    if fport == 0:
        return FPortClass.MAC_COMMAND
    if fport <= 223:
        return FPortClass.APPLICATION
    if fport == 224:
        return FPortClass.TEST
    return FPortClass.DISCARD


# ---------------------------------------------------------------------------
# 96-byte meter record

def _q(value: float, scale: float) -> float:
    return round(value * scale) / scale


@dataclass(frozen=True)
class PointBlock:
    """Measurements at the meter's own connection point."""

    voltage: float        # V, 1 mV resolution
    current: float        # A, 1 mA resolution
    active_power: float   # W, 1 W resolution
    reactive_power: float  # var, 1 var resolution, signed
    power_factor: float   # [0, 1], 1e-4 resolution

    def __post_init__(self):
        object.__setattr__(self, "voltage", _q(self.voltage, 1000))
        object.__setattr__(self, "current", _q(self.current, 1000))
        object.__setattr__(self, "active_power", float(round(self.active_power)))
        object.__setattr__(self, "reactive_power", float(round(self.reactive_power)))
        object.__setattr__(self, "power_factor", _q(self.power_factor, 10000))
        if not (0.0 <= self.power_factor <= 1.0):
            raise FieldRangeError("power_factor", self.power_factor)


@dataclass(frozen=True)
class ComponentBlock:
    """Per-component electrical state (WT, PV, MT or FC attached to the node)."""

    active_power: float   # W
    reactive_power: float  # var, signed
    voltage: float        # V, 1 mV resolution
    current: float        # A, 1 mA resolution

    def __post_init__(self):
        object.__setattr__(self, "active_power", float(round(self.active_power)))
        object.__setattr__(self, "reactive_power", float(round(self.reactive_power)))
        object.__setattr__(self, "voltage", _q(self.voltage, 1000))
        object.__setattr__(self, "current", _q(self.current, 1000))


@dataclass(frozen=True)
class MeterReading:
    timestamp: int        # unix seconds
    meter_id: int
    frequency: float      # Hz, 0.01 Hz resolution
    point: PointBlock
    wt: ComponentBlock | None = None
    pv: ComponentBlock | None = None
    mt: ComponentBlock | None = None
    fc: ComponentBlock | None = None
    converter_power: float = 0.0  # W, signed
    status: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frequency", _q(self.frequency, 100))
        object.__setattr__(self, "converter_power", float(round(self.converter_power)))

    @property
    def components(self) -> dict[str, ComponentBlock | None]:
        return {"wt": self.wt, "pv": self.pv, "mt": self.mt, "fc": self.fc}


def _u32(name: str, value: float, allow_sentinel: bool = False) -> int:
    iv = int(round(value))
    top = _U32 if allow_sentinel else _U32 - 1
    if not (0 <= iv <= top):
        raise FieldRangeError(name, value)
    return iv


def _i32(name: str, value: float) -> int:
    iv = int(round(value))
    if not (_I32_MIN <= iv <= _I32_MAX):
        raise FieldRangeError(name, value)
    return iv


def _u16(name: str, value: float) -> int:
    iv = int(round(value))
    if not (0 <= iv <= 0xFFFF):
        raise FieldRangeError(name, value)
    return iv


def encode_reading(reading: MeterReading) -> bytes:
    """Serialize a reading to the fixed 96-byte record (big-endian)."""
    out = bytearray()
    out += struct.pack(
        ">IHHBB",
        _u32("timestamp", reading.timestamp),
        _u16("meter_id", reading.meter_id),
        _u16("frequency", reading.frequency * 100),
        _u8check("status", reading.status),
        0,
    )
    p = reading.point
    out += struct.pack(
        ">IIIiH",
        _u32("point.voltage", p.voltage * 1000),
        _u32("point.current", p.current * 1000),
        _u32("point.active_power", p.active_power),
        _i32("point.reactive_power", p.reactive_power),
        _u16("point.power_factor", p.power_factor * 10000),
    )
    for name, block in reading.components.items():
        if block is None:
            out += _ABSENT_BLOCK
            continue
        out += struct.pack(
            ">IiII",
            _u32(f"{name}.active_power", block.active_power),
            _i32(f"{name}.reactive_power", block.reactive_power),
            _u32(f"{name}.voltage", block.voltage * 1000),
            _u32(f"{name}.current", block.current * 1000),
        )
    out += struct.pack(">i", _i32("converter_power", reading.converter_power))
    assert len(out) == READING_SIZE
    return bytes(out)


def _u8check(name: str, value: int) -> int:
    if not (0 <= int(value) <= 0xFF):
        raise FieldRangeError(name, value)
    return int(value)


def decode_reading(data: bytes) -> MeterReading:
    """Parse a 96-byte record back into a reading (inverse of encode)."""
    if len(data) != READING_SIZE:
        raise FrameLengthError(f"meter record must be {READING_SIZE} bytes, got {len(data)}")
    ts, meter_id, freq_c, status, _ = struct.unpack_from(">IHHBB", data, 0)
    v, i, ap, rp, pf = struct.unpack_from(">IIIiH", data, 10)
    if ap == _ABSENT_POWER:
        raise MalformedFrameError("point block carries the absent marker")
    if pf > 10000:
        raise MalformedFrameError(f"power factor field {pf} above 1.0")
    point = PointBlock(v / 1000, i / 1000, ap, rp, pf / 10000)
    blocks: dict[str, ComponentBlock | None] = {}
    off = 28
    for name in ("wt", "pv", "mt", "fc"):
        raw = data[off:off + 16]
        bp = struct.unpack_from(">I", raw, 0)[0]
        if bp == _ABSENT_POWER:
            if raw != _ABSENT_BLOCK:
                raise MalformedFrameError(
                    f"component {name}: absent power marker with non-absent trailing bytes")
            blocks[name] = None
        else:
            _, bq, bv, bi = struct.unpack(">IiII", raw)
            blocks[name] = ComponentBlock(bp, bq, bv / 1000, bi / 1000)
        off += 16
    conv = struct.unpack_from(">i", data, 92)[0]
    return MeterReading(
        timestamp=ts,
        meter_id=meter_id,
        frequency=freq_c / 100,
        point=point,
        converter_power=conv,
        status=status,
        **blocks,
    )


# ---------------------------------------------------------------------------
# fragmentation (spreading factors 9..12 carry at most 51 bytes)

def _frag_header(seq_id: int, index: int, total: int) -> bytes:
    if not (0 <= seq_id < 1024):
        raise FragmentError(f"sequence id {seq_id} outside 10-bit range")
    word = (seq_id << 6) | (index << 4) | (total << 2)
    return struct.pack(">H", word)


def _parse_frag_header(packet: bytes) -> tuple[int, int, int]:
    if len(packet) < 2:
        raise FragmentError("fragment shorter than its 2-byte identifier")
    word = struct.unpack_from(">H", packet)[0]
    return word >> 6, (word >> 4) & 0x3, (word >> 2) & 0x3


def fragment(frm_payload: bytes, spreading_factor: int, seq_id: int = 0) -> list[bytes]:
    """Split an application payload for the given spreading factor.

    SF 6..8 carry the payload in one unmodified packet. SF 9..12 produce
    identifier-prefixed fragments of at most 51 bytes (49 data bytes in
    the first, the remainder in the second).
    """
    if not (6 <= spreading_factor <= 12):
        raise FragmentError(f"spreading factor {spreading_factor} outside 6..12")
    if len(frm_payload) > READING_SIZE:
        raise FragmentError(f"payload of {len(frm_payload)} bytes exceeds {READING_SIZE}")
    if spreading_factor <= 8:
        return [bytes(frm_payload)]
    chunks = [frm_payload[:_FRAG_DATA_FIRST], frm_payload[_FRAG_DATA_FIRST:]]
    if not chunks[1]:
        chunks = chunks[:1]
    total = len(chunks)
    packets = [_frag_header(seq_id, idx, total) + chunk
               for idx, chunk in enumerate(chunks)]
    assert all(len(p) <= MAX_FRAGMENT_SIZE for p in packets)
    return packets


def reassemble(packets: Sequence[bytes], spreading_factor: int) -> bytes:
    """Rebuild the application payload from its fragments (inverse of fragment)."""
    if not (6 <= spreading_factor <= 12):
        raise FragmentError(f"spreading factor {spreading_factor} outside 6..12")
    if not packets:
        raise FragmentError("no packets to reassemble")
    if spreading_factor <= 8:
        if len(packets) != 1:
            raise FragmentError(f"SF {spreading_factor} carries one packet, got {len(packets)}")
        return bytes(packets[0])
    parsed: dict[int, bytes] = {}
    seq_ref: int | None = None
    total_ref: int | None = None
    for pkt in packets:
        if len(pkt) > MAX_FRAGMENT_SIZE:
            raise FragmentError(f"fragment of {len(pkt)} bytes exceeds {MAX_FRAGMENT_SIZE}")
        seq, idx, total = _parse_frag_header(pkt)
        if seq_ref is None:
            seq_ref, total_ref = seq, total
        elif seq != seq_ref:
            raise FragmentError(f"mixed sequence ids {seq_ref} and {seq}")
        elif total != total_ref:
            raise FragmentError("fragments disagree on total count")
        if idx in parsed:
            raise FragmentError(f"duplicate fragment index {idx}")
        if idx >= total:
            raise FragmentError(f"fragment index {idx} outside total {total}")
        parsed[idx] = pkt[2:]
    missing = sorted(set(range(total_ref)) - set(parsed))
    if missing:
        raise FragmentError(f"incomplete payload, missing fragment index {missing}")
    return b"".join(parsed[i] for i in range(total_ref))


# ---------------------------------------------------------------------------
# PHY layer (structural model; the radio itself is out of scope)

def _crc16_ccitt(data: bytes, init: int = 0xFFFF) -> int:
    crc = init
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


@dataclass(frozen=True)
class PhyHeader:
    payload_length: int
    coding_rate: int = 1       # 4/(4+cr), cr in 1..4
    crc_present: bool = True

    def __post_init__(self):
        if not (0 <= self.payload_length <= 255):
            raise FieldRangeError("payload_length", self.payload_length)
        if not (1 <= self.coding_rate <= 4):
            raise FieldRangeError("coding_rate", self.coding_rate)

    def pack(self) -> bytes:
        """20-bit header: length(8) | cr(3) | crc(1) | rsv(4) | hdr-crc(4)."""
        word = (self.payload_length << 12) | (self.coding_rate << 9) \
            | (int(self.crc_present) << 8)
        nib = (word >> 16) ^ ((word >> 12) & 0xF) ^ ((word >> 8) & 0xF) ^ ((word >> 4) & 0xF)
        word = (word & 0xFFFF0) | (nib & 0xF)
        return bytes(((word >> 16) & 0xF, (word >> 8) & 0xFF, word & 0xFF))


@dataclass(frozen=True)
class PhyFrame:
    preamble_symbols: int
    phdr: PhyHeader
    payload: bytes
    explicit_header: bool = True  # implicit (downlink) headers omit the payload CRC

    @property
    def phy_crc(self) -> int | None:
        if self.explicit_header and self.phdr.crc_present:
            return _crc16_ccitt(self.payload)
        return None


# ---------------------------------------------------------------------------
# MAC + application layers with integrity and privacy

@dataclass(frozen=True)
class SessionKeys:
    nwk_key: bytes  # network session key: integrity + option encryption
    app_key: bytes  # application session key: payload encryption

    def __post_init__(self):
        for name, key in (("nwk_key", self.nwk_key), ("app_key", self.app_key)):
            if len(key) != 16:
                raise FieldRangeError(name, f"{len(key)}-byte key (need 128-bit)")


@dataclass(frozen=True)
class AppFrame:
    dev_addr: bytes          # 4 bytes
    fcnt: int                # 16-bit frame counter
    fport: int
    frm_payload: bytes
    fopts: bytes = b""
    fctrl_flags: int = 0     # upper nibble of FCtrl (ADR/ACK/...); low nibble is len(fopts)

    def __post_init__(self):
        if len(self.dev_addr) != 4:
            raise FieldRangeError("dev_addr", self.dev_addr)
        if not (0 <= self.fcnt <= 0xFFFF):
            raise FieldRangeError("fcnt", self.fcnt)
        if not (0 <= self.fport <= 255):
            raise FieldRangeError("fport", self.fport)
        if len(self.fopts) > 15:
            raise FieldRangeError("fopts", f"{len(self.fopts)} bytes (max 15)")
        if self.fctrl_flags & 0x0F:
            raise FieldRangeError("fctrl_flags", "low nibble is reserved for fopts length")

    @property
    def fctrl(self) -> int:
        return self.fctrl_flags | len(self.fopts)


@dataclass(frozen=True)
class MacFrame:
    mtype: MType
    major: int
    mac_payload: bytes
    mic: bytes
    rfu: int = 0

    @property
    def mhdr(self) -> int:
        return (int(self.mtype) << 5) | ((self.rfu & 0x7) << 2) | (self.major & 0x3)

    def to_bytes(self) -> bytes:
        return bytes([self.mhdr]) + self.mac_payload + self.mic

    @classmethod
    def from_bytes(cls, data: bytes) -> "MacFrame":
        if len(data) < 1 + 4:
            raise FrameLengthError("MAC frame shorter than header plus integrity code")
        mhdr = data[0]
        return cls(
            mtype=MType((mhdr >> 5) & 0x7),
            rfu=(mhdr >> 2) & 0x7,
            major=mhdr & 0x3,
            mac_payload=data[1:-4],
            mic=data[-4:],
        )


def _aes_ecb(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def _keystream_xor(data: bytes, key: bytes, dev_addr: bytes, fcnt: int,
                   direction: int, kind: int) -> bytes:
    """Counter-mode keystream keyed on device address and frame counter.

    ``kind`` separates the payload stream (0x01) from the option stream
    (0x02) so the two never share keystream blocks under one key.
    """
    out = bytearray()
    for i in range(0, len(data), 16):
        block = struct.pack(">B4xB4sIxB", kind, direction, dev_addr, fcnt,
                            i // 16 + 1)
        ks = _aes_ecb(key, block)
        chunk = data[i:i + 16]
        out += bytes(a ^ b for a, b in zip(chunk, ks))
    return bytes(out)


def _fhdr_bytes(frame: AppFrame, fopts_wire: bytes) -> bytes:
    return frame.dev_addr + bytes([frame.fctrl]) + struct.pack(">H", frame.fcnt) + fopts_wire


def _compute_mic(key: bytes, mhdr: int, fhdr: bytes, fport: int, cipher: bytes) -> bytes:
    mac = CMAC(algorithms.AES(key))
    mac.update(bytes([mhdr]) + fhdr + bytes([fport]) + cipher)
    return mac.finalize()[:4]


def seal(frame: AppFrame, keys: SessionKeys, direction: str = "up",
         mtype: MType = MType.UNCONFIRMED_DATA_UP, major: int = 0) -> MacFrame:
    """Encrypt an application frame and wrap it with its integrity code.

    The payload is encrypted before the MIC is computed; the MIC covers
    the MAC header, frame header, port, and ciphertext.
    """
    dir_bit = 0 if direction == "up" else 1
    payload_key = keys.nwk_key if frame.fport == 0 else keys.app_key
    cipher = _keystream_xor(frame.frm_payload, payload_key, frame.dev_addr,
                            frame.fcnt, dir_bit, kind=0x01)
    fopts_wire = _keystream_xor(frame.fopts, keys.nwk_key, frame.dev_addr,
                                frame.fcnt, dir_bit, kind=0x02)
    fhdr = _fhdr_bytes(frame, fopts_wire)
    mac_payload = fhdr + bytes([frame.fport]) + cipher
    mhdr = (int(mtype) << 5) | (major & 0x3)
    mic = _compute_mic(keys.nwk_key, mhdr, fhdr, frame.fport, cipher)
    return MacFrame(mtype=mtype, major=major, mac_payload=mac_payload, mic=mic)


@dataclass(frozen=True)
class _MacFields:
    dev_addr: bytes
    fctrl: int
    fcnt: int
    fopts: bytes
    fport: int
    cipher: bytes


def _split_mac_payload(mac_payload: bytes) -> _MacFields:
    if len(mac_payload) < 8:
        raise FrameLengthError("MAC payload shorter than the frame header")
    dev_addr = mac_payload[:4]
    fctrl = mac_payload[4]
    fcnt = struct.unpack_from(">H", mac_payload, 5)[0]
    fopts_len = fctrl & 0x0F
    if len(mac_payload) < 8 + fopts_len:
        raise FrameLengthError("frame options extend past the payload")
    return _MacFields(
        dev_addr=dev_addr,
        fctrl=fctrl,
        fcnt=fcnt,
        fopts=mac_payload[7:7 + fopts_len],
        fport=mac_payload[7 + fopts_len],
        cipher=mac_payload[8 + fopts_len:],
    )


def verify_mic(frame: MacFrame, keys: SessionKeys) -> bool:
    """True iff the frame's integrity code matches its contents."""
    try:
        f = _split_mac_payload(frame.mac_payload)
    except CodecError:
        return False
    fhdr = frame.mac_payload[:7 + (f.fctrl & 0x0F)]
    expected = _compute_mic(keys.nwk_key, frame.mhdr, fhdr, f.fport, f.cipher)
    return expected == frame.mic


def open_frame(frame: MacFrame, keys: SessionKeys,
               direction: str = "up") -> AppFrame | None:
    """Verify and decrypt a MAC frame.

    Returns the recovered application frame, or ``None`` when the frame
    must be dropped (integrity mismatch, or a port in the discard range).
    Structural errors on truncated frames raise.
    """
    f = _split_mac_payload(frame.mac_payload)
    dev_addr, fcnt, fport = f.dev_addr, f.fcnt, f.fport
    fopts_wire, cipher = f.fopts, f.cipher
    if classify_fport(fport) is FPortClass.DISCARD:
        return None
    if not verify_mic(frame, keys):
        return None
    dir_bit = 0 if direction == "up" else 1
    payload_key = keys.nwk_key if fport == 0 else keys.app_key
    payload = _keystream_xor(cipher, payload_key, dev_addr, fcnt, dir_bit, kind=0x01)
    fopts = _keystream_xor(fopts_wire, keys.nwk_key, dev_addr, fcnt, dir_bit, kind=0x02)
    return AppFrame(
        dev_addr=dev_addr,
        fcnt=fcnt,
        fport=fport,
        frm_payload=payload,
        fopts=fopts,
        fctrl_flags=f.fctrl & 0xF0,
    )
