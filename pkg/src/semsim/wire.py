"""Sampled-values style frame codec and an in-process publish/subscribe bus.

Frame layout (big-endian)::

    magic     u16   0x5347
    id_len    u8
    sv_id     id_len ASCII bytes (<= 32)
    conf_rev  u32
    smp_cnt   u16
    stamp_us  u64
    values    3 x i32, fixed point, 1 LSB = 1e-4
    crc32     u32   over every preceding byte
"""
import struct
import zlib
from collections import defaultdict, deque
from dataclasses import dataclass

MAGIC = 0x5347
SCALE = 1e-4
_PER_UNIT = 10_000  # 1 / SCALE; dividing keeps decimal values exact
MAX_ID = 32
VALUE_LIMIT = 1 << 15
_HEAD = struct.Struct(">HB")
_BODY = struct.Struct(">IHQiii")
_CRC = struct.Struct(">I")
_INT32_MIN = -(1 << 31)
_INT32_MAX = (1 << 31) - 1


class CodecError(ValueError):
    pass


class BadMagic(CodecError):
    pass


class Truncated(CodecError):
    pass


class CrcMismatch(CodecError):
    pass


class FrameInvalid(CodecError):
    pass


@dataclass(frozen=True)
class SvFrame:
    sv_id: str
    smp_cnt: int = 0
    conf_rev: int = 0
    stamp_us: int = 0
    values: tuple = (0.0, 0.0, 0.0)


def to_fixed(x):
    if not -VALUE_LIMIT <= x <= VALUE_LIMIT:
        raise FrameInvalid(f"value {x} outside +/-{VALUE_LIMIT}")
    return int(round(x * _PER_UNIT))


def from_fixed(i):
    return i / _PER_UNIT


def quantize(x):
    """Value after one trip through the wire format."""
    return from_fixed(to_fixed(x))


def encode(frame):
    try:
        sid = frame.sv_id.encode("ascii")
    except UnicodeEncodeError as exc:
        raise FrameInvalid("sv_id must be ASCII") from exc
    if not 1 <= len(sid) <= MAX_ID:
        raise FrameInvalid(f"sv_id must be 1..{MAX_ID} bytes, got {len(sid)}")
    if len(frame.values) != 3:
        raise FrameInvalid("exactly three values are carried")
    if not 0 <= frame.smp_cnt <= 0xFFFF:
        raise FrameInvalid("smp_cnt is 16-bit unsigned")
    if not 0 <= frame.conf_rev <= 0xFFFFFFFF:
        raise FrameInvalid("conf_rev is 32-bit unsigned")
    if not 0 <= frame.stamp_us <= 0xFFFFFFFFFFFFFFFF:
        raise FrameInvalid("stamp_us is 64-bit unsigned")
    fixed = [to_fixed(v) for v in frame.values]
    body = _HEAD.pack(MAGIC, len(sid)) + sid + _BODY.pack(
        frame.conf_rev, frame.smp_cnt, frame.stamp_us, *fixed)
    return body + _CRC.pack(zlib.crc32(body))


def decode(data):
    data = bytes(data)
    if len(data) < _HEAD.size:
        raise Truncated(f"{len(data)} bytes is shorter than the header")
    magic, id_len = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"magic 0x{magic:04x}")
    need = _HEAD.size + id_len + _BODY.size + _CRC.size
    if len(data) < need:
        raise Truncated(f"need {need} bytes, have {len(data)}")
    if len(data) > need:
        raise FrameInvalid(f"{len(data) - need} trailing bytes")
    (crc,) = _CRC.unpack_from(data, need - _CRC.size)
    if zlib.crc32(data[: need - _CRC.size]) != crc:
        raise CrcMismatch("checksum does not match")
    if not 1 <= id_len <= MAX_ID:
        raise FrameInvalid(f"sv_id length {id_len}")
    try:
        sv_id = data[_HEAD.size: _HEAD.size + id_len].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FrameInvalid("sv_id is not ASCII") from exc
    conf_rev, smp_cnt, stamp_us, a, b, c = _BODY.unpack_from(data, _HEAD.size + id_len)
    return SvFrame(sv_id, smp_cnt, conf_rev, stamp_us, (from_fixed(a), from_fixed(b), from_fixed(c)))


class Bus:
    """Loopback pub/sub; the ``policy`` callable may drop or defer a frame.

    ``policy(topic, subscriber, seq, frame)`` returns True to deliver now and
    False to suppress.  Subscribers keep their last delivered frame.
    """

    def __init__(self, policy=None):
        self._subs = defaultdict(list)
        self._seq = defaultdict(int)
        self.policy = policy
        self.unknown_topic = 0
        self.inbox = defaultdict(deque)
        self.held = {}

    def subscribe(self, topic, name):
        if name not in self._subs[topic]:
            self._subs[topic].append(name)

    def publish(self, topic, frame):
        subs = self._subs.get(topic)
        if not subs:
            self.unknown_topic += 1
            return 0
        raw = encode(frame)
        seq = self._seq[topic]
        self._seq[topic] = seq + 1
        n = 0
        for name in subs:
            if self.policy is not None and not self.policy(topic, name, seq, frame):
                continue
            got = decode(raw)
            self.inbox[name].append((topic, seq, got))
            self.held[(topic, name)] = got
            n += 1
        return n

    def drain(self, name):
        box = self.inbox[name]
        out = list(box)
        box.clear()
        return out
