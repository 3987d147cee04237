# -*- coding: utf-8 -*-
# -----------------------------------------------------------------------------
# AgriBus - data-centric publish-subscribe for agricultural machines
# Copyright (c) 2025 The AgriBus Team - See AUTHORS file for more information
#
# This program is free software: you can redistribute it and/or modify it under
# the terms of the GNU General Public License as published by the Free Software
# Foundation, either version 3 of the License, or (at your option) any later
# version.
#
# This program is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS
# FOR A PARTICULAR PURPOSE. See the GNU General Public License for more
# details.
#
# You should have received a copy of the GNU General Public License along with
# this program.  If not, see <http://www.gnu.org/licenses/>.
# -----------------------------------------------------------------------------

"""
bytes on the wire

Samples are encoded little-endian, field by field in declaration order:
fixed-width integers, IEEE-754 single floats, length-prefixed UTF-8 text with
a declared maximum, enums as 32-bit ordinals and nested records inline. A
message is a header (magic, version, sender prefix) followed by framed
submessages. Everything here is a pure function over byte strings.
"""

import enum
import hashlib
import struct
from dataclasses import dataclass

from .agribus_error import AgriBusError, WireError

MAGIC = b'AGRB'
VERSION_MAJOR = 1
VERSION_MINOR = 0
MAX_DATAGRAM = 60 * 1024
KEY_HASH_SIZE = 16
GUID_PREFIX_SIZE = 12

ENTITYID_UNKNOWN = 0x00000000
ENTITYID_SEDP_WRITER = 0x00000010
ENTITYID_SEDP_READER = 0x00000011
ENTITYID_PARTICIPANT = 0x000000C1
FIRST_USER_ENTITYID = 0x00000100

SEQUENCE_NONE = 0


# -- codecs ------------------------------------------------------------------

class Codec(object):
    """encodes and decodes one kind of field"""
    signature = '?'

    def pack(self, value, out):
        raise NotImplementedError

    def unpack(self, buf, offset):
        raise NotImplementedError


def _need(buf, offset, size):
    end = offset + size
    if end > len(buf):
        raise WireError('TRUNCATED',
                        _('need %(size)d bytes at offset %(offset)d') %
                        {'size': size, 'offset': offset})
    return end


class Scalar(Codec):
    """anything struct can do in one format character"""

    def __init__(self, fmt, signature, low=None, high=None):
        self._struct = struct.Struct('<' + fmt)
        self.size = self._struct.size
        self.signature = signature
        self.low = low
        self.high = high

    def pack(self, value, out):
        if self.low is not None:
            if isinstance(value, bool) or not isinstance(value, int):
                raise WireError('BAD_VALUE', _('%s expects an integer') %
                                self.signature)
            if not self.low <= value <= self.high:
                raise WireError('VALUE_OUT_OF_RANGE',
                                _('%(value)r does not fit %(kind)s') %
                                {'value': value, 'kind': self.signature})
        try:
            out += self._struct.pack(value)
        except (struct.error, OverflowError, TypeError):
            raise WireError('VALUE_OUT_OF_RANGE',
                            _('%(value)r does not fit %(kind)s') %
                            {'value': value, 'kind': self.signature})

    def unpack(self, buf, offset):
        end = _need(buf, offset, self.size)
        return self._struct.unpack_from(buf, offset)[0], end


UInt8 = Scalar('B', 'u8', 0, 0xFF)
UInt16 = Scalar('H', 'u16', 0, 0xFFFF)
UInt32 = Scalar('I', 'u32', 0, 0xFFFFFFFF)
UInt64 = Scalar('Q', 'u64', 0, 0xFFFFFFFFFFFFFFFF)
Int32 = Scalar('i', 'i32', -0x80000000, 0x7FFFFFFF)
Float32 = Scalar('f', 'f32')


class _Bool(Codec):
    signature = 'bool'

    def pack(self, value, out):
        if not isinstance(value, bool):
            raise WireError('BAD_VALUE', _('bool expected'))
        out.append(1 if value else 0)

    def unpack(self, buf, offset):
        end = _need(buf, offset, 1)
        raw = buf[offset]
        if raw > 1:
            raise WireError('BAD_BOOL', _('boolean byte %d') % raw)
        return raw == 1, end

Bool = _Bool()


class Text(Codec):
    """length-prefixed UTF-8, at most max_chars characters"""

    def __init__(self, max_chars):
        self.max_chars = max_chars
        self.signature = 'text[%d]' % max_chars

    def pack(self, value, out):
        if not isinstance(value, str):
            raise WireError('BAD_VALUE', _('text expected'))
        if len(value) > self.max_chars:
            raise WireError('TEXT_TOO_LONG',
                            _('%(length)d characters, at most %(max)d allowed') %
                            {'length': len(value), 'max': self.max_chars})
        try:
            data = value.encode('utf-8')
        except UnicodeEncodeError:
            raise WireError('BAD_UTF8', _('text cannot be encoded as UTF-8'))
        out += struct.pack('<I', len(data))
        out += data

    def unpack(self, buf, offset):
        length, offset = UInt32.unpack(buf, offset)
        end = _need(buf, offset, length)
        if length > 4 * self.max_chars:
            raise WireError('TEXT_TOO_LONG', _('text of %d bytes') % length)
        try:
            value = bytes(buf[offset:end]).decode('utf-8')
        except UnicodeDecodeError:
            raise WireError('BAD_UTF8', _('invalid UTF-8 in text field'))
        if len(value) > self.max_chars:
            raise WireError('TEXT_TOO_LONG', _('text of %d characters') %
                            len(value))
        return value, end


class Bytes(Codec):
    """length-prefixed opaque bytes"""

    def __init__(self, max_len):
        self.max_len = max_len
        self.signature = 'bytes[%d]' % max_len

    def pack(self, value, out):
        if not isinstance(value, (bytes, bytearray)):
            raise WireError('BAD_VALUE', _('bytes expected'))
        if len(value) > self.max_len:
            raise WireError('BYTES_TOO_LONG', _('%d bytes') % len(value))
        out += struct.pack('<I', len(value))
        out += value

    def unpack(self, buf, offset):
        length, offset = UInt32.unpack(buf, offset)
        end = _need(buf, offset, length)
        if length > self.max_len:
            raise WireError('BYTES_TOO_LONG', _('%d bytes') % length)
        return bytes(buf[offset:end]), end


class FixedBytes(Codec):

    def __init__(self, size):
        self.size = size
        self.signature = 'octets[%d]' % size

    def pack(self, value, out):
        if not isinstance(value, (bytes, bytearray)) or \
           len(value) != self.size:
            raise WireError('BAD_VALUE', _('exactly %d bytes expected') %
                            self.size)
        out += value

    def unpack(self, buf, offset):
        end = _need(buf, offset, self.size)
        return bytes(buf[offset:end]), end


class EnumOf(Codec):
    """32-bit unsigned ordinal of an IntEnum"""

    def __init__(self, enum_class):
        self.enum_class = enum_class
        self.signature = 'enum %s{%s}' % (
            enum_class.__name__,
            ','.join('%s=%d' % (m.name, m.value) for m in enum_class))

    def pack(self, value, out):
        try:
            member = self.enum_class(value)
        except ValueError:
            raise WireError('BAD_ENUM_ORDINAL', _('%(value)r is not a %(enum)s') %
                            {'value': value, 'enum': self.enum_class.__name__})
        out += struct.pack('<I', member.value)

    def unpack(self, buf, offset):
        ordinal, end = UInt32.unpack(buf, offset)
        try:
            return self.enum_class(ordinal), end
        except ValueError:
            raise WireError('BAD_ENUM_ORDINAL',
                            _('ordinal %(ordinal)d outside %(enum)s') %
                            {'ordinal': ordinal,
                             'enum': self.enum_class.__name__})


class Sequence(Codec):
    """count-prefixed list of one codec, decoded as a tuple"""

    def __init__(self, element, max_count):
        self.element = element
        self.max_count = max_count
        self.signature = 'seq<%s>[%d]' % (element.signature, max_count)

    def pack(self, value, out):
        if len(value) > self.max_count:
            raise WireError('SEQUENCE_TOO_LONG', _('%d elements') % len(value))
        out += struct.pack('<I', len(value))
        for item in value:
            self.element.pack(item, out)

    def unpack(self, buf, offset):
        count, offset = UInt32.unpack(buf, offset)
        if count > self.max_count:
            raise WireError('SEQUENCE_TOO_LONG', _('%d elements') % count)
        items = []
        for _index in range(count):
            item, offset = self.element.unpack(buf, offset)
            items.append(item)
        return tuple(items), offset


@dataclass(frozen=True)
class Field(object):
    name: str
    codec: Codec
    key: bool = False


class TypeDescriptor(Codec):
    """a record type: ordered fields, some of them keys

    field order is fixed when the descriptor is built; the digest of the
    signature is what discovery compares for type compatibility"""

    def __init__(self, name, fields, factory):
        self.name = name
        self.fields = tuple(fields)
        self.factory = factory
        self.key_fields = tuple(f for f in self.fields if f.key)
        self.signature = '%s{%s}' % (name, ','.join(
            '%s:%s%s' % (f.name, f.codec.signature, '@key' if f.key else '')
            for f in self.fields))
        self.digest = hashlib.blake2b(self.signature.encode('utf-8'),
                                      digest_size=16).digest()

    def __repr__(self):
        return '<TypeDescriptor %s>' % self.name

    def pack(self, value, out):
        for f in self.fields:
            try:
                item = getattr(value, f.name)
            except AttributeError:
                raise WireError('BAD_VALUE', _('%(type)s value lacks %(field)s') %
                                {'type': self.name, 'field': f.name})
            f.codec.pack(item, out)

    def unpack(self, buf, offset):
        values = {}
        for f in self.fields:
            values[f.name], offset = f.codec.unpack(buf, offset)
        try:
            return self.factory(**values), offset
        except WireError:
            raise
        except (TypeError, ValueError, AgriBusError) as error:
            raise WireError('BAD_VALUE', str(error))

    def key_of(self, value):
        """the tuple of key field values"""
        return tuple(getattr(value, f.name) for f in self.key_fields)


def encode_sample(type_descriptor, value):
    """deterministic encoding of value"""
    out = bytearray()
    type_descriptor.pack(value, out)
    return bytes(out)


def decode_sample(type_descriptor, data):
    """inverse of encode_sample; never reads past the buffer"""
    data = bytes(data)
    value, offset = type_descriptor.unpack(data, 0)
    if offset != len(data):
        raise WireError('TRAILING_BYTES', _('%d bytes after the sample') %
                        (len(data) - offset))
    return value


def compute_key_hash(type_descriptor, value):
    """16-byte digest over the encoded key fields only"""
    if not type_descriptor.key_fields:
        raise WireError('NO_KEY_FIELDS', _('%s declares no key field') %
                        type_descriptor.name)
    out = bytearray()
    for f in type_descriptor.key_fields:
        f.codec.pack(getattr(value, f.name), out)
    return hashlib.blake2b(bytes(out), digest_size=KEY_HASH_SIZE).digest()


# -- identities --------------------------------------------------------------

_GUID = struct.Struct('<12sI')


@dataclass(frozen=True, order=True)
class Guid(object):
    """participant prefix plus entity id"""
    prefix: bytes
    entity_id: int

    def to_bytes(self):
        return _GUID.pack(self.prefix, self.entity_id)

    @classmethod
    def from_bytes(cls, data, offset=0):
        _need(data, offset, _GUID.size)
        prefix, entity_id = _GUID.unpack_from(data, offset)
        return cls(prefix, entity_id)

    @property
    def is_builtin(self):
        return self.entity_id < FIRST_USER_ENTITYID

    def __str__(self):
        return '%s.%08x' % (self.prefix.hex(), self.entity_id)


GUID_TYPE = TypeDescriptor('Guid', [
    Field('prefix', FixedBytes(GUID_PREFIX_SIZE)),
    Field('entity_id', UInt32),
], Guid)

GUID_UNKNOWN = Guid(bytes(GUID_PREFIX_SIZE), ENTITYID_UNKNOWN)


def make_guid_prefix(name, entropy):
    """64-bit NAME followed by 32 random bits"""
    if len(entropy) != 4:
        raise WireError('BAD_VALUE', _('guid prefix needs 4 random bytes'))
    return struct.pack('<Q', name) + bytes(entropy)


def prefix_name(prefix):
    """the NAME a guid prefix was derived from"""
    return struct.unpack_from('<Q', prefix)[0]


# -- messages ----------------------------------------------------------------

class SubmessageKind(enum.IntEnum):
    DATA = 1
    HEARTBEAT = 2
    ACKNACK = 3
    PARTICIPANT_ANNOUNCE = 4
    ENDPOINT_ANNOUNCE = 5
    HANDSHAKE = 6
    SECURE_ENVELOPE = 7


# DATA / ENDPOINT_ANNOUNCE flags
FLAG_DISPOSED = 0x01
FLAG_IRRELEVANT = 0x02
# body sealed by a protection scope, any kind
FLAG_PROTECTED = 0x04
# HEARTBEAT / ACKNACK of a builtin discovery endpoint
FLAG_BUILTIN = 0x08

_HEADER = struct.Struct('<4sBB12s')
_SUBHEADER = struct.Struct('<BBI')
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class Submessage(object):
    kind: int
    flags: int
    body: bytes

    def header_bytes(self):
        """kind and flags, the part an envelope authenticates"""
        return bytes((int(self.kind), self.flags))


@dataclass(frozen=True)
class Message(object):
    prefix: bytes
    submessages: tuple
    version: tuple = (VERSION_MAJOR, VERSION_MINOR)

    def header_bytes(self):
        return _HEADER.pack(MAGIC, self.version[0], self.version[1],
                            self.prefix)


def encode_submessages(submessages):
    out = bytearray()
    for sub in submessages:
        out += _SUBHEADER.pack(int(sub.kind), sub.flags, len(sub.body))
        out += sub.body
    return bytes(out)


def decode_submessages(data):
    """framed submessages; unknown kinds are skipped"""
    data = bytes(data)
    offset = 0
    submessages = []
    while offset < len(data):
        end = _need(data, offset, _SUBHEADER.size)
        kind, flags, length = _SUBHEADER.unpack_from(data, offset)
        body_end = _need(data, end, length)
        if kind in _KNOWN_KINDS:
            submessages.append(Submessage(SubmessageKind(kind), flags,
                                          data[end:body_end]))
        offset = body_end
    return tuple(submessages)

_KNOWN_KINDS = frozenset(k.value for k in SubmessageKind)


def encode_message(message):
    if len(message.prefix) != GUID_PREFIX_SIZE:
        raise WireError('BAD_VALUE', _('guid prefix must be 12 bytes'))
    return message.header_bytes() + encode_submessages(message.submessages)


def decode_message(data):
    data = bytes(data)
    _need(data, 0, _HEADER.size)
    magic, major, minor, prefix = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise WireError('BAD_MAGIC', _('not an agribus message'))
    if major != VERSION_MAJOR:
        raise WireError('BAD_VERSION', _('protocol version %(major)d.%(minor)d') %
                        {'major': major, 'minor': minor})
    return Message(prefix, decode_submessages(data[_HEADER.size:]),
                   (major, minor))


# -- submessage bodies -------------------------------------------------------

_DATA = struct.Struct('<12sIQ16s')
DATA_HEADER_SIZE = _DATA.size


@dataclass(frozen=True)
class DataBody(object):
    """DATA and ENDPOINT_ANNOUNCE share this layout"""
    writer: Guid
    seq: int
    key_hash: bytes
    payload: bytes = b''

    def encode(self):
        return _DATA.pack(self.writer.prefix, self.writer.entity_id,
                          self.seq, self.key_hash) + self.payload

    @classmethod
    def decode(cls, body):
        _need(body, 0, _DATA.size)
        prefix, entity_id, seq, key_hash = _DATA.unpack_from(body, 0)
        return cls(Guid(prefix, entity_id), seq, key_hash,
                   bytes(body[_DATA.size:]))


_HEARTBEAT = struct.Struct('<12sI12sIQQI')


@dataclass(frozen=True)
class Heartbeat(object):
    """first/last sequence numbers the writer can still deliver"""
    writer: Guid
    reader: Guid
    first: int
    last: int
    count: int

    def encode(self):
        return _HEARTBEAT.pack(self.writer.prefix, self.writer.entity_id,
                               self.reader.prefix, self.reader.entity_id,
                               self.first, self.last, self.count)

    @classmethod
    def decode(cls, body):
        _need(body, 0, _HEARTBEAT.size)
        if len(body) != _HEARTBEAT.size:
            raise WireError('TRAILING_BYTES', _('heartbeat body size'))
        wp, we, rp, re_, first, last, count = _HEARTBEAT.unpack_from(body, 0)
        return cls(Guid(wp, we), Guid(rp, re_), first, last, count)


_ACKNACK = struct.Struct('<12sI12sIQI')
ACKNACK_MAX_BITS = 256


@dataclass(frozen=True)
class AckNack(object):
    """everything below base received; missing lists gaps at or above it"""
    reader: Guid
    writer: Guid
    base: int
    missing: tuple
    count: int

    def encode(self):
        num_bits = 0
        if self.missing:
            num_bits = max(self.missing) - self.base + 1
        if num_bits > ACKNACK_MAX_BITS or \
           any(s < self.base for s in self.missing):
            raise WireError('BAD_VALUE', _('acknack bitmap out of range'))
        words = [0] * ((num_bits + 31) // 32)
        for seq in self.missing:
            bit = seq - self.base
            words[bit // 32] |= 1 << (bit % 32)
        return _ACKNACK.pack(self.reader.prefix, self.reader.entity_id,
                             self.writer.prefix, self.writer.entity_id,
                             self.base, num_bits) + \
            struct.pack('<%dI' % len(words), *words) + \
            struct.pack('<I', self.count)

    @classmethod
    def decode(cls, body):
        end = _need(body, 0, _ACKNACK.size)
        rp, re_, wp, we, base, num_bits = _ACKNACK.unpack_from(body, 0)
        if num_bits > ACKNACK_MAX_BITS:
            raise WireError('BAD_VALUE', _('acknack bitmap of %d bits') %
                            num_bits)
        word_count = (num_bits + 31) // 32
        _need(body, end, 4 * word_count + 4)
        if len(body) != end + 4 * word_count + 4:
            raise WireError('TRAILING_BYTES', _('acknack body size'))
        words = struct.unpack_from('<%dI' % word_count, body, end)
        count = struct.unpack_from('<I', body, end + 4 * word_count)[0]
        missing = tuple(base + bit for bit in range(num_bits)
                        if words[bit // 32] >> (bit % 32) & 1)
        return cls(Guid(rp, re_), Guid(wp, we), base, missing, count)
