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
quality of service profiles and the offered/requested matching rule
"""

import dataclasses
import enum
from dataclasses import dataclass
from typing import Optional

from .agribus_error import PubSubError
from .wire import (Codec, EnumOf, Field, Int32, Sequence, Text, TypeDescriptor,
                   UInt32)

MAX_PARTITIONS = 16
MAX_PARTITION_LENGTH = 64


class Reliability(enum.IntEnum):
    BEST_EFFORT = 0
    RELIABLE = 1


class Durability(enum.IntEnum):
    VOLATILE = 0
    TRANSIENT_LOCAL = 1
    DURABLE = 2


class HistoryKind(enum.IntEnum):
    KEEP_LAST = 0
    KEEP_ALL = 1


class Ownership(enum.IntEnum):
    SHARED = 0
    EXCLUSIVE = 1


@dataclass(frozen=True)
class QosProfile(object):
    reliability: Reliability = Reliability.BEST_EFFORT
    durability: Durability = Durability.VOLATILE
    history: HistoryKind = HistoryKind.KEEP_LAST
    depth: int = 1
    ownership: Ownership = Ownership.SHARED
    ownership_strength: int = 0
    deadline_ms: Optional[int] = None
    partitions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'partitions', tuple(self.partitions))
        if self.history == HistoryKind.KEEP_LAST and self.depth < 1:
            raise PubSubError('BAD_QOS', _('KEEP_LAST needs depth >= 1'))
        if self.deadline_ms is not None and self.deadline_ms <= 0:
            raise PubSubError('BAD_QOS', _('deadline period must be positive'))

    @property
    def is_reliable(self):
        return self.reliability == Reliability.RELIABLE

    @property
    def keeps_history(self):
        """late joiners get retained samples"""
        return self.durability >= Durability.TRANSIENT_LOCAL

    @property
    def history_limit(self):
        """deque bound, None for KEEP_ALL"""
        if self.history == HistoryKind.KEEP_ALL:
            return None
        return self.depth

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Compatibility(object):
    compatible: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.compatible

COMPATIBLE = Compatibility(True)


def partitions_intersect(offered, requested):
    """exact string equality; the empty list is the default partition"""
    return bool(set(offered or ('',)) & set(requested or ('',)))


def qos_compatible(offered, requested):
    """decide whether a writer offering one profile may feed a reader
    requesting another; the first failing criterion is the reason"""
    if offered.reliability < requested.reliability:
        return Compatibility(False, 'RELIABILITY')
    if offered.durability < requested.durability:
        return Compatibility(False, 'DURABILITY')
    if requested.deadline_ms is not None and (
            offered.deadline_ms is None or
            offered.deadline_ms > requested.deadline_ms):
        return Compatibility(False, 'DEADLINE')
    if not partitions_intersect(offered.partitions, requested.partitions):
        return Compatibility(False, 'PARTITION')
    if offered.ownership != requested.ownership:
        return Compatibility(False, 'OWNERSHIP')
    return COMPATIBLE


class _Period(Codec):
    """optional millisecond period, 0 on the wire means absent"""
    signature = 'period'

    def pack(self, value, out):
        UInt32.pack(value or 0, out)

    def unpack(self, buf, offset):
        value, offset = UInt32.unpack(buf, offset)
        return (value or None), offset


QOS_TYPE = TypeDescriptor('QosProfile', [
    Field('reliability', EnumOf(Reliability)),
    Field('durability', EnumOf(Durability)),
    Field('history', EnumOf(HistoryKind)),
    Field('depth', UInt32),
    Field('ownership', EnumOf(Ownership)),
    Field('ownership_strength', Int32),
    Field('deadline_ms', _Period()),
    Field('partitions', Sequence(Text(MAX_PARTITION_LENGTH), MAX_PARTITIONS)),
], QosProfile)
