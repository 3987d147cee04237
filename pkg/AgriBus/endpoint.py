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
writers, readers and the reliable delivery between them

A writer keeps a send history and one proxy per matched remote reader. While
a reliable reader has not acknowledged everything, the writer heartbeats it
(first/last available sequence numbers); the reader answers with an ACKNACK
listing the gaps and the writer resends them at once. Sequence numbers the
writer no longer holds are sent as IRRELEVANT so the reader can move on.

Endpoints are always used under the participant lock.
"""

import collections
import logging
import zlib
from dataclasses import dataclass

from .agribus_error import PubSubError
from .cache import InstanceCache, Sample, row_key
from .qos import Ownership, QosProfile
from .wire import (ACKNACK_MAX_BITS, FLAG_DISPOSED, FLAG_IRRELEVANT, AckNack,
                   DataBody, Guid, Heartbeat, KEY_HASH_SIZE, Submessage,
                   SubmessageKind, TypeDescriptor, compute_key_hash,
                   encode_sample)

log = logging.getLogger(__name__)

NO_KEY = bytes(KEY_HASH_SIZE)


@dataclass(frozen=True)
class TopicDescriptor(object):
    """a topic is identified by name, type and (through the qos) partition"""
    name: str
    type_descriptor: TypeDescriptor
    default_qos: QosProfile = QosProfile()

    @property
    def type_digest(self):
        return self.type_descriptor.digest


def topic_digest(name):
    """32-bit digest of a topic name, as carried in participant announcements"""
    return zlib.crc32(name.encode('utf-8')) & 0xFFFFFFFF


def key_hash_of(type_descriptor, value):
    if not type_descriptor.key_fields:
        return NO_KEY
    return compute_key_hash(type_descriptor, value)


class HistoryEntry(object):
    __slots__ = ('seq', 'key_hash', 'payload', 'flags', 'value', 'retired_by')

    def __init__(self, seq, key_hash, payload, flags, value):
        self.seq = seq
        self.key_hash = key_hash
        self.payload = payload
        self.flags = flags
        self.value = value
        # seq of the write that pushed this entry out of its instance history
        self.retired_by = None


class ReaderProxy(object):
    """a matched remote reader, as its writer tracks it"""

    def __init__(self, guid, peer, reliable, durable, relevant=None):
        self.guid = guid
        self.peer = peer
        self.reliable = reliable
        self.durable = durable
        self.relevant = relevant
        self.start_seq = 1
        self.match_seq = 0
        self.acked_through = 0
        self.acknowledged = False
        self.heartbeat_count = 0
        self.acknack_count = 0
        self.next_heartbeat = 0.0


class WriterProxy(object):
    """a matched remote writer, as its reader tracks it"""

    def __init__(self, guid, peer, reliable, strength=0):
        self.guid = guid
        self.peer = peer
        self.reliable = reliable
        self.strength = strength
        self.next_expected = None
        self.buffer = {}
        self.last_seq = 0
        self.heartbeat_count = 0
        self.heartbeat_last = 0
        self.acknack_due = None
        self.acknack_count = 0


class Endpoint(object):
    scope_kind = 'data'
    builtin = False

    def __init__(self, participant, entity_id, topic, qos):
        self.participant = participant
        self.guid = Guid(participant.prefix, entity_id)
        self.topic = topic
        self.qos = qos
        self.deleted = False

    def protected_topic(self, value):
        """topic name whose governance rule protects value"""
        return self.topic.name

    def __repr__(self):
        return '<%s %s on %s>' % (self.__class__.__name__, self.guid,
                                  self.topic.name)


class DataWriter(Endpoint):
    is_writer = True
    data_kind = SubmessageKind.DATA

    def __init__(self, participant, entity_id, topic, qos):
        Endpoint.__init__(self, participant, entity_id, topic, qos)
        config = participant.config
        self.heartbeat_period = config.getseconds('reliability',
                                                  'heartbeat_period')
        self.max_blocking_time = config.getseconds('reliability',
                                                   'max_blocking_time')
        self.max_unacked = config.getint('reliability', 'max_unacked')
        self.last_seq = 0
        self.history = collections.OrderedDict()
        self.instances = {}
        self.remote_readers = {}
        self.local_readers = {}
        self._retired = 0

    # -- writing -------------------------------------------------------------

    def write(self, value):
        """publish value, returns its sequence number"""
        return self._write(value, 0)

    def dispose(self, value):
        """remove the instance value belongs to from every matched reader"""
        return self._write(value, FLAG_DISPOSED)

    def _write(self, value, flags):
        descriptor = self.topic.type_descriptor
        payload = encode_sample(descriptor, value)
        self.participant.check_payload(payload)
        key_hash = key_hash_of(descriptor, value)
        participant = self.participant
        with participant.lock:
            if self.deleted:
                raise PubSubError('ALREADY_DELETED',
                                  _('writer on %s was deleted') % self.topic.name)
            if self.qos.ownership == Ownership.EXCLUSIVE and \
               not flags & FLAG_DISPOSED:
                participant.claim_instance(self, key_hash)
            self._wait_for_room()
            self.last_seq += 1
            entry = HistoryEntry(self.last_seq, key_hash, payload, flags, value)
            self._retain(entry)
            now = participant.clock.now()
            for reader in list(self.local_readers.values()):
                reader.on_local_sample(self, entry, now)
            for proxy in list(self.remote_readers.values()):
                self._send_entry(proxy, entry, now)
            self._purge()
        participant.flush_callbacks()
        return entry.seq

    def _wait_for_room(self):
        """live back-pressure on reliable writers"""
        if not (self.participant.is_live and self.qos.is_reliable):
            return
        clock = self.participant.clock
        deadline = clock.now() + self.max_blocking_time
        while self.unacked_count() >= self.max_unacked:
            remaining = deadline - clock.now()
            if remaining <= 0:
                raise PubSubError('TIMEOUT',
                                  _('reliable readers on %s stopped acknowledging')
                                  % self.topic.name)
            self.participant.acked.wait(remaining)

    def unacked_count(self):
        return self.last_seq - self._acked_floor()

    def _acked_floor(self):
        floor = self.last_seq
        for proxy in self.remote_readers.values():
            if proxy.reliable and proxy.acked_through < floor:
                floor = proxy.acked_through
        return floor

    def _retain(self, entry):
        self.history[entry.seq] = entry
        seqs = self.instances.setdefault(entry.key_hash, collections.deque())
        if entry.flags & FLAG_DISPOSED:
            for seq in seqs:
                self._retire(seq, entry.seq)
            self._retire(entry.seq, entry.seq)
            del self.instances[entry.key_hash]
            return
        seqs.append(entry.seq)
        limit = self.qos.history_limit
        if limit is not None:
            while len(seqs) > limit:
                self._retire(seqs.popleft(), entry.seq)

    def _retire(self, seq, by):
        entry = self.history.get(seq)
        if entry is not None and entry.retired_by is None:
            entry.retired_by = by
            self._retired += 1

    def _purge(self):
        """forget entries nobody can ask for any more"""
        floor = self._acked_floor()
        history = self.history
        if not self.qos.keeps_history:
            while history:
                seq = next(iter(history))
                if seq > floor:
                    break
                del history[seq]
        elif self._retired > 64:
            for seq in [s for s, e in history.items()
                        if s <= floor and e.retired_by is not None]:
                del history[seq]
            self._retired = sum(1 for e in history.values()
                                if e.retired_by is not None)

    # -- matching ------------------------------------------------------------

    def match_remote_reader(self, proxy, now):
        proxy.match_seq = self.last_seq
        if proxy.durable and self.qos.keeps_history and self.history:
            proxy.start_seq = next(iter(self.history))
        else:
            proxy.start_seq = self.last_seq + 1
        proxy.acked_through = proxy.start_seq - 1
        self.remote_readers[proxy.guid] = proxy
        if proxy.start_seq > self.last_seq:
            return
        submessages = []
        if proxy.reliable:
            submessages.append(self._heartbeat(proxy))
            proxy.next_heartbeat = now + self.heartbeat_period
        for seq, entry in self.history.items():
            if seq >= proxy.start_seq and self._relevant(proxy, entry):
                submessages.append(self.participant.seal_data(self, proxy.peer,
                                                              entry))
        self._send(proxy, submessages)

    def unmatch_remote_reader(self, guid):
        if self.remote_readers.pop(guid, None) is not None:
            self._purge()
            self.participant.acked.notify_all()
            return True
        return False

    def match_local_reader(self, reader, now):
        self.local_readers[reader.guid] = reader
        if reader.qos.keeps_history and self.qos.keeps_history:
            for entry in list(self.history.values()):
                if entry.retired_by is None:
                    reader.on_local_sample(self, entry, now)

    def unmatch_local_reader(self, guid):
        return self.local_readers.pop(guid, None) is not None

    # -- reliability ---------------------------------------------------------

    def _relevant(self, proxy, entry):
        if entry.retired_by is not None and entry.retired_by <= proxy.match_seq:
            return False
        return proxy.relevant is None or proxy.relevant(entry)

    def _data(self, proxy, seq):
        entry = self.history.get(seq)
        if entry is None or not self._relevant(proxy, entry):
            return Submessage(self.data_kind, FLAG_IRRELEVANT,
                              DataBody(self.guid, seq, NO_KEY).encode())
        return self.participant.seal_data(self, proxy.peer, entry)

    def _heartbeat(self, proxy):
        proxy.heartbeat_count += 1
        heartbeat = Heartbeat(self.guid, proxy.guid, proxy.acked_through + 1,
                              self.last_seq, proxy.heartbeat_count)
        return self.participant.seal_control(self, proxy.peer,
                                             SubmessageKind.HEARTBEAT,
                                             heartbeat.encode())

    def _send_entry(self, proxy, entry, now):
        if entry.seq < proxy.start_seq or not self._relevant(proxy, entry):
            return
        submessages = []
        if proxy.reliable and not proxy.acknowledged:
            submessages.append(self._heartbeat(proxy))
            proxy.next_heartbeat = now + self.heartbeat_period
        submessages.append(self.participant.seal_data(self, proxy.peer, entry))
        self._send(proxy, submessages)

    def _send(self, proxy, submessages):
        if submessages:
            self.participant.send_submessages(proxy.peer, submessages)

    def repair_tick(self, now):
        """heartbeats due at now, as (proxy, submessage) pairs

        nothing for best-effort writers or when every reader is acked up"""
        due = []
        if not self.qos.is_reliable:
            return due
        for proxy in self.remote_readers.values():
            if not proxy.reliable or proxy.acked_through >= self.last_seq:
                continue
            if now < proxy.next_heartbeat:
                continue
            proxy.next_heartbeat = now + self.heartbeat_period
            due.append((proxy, self._heartbeat(proxy)))
        return due

    def on_acknack(self, acknack, now):
        proxy = self.remote_readers.get(acknack.reader)
        if proxy is None or not proxy.reliable:
            return
        if acknack.count <= proxy.acknack_count:
            return
        proxy.acknack_count = acknack.count
        proxy.acknowledged = True
        acked = min(acknack.base - 1, self.last_seq)
        if acked > proxy.acked_through:
            proxy.acked_through = acked
        resend = [self._data(proxy, seq) for seq in acknack.missing
                  if proxy.start_seq <= seq <= self.last_seq]
        if resend:
            self.participant.stats['resent'] += len(resend)
            self._send(proxy, resend)
        self._purge()
        self.participant.acked.notify_all()


class DataReader(Endpoint):
    is_writer = False

    def __init__(self, participant, entity_id, topic, qos,
                 on_data_available=None, ignore_own=False):
        Endpoint.__init__(self, participant, entity_id, topic, qos)
        self.acknack_delay = participant.config.getseconds('reliability',
                                                           'acknack_delay')
        self.cache = InstanceCache(qos.history_limit)
        self.on_data_available = on_data_available
        self.ignore_own = ignore_own
        self.remote_writers = {}
        self.local_writers = {}
        self.received = 0
        self._last_update = {}

    def read_state(self):
        return self.participant.read_state(self)

    def take_new(self):
        return self.participant.take_new(self)

    # -- matching ------------------------------------------------------------

    def match_remote_writer(self, proxy):
        self.remote_writers[proxy.guid] = proxy

    def unmatch_remote_writer(self, guid):
        proxy = self.remote_writers.pop(guid, None)
        if proxy is not None:
            self.cache.release_owner(guid)
        return proxy is not None

    def _strength(self, strength):
        if self.qos.ownership == Ownership.EXCLUSIVE:
            return strength
        return None

    # -- receiving -----------------------------------------------------------

    def on_local_sample(self, writer, entry, now):
        self._accept(writer.guid, entry.seq, entry.flags, entry.key_hash,
                     entry.value, self._strength(writer.qos.ownership_strength),
                     now)

    def on_data(self, proxy, seq, flags, key_hash, value, now):
        if proxy.reliable:
            if proxy.next_expected is not None and seq < proxy.next_expected:
                return
            proxy.buffer[seq] = (flags, key_hash, value)
            self._drain(proxy, now)
        else:
            if seq <= proxy.last_seq:
                return
            proxy.last_seq = seq
            self._accept(proxy.guid, seq, flags, key_hash, value,
                         self._strength(proxy.strength), now)

    def on_heartbeat(self, proxy, heartbeat, now):
        if not proxy.reliable or heartbeat.count <= proxy.heartbeat_count:
            return
        proxy.heartbeat_count = heartbeat.count
        if proxy.next_expected is None:
            proxy.next_expected = heartbeat.first
        elif heartbeat.first > proxy.next_expected:
            # the writer no longer holds anything below first
            for seq in sorted(s for s in proxy.buffer if s < heartbeat.first):
                flags, key_hash, value = proxy.buffer.pop(seq)
                self._accept(proxy.guid, seq, flags, key_hash, value,
                             self._strength(proxy.strength), now)
            proxy.next_expected = heartbeat.first
        for seq in [s for s in proxy.buffer if s < proxy.next_expected]:
            del proxy.buffer[seq]
        self._drain(proxy, now)
        if heartbeat.last > proxy.heartbeat_last:
            proxy.heartbeat_last = heartbeat.last
        if proxy.acknack_due is None:
            proxy.acknack_due = now + self.acknack_delay

    def _drain(self, proxy, now):
        """deliver the contiguous run starting at next_expected"""
        if proxy.next_expected is None:
            return
        strength = self._strength(proxy.strength)
        while proxy.next_expected in proxy.buffer:
            flags, key_hash, value = proxy.buffer.pop(proxy.next_expected)
            self._accept(proxy.guid, proxy.next_expected, flags, key_hash,
                         value, strength, now)
            proxy.next_expected += 1

    def _accept(self, writer_guid, seq, flags, key_hash, value, strength, now):
        if flags & FLAG_IRRELEVANT:
            return
        if flags & FLAG_DISPOSED:
            self.cache.dispose(key_hash)
            self._last_update.pop(key_hash, None)
            return
        sample = Sample(value, key_hash, writer_guid, seq, now)
        key_value = row_key(self.topic.type_descriptor, value)
        if not self.cache.add(sample, key_value, strength):
            self.participant.stats['dropped_not_owner'] += 1
            return
        self.received += 1
        self._last_update[key_hash] = now
        self.participant.queue_callback(self, sample)

    def repair_tick(self, now):
        """ACKNACKs due at now, as (proxy, submessage) pairs"""
        due = []
        for proxy in self.remote_writers.values():
            if not proxy.reliable or proxy.acknack_due is None or \
               now < proxy.acknack_due:
                continue
            proxy.acknack_due = None
            base = proxy.next_expected
            last = min(proxy.heartbeat_last, base + ACKNACK_MAX_BITS - 1)
            missing = tuple(seq for seq in range(base, last + 1)
                            if seq not in proxy.buffer)
            proxy.acknack_count += 1
            acknack = AckNack(self.guid, proxy.guid, base, missing,
                              proxy.acknack_count)
            due.append((proxy, self.participant.seal_control(
                self, proxy.peer, SubmessageKind.ACKNACK, acknack.encode())))
        return due

    def missed_deadlines(self, now):
        """key hashes not updated within the deadline period"""
        if self.qos.deadline_ms is None:
            return []
        period = self.qos.deadline_ms / 1000.0
        missed = [key for key, seen in self._last_update.items()
                  if now - seen > period]
        for key in missed:
            self._last_update[key] = now
        return missed
