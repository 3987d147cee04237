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
the domain participant

A participant owns one transport, the discovery machinery and all of its
writers and readers. Protocol state is guarded by one re-entrant lock;
on_data_available callbacks and event listeners run after it is released,
in the order they were queued.
"""

import collections
import dataclasses
import enum
import logging
import os
import queue
import threading
import time

from .agribus_error import (PubSubError, SecurityError, TransportError,
                            WireError)
from .discovery import Discovery, Event, EventKind, PeerState
from .endpoint import DataReader, DataWriter, key_hash_of
from .globals import config as global_config
from .qos import Ownership, qos_compatible
from .security import (SCOPE_DISCOVERY, SCOPE_LIVELINESS, SCOPE_METADATA,
                       SCOPE_RTPS, Action, Decision, ProtectionKind,
                       check_permission, data_scope, protect, unprotect)
from .timer import start_timer, stop_timer
from .transport import TransportConfig, open_participant_transport
from .wire import (DATA_HEADER_SIZE, FIRST_USER_ENTITYID, FLAG_BUILTIN,
                   FLAG_IRRELEVANT, FLAG_PROTECTED, HEADER_SIZE, AckNack,
                   DataBody, Heartbeat, Message, Submessage, SubmessageKind,
                   decode_message, decode_sample, decode_submessages,
                   encode_message, encode_submessages, make_guid_prefix)

log = logging.getLogger(__name__)

EVENT_QUEUE_SIZE = 1024
# room left in a datagram for the message header and an rtps envelope
FRAME_OVERHEAD = HEADER_SIZE + 6 + 64

# submessages anybody may send, authenticated or not
_OPEN_KINDS = frozenset((SubmessageKind.PARTICIPANT_ANNOUNCE,
                         SubmessageKind.HANDSHAKE))

_REJECTION_STATS = {
    'MAC_INVALID': 'rejected_mac',
    'NONCE_REPLAYED': 'rejected_replay',
    'KIND_MISMATCH': 'rejected_kind',
    'NOT_AUTHENTICATED': 'rejected_unauthenticated',
}


def plain_value(value):
    """JSON friendly rendering of sample values"""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return dict((f.name, plain_value(getattr(value, f.name)))
                    for f in dataclasses.fields(value))
    if isinstance(value, enum.Enum):
        return value.name
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, (list, tuple)):
        return [plain_value(item) for item in value]
    if isinstance(value, dict):
        return dict((str(key), plain_value(item)) for key, item in value.items())
    return value


class Participant(object):

    def __init__(self, domain_id, name, security_config=None, network=None,
                 config=None, discover_all=False):
        if not 0 < name <= 0xFFFFFFFFFFFFFFFF:
            raise PubSubError('BAD_NAME', _('NAME must be a nonzero 64-bit value'))
        if security_config is not None:
            if security_config.name != name:
                raise SecurityError('SECURITY_CONFIG_INVALID',
                                    _('identity issued for NAME %X') %
                                    security_config.name)
            if security_config.governance.domain_id != domain_id:
                raise SecurityError('SECURITY_CONFIG_INVALID',
                                    _('governance written for domain %d') %
                                    security_config.governance.domain_id)
        self.domain_id = domain_id
        self.name = name
        self.security = security_config
        self.config = config or global_config
        self.discover_all = discover_all
        self.network = network
        self.is_live = network is None
        self.transport_config = TransportConfig.for_domain(domain_id,
                                                           self.config)
        self.transport = open_participant_transport(self.transport_config,
                                                    network)
        self.clock = self.transport.clock
        entropy = network.entropy(4) if network is not None else os.urandom(4)
        self.prefix = make_guid_prefix(name, entropy)
        self.lock = threading.RLock()
        self.acked = threading.Condition(self.lock)
        self.closed = False
        self.stats = collections.Counter()
        self.events = queue.Queue(EVENT_QUEUE_SIZE)
        self.listeners = []
        self.writers = {}
        self.readers = {}
        self.topics = {}
        # remote writer guid -> [(local reader, writer proxy)]
        self.routes = {}
        self._next_entity_id = FIRST_USER_ENTITYID
        self._pending = []
        self._callback_lock = threading.RLock()
        self.watchdog = self.config.getboolean('debug', 'callback_watchdog')
        self.callback_budget = self.config.getint('debug', 'callback_budget')
        self.discovery = Discovery(self)
        self.transport.set_handler(self._on_datagram)
        if network is not None:
            network.add_ticker(self)
        else:
            start_timer(self)
        log.info('participant %X on domain %d, %s', name, domain_id,
                 _('secure') if security_config else _('security not used'))

    def __repr__(self):
        return '<Participant %X %s>' % (self.name, self.prefix.hex())

    # -- endpoints -----------------------------------------------------------

    def create_writer(self, topic, qos=None):
        qos = qos if qos is not None else topic.default_qos
        with self.lock:
            self._check_open()
            self._check_local_permission(Action.PUBLISH, topic, qos)
            self._register_topic(topic)
            writer = DataWriter(self, self._allocate_entity_id(), topic, qos)
            self.writers[writer.guid.entity_id] = writer
            for reader in self._local_endpoints(self.readers, topic.name):
                self._match_local(writer, reader)
            self.discovery.add_local_endpoint(writer, self.clock.now())
        self.flush_callbacks()
        return writer

    def create_reader(self, topic, qos=None, on_data_available=None,
                      ignore_own=False):
        qos = qos if qos is not None else topic.default_qos
        with self.lock:
            self._check_open()
            self._check_local_permission(Action.SUBSCRIBE, topic, qos)
            self._register_topic(topic)
            reader = DataReader(self, self._allocate_entity_id(), topic, qos,
                                on_data_available, ignore_own)
            self.readers[reader.guid.entity_id] = reader
            for writer in self._local_endpoints(self.writers, topic.name):
                self._match_local(writer, reader)
            self.discovery.add_local_endpoint(reader, self.clock.now())
        self.flush_callbacks()
        return reader

    def delete_writer(self, writer):
        with self.lock:
            if writer.deleted:
                return
            writer.deleted = True
            self.writers.pop(writer.guid.entity_id, None)
            for reader in list(writer.local_readers.values()):
                reader.local_writers.pop(writer.guid, None)
                reader.cache.release_owner(writer.guid)
            writer.local_readers.clear()
            self.discovery.remove_local_endpoint(writer, self.clock.now())
            self.acked.notify_all()
        self.flush_callbacks()

    def delete_reader(self, reader):
        with self.lock:
            if reader.deleted:
                return
            reader.deleted = True
            self.readers.pop(reader.guid.entity_id, None)
            for writer in list(reader.local_writers.values()):
                writer.unmatch_local_reader(reader.guid)
            reader.local_writers.clear()
            self.discovery.remove_local_endpoint(reader, self.clock.now())
        self.flush_callbacks()

    def read_state(self, reader):
        return reader.cache.read_state()

    def take_new(self, reader):
        return reader.cache.take_new()

    def _allocate_entity_id(self):
        entity_id = self._next_entity_id
        self._next_entity_id += 1
        return entity_id

    def _check_open(self):
        if self.closed:
            raise PubSubError('CLOSED', _('participant %X is closed') % self.name)

    def _register_topic(self, topic):
        known = self.topics.get(topic.name)
        if known is not None:
            if known.type_digest != topic.type_digest:
                raise PubSubError('TYPE_MISMATCH',
                                  _('topic %(topic)s is already used with type '
                                    '%(type)s') %
                                  {'topic': topic.name,
                                   'type': known.type_descriptor.name})
            return
        self.topics[topic.name] = topic
        self.discovery.topics_changed(self.clock.now())

    def _check_local_permission(self, action, topic, qos):
        if self.security is None:
            return
        rule = self.security.governance.rule_for(topic.name)
        if action == Action.PUBLISH:
            controlled = rule.enable_write_access_control
        else:
            controlled = rule.enable_read_access_control
        if not controlled:
            return
        if not any(check_permission(self.security.permissions, action,
                                    topic.name, partition) == Decision.ALLOW
                   for partition in qos.partitions or ('',)):
            raise SecurityError('PERMISSION_DENIED',
                                _('no grant to %(action)s %(topic)s in %(parts)r') %
                                {'action': action.value, 'topic': topic.name,
                                 'parts': list(qos.partitions)})

    @staticmethod
    def _local_endpoints(endpoints, topic_name):
        return [endpoint for endpoint in endpoints.values()
                if not endpoint.builtin and endpoint.topic.name == topic_name]

    def _match_local(self, writer, reader):
        if reader.ignore_own:
            return
        compatible = qos_compatible(writer.qos, reader.qos)
        if not compatible:
            self.emit(EventKind.INCOMPATIBLE_QOS, topic=writer.topic.name,
                      writer=str(writer.guid), reader=str(reader.guid),
                      reason=compatible.reason)
            return
        reader.local_writers[writer.guid] = writer
        writer.match_local_reader(reader, self.clock.now())
        self.emit(EventKind.ENDPOINT_MATCHED, topic=writer.topic.name,
                  writer=str(writer.guid), reader=str(reader.guid))

    def claim_instance(self, writer, key_hash):
        """raise unless writer may update the instance on an exclusive topic"""
        strength = writer.qos.ownership_strength
        for other in self._local_endpoints(self.writers, writer.topic.name):
            if other is writer or other.qos.ownership != Ownership.EXCLUSIVE:
                continue
            if key_hash in other.instances and \
               other.qos.ownership_strength >= strength:
                self._ownership_violation(writer, other.guid)
        for reader in self._local_endpoints(self.readers, writer.topic.name):
            owner = reader.cache.owner_of(key_hash)
            if owner is None or owner == writer.guid:
                continue
            proxy = reader.remote_writers.get(owner)
            if proxy is not None and proxy.strength >= strength:
                self._ownership_violation(writer, owner)

    def _ownership_violation(self, writer, owner):
        raise PubSubError('OWNERSHIP_VIOLATION',
                          _('instance on %(topic)s is owned by %(owner)s') %
                          {'topic': writer.topic.name, 'owner': owner})

    # -- events and callbacks ------------------------------------------------

    def emit(self, kind, **detail):
        event = Event(kind, detail, self.clock.now())
        if kind in (EventKind.AUTHENTICATION_FAILED,
                    EventKind.PARTITION_CONFLICT,
                    EventKind.PARTICIPANT_CONFLICT):
            log.warning('%X %s %r', self.name, kind.value, detail)
        else:
            log.info('%X %s %r', self.name, kind.value, detail)
        try:
            self.events.put_nowait(event)
        except queue.Full:
            self.events.get_nowait()
            self.events.put_nowait(event)
        with self.lock:
            for listener in self.listeners:
                self._pending.append((listener, event))

    def add_listener(self, listener):
        with self.lock:
            self.listeners.append(listener)

    def remove_listener(self, listener):
        with self.lock:
            if listener in self.listeners:
                self.listeners.remove(listener)

    def poll_events(self):
        """every event queued since the last poll"""
        events = []
        while True:
            try:
                events.append(self.events.get_nowait())
            except queue.Empty:
                return events

    def queue_callback(self, reader, sample):
        if reader.on_data_available is not None:
            self._pending.append((reader.on_data_available, sample))

    def flush_callbacks(self):
        with self._callback_lock:
            with self.lock:
                pending, self._pending = self._pending, []
            for callback, argument in pending:
                self._run_callback(callback, argument)

    def _run_callback(self, callback, argument):
        started = time.monotonic() if self.watchdog else None
        try:
            callback(argument)
        except Exception:
            log.exception('callback %r failed', callback)
        if started is not None:
            spent = (time.monotonic() - started) * 1000.0
            if spent > self.callback_budget:
                self.stats['slow_callbacks'] += 1
                log.warning('callback %r blocked the receive path for %.1f ms',
                            callback, spent)

    # -- protection ----------------------------------------------------------

    def expected_kind(self, scope_kind, topic_name, peer):
        """protection kind governance asks for on traffic with peer"""
        if self.security is None or peer is None or peer.keys is None:
            return ProtectionKind.NONE
        governance = self.security.governance
        if scope_kind == 'liveliness':
            return governance.liveliness_protection_kind
        rule = governance.rule_for(topic_name)
        if scope_kind == 'discovery':
            if rule.enable_discovery_protection:
                return governance.discovery_protection_kind
            return ProtectionKind.NONE
        if scope_kind == 'metadata':
            return rule.metadata_protection_kind
        return rule.data_protection_kind

    def _data_key_scope(self, endpoint):
        if endpoint.scope_kind == 'discovery':
            return SCOPE_DISCOVERY
        return data_scope(endpoint.topic.name)

    def seal_data(self, writer, peer, entry):
        """DATA or ENDPOINT_ANNOUNCE submessage for one history entry"""
        header = DataBody(writer.guid, entry.seq, entry.key_hash).encode()
        if peer.keys is None:
            return Submessage(writer.data_kind, entry.flags,
                              header + entry.payload)
        flags = entry.flags | FLAG_PROTECTED
        kind = self.expected_kind(writer.scope_kind,
                                  writer.protected_topic(entry.value), peer)
        aad = bytes((int(writer.data_kind), flags)) + header
        return Submessage(writer.data_kind, flags,
                          header + protect(self._data_key_scope(writer), kind,
                                           peer.keys, entry.payload, aad))

    def seal_control(self, endpoint, peer, kind, body):
        """HEARTBEAT or ACKNACK submessage"""
        flags = FLAG_BUILTIN if endpoint.builtin else 0
        if peer.keys is None:
            return Submessage(kind, flags, body)
        flags |= FLAG_PROTECTED
        if endpoint.builtin:
            scope, scope_kind = SCOPE_LIVELINESS, 'liveliness'
        else:
            scope, scope_kind = SCOPE_METADATA, 'metadata'
        protection = self.expected_kind(scope_kind, endpoint.topic.name, peer)
        return Submessage(kind, flags,
                          protect(scope, protection, peer.keys, body,
                                  bytes((int(kind), flags))))

    def _rtps_kind(self, peer):
        if self.security is None or peer is None or peer.keys is None:
            return ProtectionKind.NONE
        return self.security.governance.rtps_protection_kind

    # -- sending -------------------------------------------------------------

    def send_submessages(self, peer, submessages):
        """unicast to a peer, sealed with rtps protection when required"""
        for chunk in self._chunks(submessages):
            data = self._frame(peer, chunk)
            try:
                self.transport.send(peer.locator, data)
            except TransportError as error:
                log.warning('dropping message to %s: %s', peer.locator, error)

    def send_plain(self, locator, submessages):
        """announcements and handshakes, never wrapped"""
        data = encode_message(Message(self.prefix, tuple(submessages)))
        try:
            return self.transport.send(locator, data)
        except TransportError as error:
            log.warning('dropping message to %s: %s', locator, error)
            return False

    def check_payload(self, payload):
        """refuse samples that would not fit in one datagram"""
        self.transport.check_size(bytes(len(payload) + DATA_HEADER_SIZE +
                                        FRAME_OVERHEAD))

    def _chunks(self, submessages):
        room = self.transport_config.max_datagram - FRAME_OVERHEAD
        chunk, size = [], 0
        for sub in submessages:
            cost = 6 + len(sub.body)
            if chunk and size + cost > room:
                yield chunk
                chunk, size = [], 0
            chunk.append(sub)
            size += cost
        if chunk:
            yield chunk

    def _frame(self, peer, submessages):
        kind = self._rtps_kind(peer)
        if kind == ProtectionKind.NONE:
            return encode_message(Message(self.prefix, tuple(submessages)))
        envelope_header = bytes((int(SubmessageKind.SECURE_ENVELOPE), 0))
        aad = Message(self.prefix, ()).header_bytes() + envelope_header
        body = protect(SCOPE_RTPS, kind, peer.keys,
                       encode_submessages(submessages), aad)
        return encode_message(Message(
            self.prefix,
            (Submessage(SubmessageKind.SECURE_ENVELOPE, 0, body),)))

    # -- receiving -----------------------------------------------------------

    def _on_datagram(self, data, source):
        if self.closed:
            return
        try:
            message = decode_message(data)
        except WireError as error:
            self._count_rejection(error, source)
            return
        if message.prefix == self.prefix:
            return
        with self.lock:
            if self.closed:
                return
            now = self.clock.now()
            peer = self.discovery.peers.get(message.prefix)
            try:
                for sub in self._admit(message, peer):
                    self._dispatch(message, peer, sub, source, now)
            except (WireError, SecurityError) as error:
                self._count_rejection(error, source)
        self.flush_callbacks()

    def _count_rejection(self, error, source):
        if isinstance(error, WireError):
            stat = 'rejected_decode'
        else:
            stat = _REJECTION_STATS.get(error.code, 'rejected_security')
        self.stats[stat] += 1
        log.debug('rejected message from %s: %s', source, error)

    def _admit(self, message, peer):
        """the submessages of message that may be processed"""
        submessages = message.submessages
        if not submessages:
            raise WireError('EMPTY_MESSAGE', _('message without submessages'))
        if all(sub.kind in _OPEN_KINDS for sub in submessages):
            return submessages
        if peer is None or peer.state != PeerState.MATCHED:
            raise SecurityError('NOT_AUTHENTICATED',
                                _('traffic from a participant not matched'))
        kind = self._rtps_kind(peer)
        if kind == ProtectionKind.NONE:
            if any(sub.kind == SubmessageKind.SECURE_ENVELOPE
                   for sub in submessages):
                raise SecurityError('KIND_MISMATCH',
                                    _('unexpected rtps envelope'))
            return submessages
        if len(submessages) != 1 or \
           submessages[0].kind != SubmessageKind.SECURE_ENVELOPE:
            raise SecurityError('KIND_MISMATCH',
                                _('rtps protection missing'))
        envelope = submessages[0]
        plaintext = unprotect(SCOPE_RTPS, kind, peer.keys, envelope.body,
                              message.header_bytes() + envelope.header_bytes())
        inner = decode_submessages(plaintext)
        if any(sub.kind == SubmessageKind.SECURE_ENVELOPE for sub in inner):
            raise WireError('BAD_VALUE', _('nested rtps envelope'))
        return inner

    def _dispatch(self, message, peer, sub, source, now):
        kind = sub.kind
        if kind == SubmessageKind.PARTICIPANT_ANNOUNCE:
            self.discovery.on_participant_announcement(message.prefix, sub,
                                                       source, now)
        elif kind == SubmessageKind.HANDSHAKE:
            self.discovery.on_handshake(message.prefix, sub, source, now)
        elif kind in (SubmessageKind.DATA, SubmessageKind.ENDPOINT_ANNOUNCE):
            self._on_data(peer, sub, now)
        elif kind == SubmessageKind.HEARTBEAT:
            self._on_heartbeat(peer, sub, now)
        elif kind == SubmessageKind.ACKNACK:
            self._on_acknack(peer, sub, now)

    def _open(self, peer, sub, payload, scope, aad):
        """(protection kind, plaintext) of a possibly sealed body"""
        if peer.keys is None:
            if sub.flags & FLAG_PROTECTED:
                raise SecurityError('KIND_MISMATCH',
                                    _('sealed body without a session'))
            return ProtectionKind.NONE, payload
        if not sub.flags & FLAG_PROTECTED or not payload:
            raise SecurityError('KIND_MISMATCH', _('unsealed body'))
        try:
            kind = ProtectionKind(payload[0])
        except ValueError:
            raise SecurityError('KIND_MISMATCH',
                                _('unknown protection kind %d') % payload[0])
        return kind, unprotect(scope, kind, peer.keys, payload, aad)

    def _on_data(self, peer, sub, now):
        body = DataBody.decode(sub.body)
        if body.writer.prefix != peer.prefix:
            raise WireError('FOREIGN_GUID', _('writer of another participant'))
        builtin = sub.kind == SubmessageKind.ENDPOINT_ANNOUNCE
        if body.writer.is_builtin != builtin:
            raise WireError('BAD_VALUE', _('data kind does not fit its writer'))
        routes = self.routes.get(body.writer)
        if not routes:
            return
        reader = routes[0][0]
        value = None
        if not sub.flags & FLAG_IRRELEVANT:
            descriptor = reader.topic.type_descriptor
            kind, payload = self._open(
                peer, sub, body.payload, self._data_key_scope(reader),
                sub.header_bytes() + sub.body[:DATA_HEADER_SIZE])
            value = decode_sample(descriptor, payload)
            if key_hash_of(descriptor, value) != body.key_hash:
                raise WireError('KEY_HASH_MISMATCH',
                                _('key hash does not fit the sample'))
            topic_name = reader.protected_topic(value)
            if kind != self.expected_kind(reader.scope_kind, topic_name, peer):
                raise SecurityError('KIND_MISMATCH',
                                    _('%s sealed with the wrong kind') %
                                    topic_name)
            if peer.keys is None and self.security is not None and \
               not self.security.governance.rule_for(topic_name).is_open:
                raise SecurityError('NOT_AUTHENTICATED',
                                    _('protected topic %s from an '
                                      'unauthenticated participant') %
                                    topic_name)
        self.stats['samples_received'] += 1
        for reader, proxy in list(routes):
            reader.on_data(proxy, body.seq, sub.flags, body.key_hash, value,
                           now)

    def _open_control(self, peer, sub):
        scope = SCOPE_LIVELINESS if sub.flags & FLAG_BUILTIN else SCOPE_METADATA
        return self._open(peer, sub, sub.body, scope, sub.header_bytes())

    def _check_control(self, endpoint, sub, kind, peer):
        if endpoint.builtin != bool(sub.flags & FLAG_BUILTIN):
            raise SecurityError('KIND_MISMATCH', _('builtin flag mismatch'))
        scope_kind = 'liveliness' if endpoint.builtin else 'metadata'
        if kind != self.expected_kind(scope_kind, endpoint.topic.name, peer):
            raise SecurityError('KIND_MISMATCH',
                                _('control for %s sealed with the wrong kind') %
                                endpoint.topic.name)

    def _on_heartbeat(self, peer, sub, now):
        kind, plaintext = self._open_control(peer, sub)
        heartbeat = Heartbeat.decode(plaintext)
        if heartbeat.writer.prefix != peer.prefix:
            raise WireError('FOREIGN_GUID', _('heartbeat for another writer'))
        for reader, proxy in self.routes.get(heartbeat.writer, ()):
            if reader.guid == heartbeat.reader:
                self._check_control(reader, sub, kind, peer)
                reader.on_heartbeat(proxy, heartbeat, now)
                return

    def _on_acknack(self, peer, sub, now):
        kind, plaintext = self._open_control(peer, sub)
        acknack = AckNack.decode(plaintext)
        if acknack.reader.prefix != peer.prefix:
            raise WireError('FOREIGN_GUID', _('acknack from another reader'))
        if acknack.writer.prefix != self.prefix:
            return
        writer = self.writers.get(acknack.writer.entity_id)
        if writer is None:
            return
        self._check_control(writer, sub, kind, peer)
        writer.on_acknack(acknack, now)

    # -- periodic work -------------------------------------------------------

    def tick(self, now):
        """announcements, leases, handshake retries, repair and deadlines"""
        with self.lock:
            if self.closed:
                return
            self.discovery.tick(now)
            endpoints = list(self.writers.values()) + list(self.readers.values())
            for endpoint in endpoints:
                for proxy, sub in endpoint.repair_tick(now):
                    self.send_submessages(proxy.peer, [sub])
            for reader in list(self.readers.values()):
                for key_hash in reader.missed_deadlines(now):
                    self.emit(EventKind.DEADLINE_MISSED,
                              topic=reader.topic.name, reader=str(reader.guid),
                              key_hash=key_hash.hex())
        self.flush_callbacks()

    def close(self):
        """unannounce and release the transport"""
        with self.lock:
            if self.closed:
                return
            self.discovery.leave()
            self.closed = True
            self.acked.notify_all()
        if self.network is not None:
            self.network.remove_ticker(self)
        else:
            stop_timer(self)
        self.transport.close()
        log.info('participant %X closed', self.name)

    def graph(self):
        """participants, endpoints, matches and reader matrices"""
        with self.lock:
            graph = self.discovery.graph()
            graph['matrices'] = dict(
                (reader.topic.name, [
                    {'key': plain_value(row.key_value),
                     'writer': str(row.last_writer),
                     'samples': [plain_value(s.value) for s in row.samples]}
                    for row in reader.cache.read_state()])
                for reader in self.readers.values() if not reader.builtin)
            graph['stats'] = dict(self.stats)
            return graph


def create_participant(domain_id, name, security_config=None, network=None,
                       config=None, discover_all=False):
    """join a domain; security is loaded only with a security_config"""
    return Participant(domain_id, name, security_config, network, config,
                       discover_all)


def create_writer(participant, topic, qos=None):
    return participant.create_writer(topic, qos)


def create_reader(participant, topic, qos=None, on_data_available=None,
                  ignore_own=False):
    return participant.create_reader(topic, qos, on_data_available,
                                     ignore_own)


def write(writer, value):
    return writer.write(value)


def dispose(writer, value):
    return writer.dispose(value)


def read_state(reader):
    return reader.read_state()


def take_new(reader):
    return reader.take_new()


def reliable_repair_tick(endpoint, now):
    """control submessages endpoint wants sent at now, as (proxy, submessage)"""
    with endpoint.participant.lock:
        return endpoint.repair_tick(now)
