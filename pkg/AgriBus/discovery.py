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
two-phase discovery

Participants announce themselves on the discovery multicast group. Once a
peer is admitted (and authenticated, when governance asks for it) the
endpoint announcements are exchanged over a builtin reliable writer/reader
pair, and every compatible local/remote endpoint pair is matched.

Everything here runs under the participant lock.
"""

import enum
import logging
from dataclasses import dataclass, field

from .agribus_error import SecurityError, WireError
from .endpoint import (DataReader, DataWriter, ReaderProxy, TopicDescriptor,
                       WriterProxy, topic_digest)
from .qos import (QOS_TYPE, Durability, HistoryKind, QosProfile, Reliability,
                  qos_compatible)
from .security import (HANDSHAKE_TYPE, Action, Decision, Handshake,
                       HandshakeKind, check_permission)
from .transport import Locator
from .wire import (ENTITYID_SEDP_READER, ENTITYID_SEDP_WRITER, GUID_PREFIX_SIZE,
                   GUID_TYPE, Bytes, EnumOf, Field, FixedBytes, Guid, Sequence,
                   Submessage, SubmessageKind, Text, TypeDescriptor, UInt16,
                   UInt32, UInt64, FLAG_DISPOSED, FLAG_IRRELEVANT,
                   decode_sample, encode_sample, prefix_name)

log = logging.getLogger(__name__)

FLAG_SECURE = 0x1
FLAG_ALLOW_UNAUTHENTICATED = 0x2
FLAG_DISCOVER_ALL = 0x4
FLAG_LEAVING = 0x8

MAX_TOPICS = 1024
ENDPOINTS_TOPIC = 'agribus.endpoints'


class EventKind(enum.Enum):
    PARTICIPANT_FOUND = 'participant_found'
    PARTICIPANT_LOST = 'participant_lost'
    PARTICIPANT_CONFLICT = 'participant_conflict'
    PARTICIPANT_AUTHENTICATED = 'participant_authenticated'
    LIVELINESS_LOST = 'liveliness_lost'
    ENDPOINT_MATCHED = 'endpoint_matched'
    ENDPOINT_UNMATCHED = 'endpoint_unmatched'
    INCOMPATIBLE_QOS = 'incompatible_qos'
    INCOMPATIBLE_TYPE = 'incompatible_type'
    PERMISSION_DENIED = 'permission_denied'
    AUTHENTICATION_FAILED = 'authentication_failed'
    UNAUTHENTICATED_IGNORED = 'unauthenticated_ignored'
    KIND_MISMATCH = 'kind_mismatch'
    DEADLINE_MISSED = 'deadline_missed'
    PARTITION_CONFLICT = 'partition_conflict'


@dataclass(frozen=True)
class Event(object):
    kind: EventKind
    detail: dict = field(default_factory=dict)
    time: float = 0.0


# -- announcement types ------------------------------------------------------

@dataclass(frozen=True)
class ParticipantAnnouncement(object):
    prefix: bytes
    name: int
    domain_id: int
    address: str
    port: int
    lease_ms: int
    flags: int = 0
    identity_digest: bytes = b''
    governance_digest: bytes = b''
    topic_digests: tuple = ()

PARTICIPANT_ANNOUNCEMENT_TYPE = TypeDescriptor('ParticipantAnnouncement', [
    Field('prefix', FixedBytes(GUID_PREFIX_SIZE), key=True),
    Field('name', UInt64),
    Field('domain_id', UInt32),
    Field('address', Text(64)),
    Field('port', UInt16),
    Field('lease_ms', UInt32),
    Field('flags', UInt32),
    Field('identity_digest', Bytes(32)),
    Field('governance_digest', Bytes(32)),
    Field('topic_digests', Sequence(UInt32, MAX_TOPICS)),
], ParticipantAnnouncement)


class Direction(enum.IntEnum):
    READER = 0
    WRITER = 1


@dataclass(frozen=True)
class EndpointAnnouncement(object):
    guid: Guid
    direction: Direction
    topic_name: str
    type_name: str
    type_digest: bytes
    qos: QosProfile
    address: str = ''
    port: int = 0

ENDPOINT_ANNOUNCEMENT_TYPE = TypeDescriptor('EndpointAnnouncement', [
    Field('guid', GUID_TYPE, key=True),
    Field('direction', EnumOf(Direction)),
    Field('topic_name', Text(256)),
    Field('type_name', Text(256)),
    Field('type_digest', FixedBytes(16)),
    Field('qos', QOS_TYPE),
    Field('address', Text(64)),
    Field('port', UInt16),
], EndpointAnnouncement)

SEDP_QOS = QosProfile(Reliability.RELIABLE, Durability.TRANSIENT_LOCAL,
                      HistoryKind.KEEP_LAST, 1)
SEDP_TOPIC = TopicDescriptor(ENDPOINTS_TOPIC, ENDPOINT_ANNOUNCEMENT_TYPE,
                             SEDP_QOS)


class EndpointWriter(DataWriter):
    """builtin writer of the local endpoint announcements"""
    scope_kind = 'discovery'
    builtin = True
    data_kind = SubmessageKind.ENDPOINT_ANNOUNCE

    def __init__(self, participant):
        DataWriter.__init__(self, participant, ENTITYID_SEDP_WRITER,
                            SEDP_TOPIC, SEDP_QOS)

    def protected_topic(self, value):
        return value.topic_name


class EndpointReader(DataReader):
    """builtin reader handing remote endpoint announcements to discovery"""
    scope_kind = 'discovery'
    builtin = True

    def __init__(self, participant, discovery):
        DataReader.__init__(self, participant, ENTITYID_SEDP_READER,
                            SEDP_TOPIC, SEDP_QOS)
        self.discovery = discovery

    def protected_topic(self, value):
        return value.topic_name

    def _accept(self, writer_guid, seq, flags, key_hash, value, strength, now):
        DataReader._accept(self, writer_guid, seq, flags, key_hash, value,
                           strength, now)
        if flags & FLAG_IRRELEVANT or value is None:
            return
        if value.guid.prefix == writer_guid.prefix:
            self.discovery.on_endpoint_announcement(value, flags, now)


# -- peers -------------------------------------------------------------------

class PeerState(enum.Enum):
    DISCOVERED = 'discovered'
    AUTHENTICATING = 'authenticating'
    MATCHED = 'matched'
    IGNORED = 'ignored'


class Peer(object):
    """a remote participant"""

    def __init__(self, prefix, locator, lease_expiry):
        self.prefix = prefix
        self.name = prefix_name(prefix)
        self.locator = locator
        self.lease_expiry = lease_expiry
        self.state = PeerState.DISCOVERED
        self.announced = False
        self.flags = 0
        self.identity_digest = b''
        self.governance_digest = b''
        self.topic_digests = frozenset()
        self.handshake = None
        self.handshake_retries = 0
        self.next_handshake = 0.0
        self.keys = None
        self.certificate = None
        self.permissions = None
        self.sedp_matched = False

    @property
    def authenticated(self):
        return self.keys is not None

    def describe(self):
        return {
            'name': '%X' % self.name,
            'prefix': self.prefix.hex(),
            'locator': str(self.locator),
            'state': self.state.value,
            'authenticated': self.authenticated,
            'secure': bool(self.flags & FLAG_SECURE),
        }


class Discovery(object):

    def __init__(self, participant):
        self.participant = participant
        config = participant.config
        self.announce_period = config.getseconds('discovery', 'announce_period')
        self.fast_announce_period = config.getseconds('discovery',
                                                      'fast_announce_period')
        self.fast_announce_count = config.getint('discovery',
                                                 'fast_announce_count')
        self.lease_duration = config.getseconds('discovery', 'lease_duration')
        self.handshake_timeout = config.getseconds('security',
                                                   'handshake_timeout')
        self.handshake_retries = config.getint('security', 'handshake_retries')
        self.quarantine_time = config.getseconds('security', 'quarantine')
        self.peers = {}
        self.quarantine = {}
        # remote endpoint guid -> EndpointAnnouncement
        self.remote_endpoints = {}
        # (local guid, remote guid)
        self.matches = set()
        self.announcements_sent = 0
        self._announce_count = 0
        self._next_announce = 0.0
        self._conflicts = set()
        self.sedp_writer = EndpointWriter(participant)
        self.sedp_reader = EndpointReader(participant, self)
        participant.writers[ENTITYID_SEDP_WRITER] = self.sedp_writer
        participant.readers[ENTITYID_SEDP_READER] = self.sedp_reader
        self.local_announcements = {}

    # -- participant announcements -------------------------------------------

    @property
    def flags(self):
        participant = self.participant
        flags = 0
        if participant.security is not None:
            flags |= FLAG_SECURE
            if participant.security.governance.allow_unauthenticated_participants:
                flags |= FLAG_ALLOW_UNAUTHENTICATED
        if participant.discover_all:
            flags |= FLAG_DISCOVER_ALL
        return flags

    def local_topic_digests(self):
        return frozenset(topic_digest(name) for name in self.participant.topics)

    def announcement(self, leaving=False):
        participant = self.participant
        locator = participant.transport.unicast_locator
        identity = governance = b''
        if participant.security is not None:
            identity = participant.security.certificate.digest
            governance = participant.security.governance.digest
        return ParticipantAnnouncement(
            participant.prefix, participant.name, participant.domain_id,
            locator.address, locator.port, int(self.lease_duration * 1000),
            self.flags | (FLAG_LEAVING if leaving else 0), identity,
            governance, tuple(sorted(self.local_topic_digests())))

    def announce(self, now, leaving=False):
        """one multicast participant announcement"""
        participant = self.participant
        payload = encode_sample(PARTICIPANT_ANNOUNCEMENT_TYPE,
                                self.announcement(leaving))
        participant.send_plain(participant.transport.multicast_locator,
                               [Submessage(SubmessageKind.PARTICIPANT_ANNOUNCE,
                                           0, payload)])
        self.announcements_sent += 1

    def topics_changed(self, now):
        """restart the fast announcements and revisit every peer"""
        self._announce_count = 0
        self._next_announce = now
        for peer in list(self.peers.values()):
            if peer.state == PeerState.MATCHED:
                self._update_endpoint_exchange(peer, now)

    def on_participant_announcement(self, prefix, sub, source, now):
        announcement = decode_sample(PARTICIPANT_ANNOUNCEMENT_TYPE, sub.body)
        if announcement.prefix != prefix:
            raise WireError('FOREIGN_GUID',
                            _('announcement for another participant'))
        participant = self.participant
        if announcement.domain_id != participant.domain_id:
            return
        peer = self.peers.get(prefix)
        if announcement.flags & FLAG_LEAVING:
            if peer is not None:
                self._lose(peer, now, 'left')
            return
        until = self.quarantine.get(prefix)
        if until is not None:
            if now < until:
                return
            del self.quarantine[prefix]
        if peer is None:
            peer = self._add_peer(prefix, source, now)
        self._refresh(peer, announcement, source, now)

    def _add_peer(self, prefix, source, now):
        participant = self.participant
        peer = Peer(prefix, source, now + self.lease_duration)
        self.peers[prefix] = peer
        if peer.name == participant.name and prefix not in self._conflicts:
            self._conflicts.add(prefix)
            participant.emit(EventKind.PARTICIPANT_CONFLICT,
                             name='%X' % peer.name, prefix=prefix.hex())
        participant.emit(EventKind.PARTICIPANT_FOUND, name='%X' % peer.name,
                         prefix=prefix.hex())
        return peer

    def _refresh(self, peer, announcement, source, now):
        peer.lease_expiry = now + announcement.lease_ms / 1000.0
        peer.locator = Locator(source.kind, announcement.address or
                               source.address, announcement.port)
        peer.flags = announcement.flags
        peer.identity_digest = announcement.identity_digest
        peer.governance_digest = announcement.governance_digest
        topics = frozenset(announcement.topic_digests)
        first = not peer.announced
        peer.announced = True
        if first:
            peer.topic_digests = topics
            self._admit(peer, now)
        elif topics != peer.topic_digests:
            peer.topic_digests = topics
            if peer.state == PeerState.MATCHED:
                self._update_endpoint_exchange(peer, now)

    def _admit(self, peer, now):
        """match, authenticate or ignore a newly announced peer"""
        participant = self.participant
        security = participant.security
        remote_secure = bool(peer.flags & FLAG_SECURE)
        if security is None:
            if remote_secure and not peer.flags & FLAG_ALLOW_UNAUTHENTICATED:
                self._ignore(peer, EventKind.UNAUTHENTICATED_IGNORED,
                             _('secure peer does not admit us'))
            else:
                self._matched(peer, now)
            return
        if not remote_secure:
            if security.governance.allow_unauthenticated_participants:
                self._matched(peer, now)
            else:
                self._ignore(peer, EventKind.UNAUTHENTICATED_IGNORED,
                             _('participant without identity'))
            return
        if peer.governance_digest != security.governance.digest:
            self._ignore(peer, EventKind.KIND_MISMATCH,
                         _('peer runs another governance'))
            return
        if peer.authenticated:
            self._matched(peer, now)
            return
        if peer.state == PeerState.AUTHENTICATING:
            return
        if participant.prefix < peer.prefix:
            self._begin_handshake(peer, now)
        else:
            peer.state = PeerState.AUTHENTICATING
            peer.next_handshake = now + self.handshake_timeout * \
                (self.handshake_retries + 1)

    def _ignore(self, peer, kind, reason):
        peer.state = PeerState.IGNORED
        self.participant.emit(kind, name='%X' % peer.name, reason=reason)

    def _lose(self, peer, now, reason):
        participant = self.participant
        self.peers.pop(peer.prefix, None)
        for guid, announcement in list(self.remote_endpoints.items()):
            if guid.prefix == peer.prefix:
                self._forget_remote(guid, now)
                if announcement.direction == Direction.WRITER:
                    participant.emit(EventKind.LIVELINESS_LOST,
                                     writer=str(guid),
                                     topic=announcement.topic_name)
        if peer.sedp_matched:
            self.sedp_writer.unmatch_remote_reader(
                Guid(peer.prefix, ENTITYID_SEDP_READER))
            remote_writer = Guid(peer.prefix, ENTITYID_SEDP_WRITER)
            self.sedp_reader.unmatch_remote_writer(remote_writer)
            participant.routes.pop(remote_writer, None)
            peer.sedp_matched = False
        for row in self.sedp_reader.cache.read_state():
            if row.key_value.prefix == peer.prefix:
                self.sedp_reader.cache.dispose(row.key_hash)
        participant.emit(EventKind.PARTICIPANT_LOST, name='%X' % peer.name,
                         prefix=peer.prefix.hex(), reason=reason)

    def tick(self, now):
        if now >= self._next_announce:
            self.announce(now)
            self._announce_count += 1
            if self._announce_count < self.fast_announce_count:
                self._next_announce = now + self.fast_announce_period
            else:
                self._next_announce = now + self.announce_period
        for peer in list(self.peers.values()):
            if now > peer.lease_expiry:
                self._lose(peer, now, 'lease expired')
            elif peer.state == PeerState.AUTHENTICATING and \
                    now >= peer.next_handshake:
                self._retry_handshake(peer, now)
        for prefix, until in list(self.quarantine.items()):
            if now >= until:
                del self.quarantine[prefix]

    def leave(self):
        """tell everybody we are gone"""
        now = self.participant.clock.now()
        try:
            self.announce(now, leaving=True)
        except Exception:
            log.exception('leaving announcement failed')

    # -- authentication ------------------------------------------------------

    def _send_handshake(self, peer, message):
        self.participant.send_plain(peer.locator, [Submessage(
            SubmessageKind.HANDSHAKE, 0,
            encode_sample(HANDSHAKE_TYPE, message))])

    def _begin_handshake(self, peer, now):
        participant = self.participant
        peer.state = PeerState.AUTHENTICATING
        peer.handshake = Handshake(participant.security, participant.prefix,
                                   peer.prefix, True, now)
        peer.handshake_retries = 0
        peer.next_handshake = now + self.handshake_timeout
        self._send_handshake(peer, peer.handshake.begin())

    def _retry_handshake(self, peer, now):
        handshake = peer.handshake
        if peer.handshake_retries >= self.handshake_retries or \
           handshake is None:
            self._fail(peer, 'TIMEOUT', _('no handshake answer'), now)
            return
        peer.handshake_retries += 1
        peer.next_handshake = now + self.handshake_timeout
        if handshake.initiator:
            if handshake.final is None:
                handshake.attempts += 1
                self._send_handshake(peer, handshake.request)
        elif handshake.reply is not None:
            self._send_handshake(peer, handshake.reply)

    def _fail(self, peer, code, reason, now):
        participant = self.participant
        log.warning('authentication of %X failed: %s %s', peer.name, code,
                    reason)
        self.quarantine[peer.prefix] = now + self.quarantine_time
        self.peers.pop(peer.prefix, None)
        participant.emit(EventKind.AUTHENTICATION_FAILED,
                         name='%X' % peer.name, code=code, reason=str(reason))

    def on_handshake(self, prefix, sub, source, now):
        participant = self.participant
        if participant.security is None:
            return
        message = decode_sample(HANDSHAKE_TYPE, sub.body)
        if participant.prefix not in (message.initiator, message.responder) \
           or prefix not in (message.initiator, message.responder):
            raise WireError('FOREIGN_GUID', _('handshake of another session'))
        until = self.quarantine.get(prefix)
        if until is not None and now < until:
            return
        peer = self.peers.get(prefix)
        try:
            if message.kind == HandshakeKind.REQUEST:
                self._on_request(peer, prefix, message, source, now)
            elif message.kind == HandshakeKind.REPLY:
                self._on_reply(peer, message, now)
            else:
                self._on_final(peer, message, now)
        except SecurityError as error:
            if peer is None:
                peer = self.peers.get(prefix)
            if peer is not None:
                self._fail(peer, error.code, error.message, now)
            else:
                log.warning('handshake from %s rejected: %s', source, error)

    def _on_request(self, peer, prefix, message, source, now):
        participant = self.participant
        if prefix > participant.prefix:
            # the lower prefix initiates
            return
        if peer is None:
            peer = self._add_peer(prefix, source, now)
        if peer.state == PeerState.MATCHED or peer.state == PeerState.IGNORED:
            return
        handshake = peer.handshake
        if handshake is not None and handshake.request == message:
            if handshake.reply is not None:
                self._send_handshake(peer, handshake.reply)
            return
        handshake = Handshake(participant.security, participant.prefix,
                              prefix, False, now)
        reply = handshake.on_message(message)
        peer.handshake = handshake
        peer.state = PeerState.AUTHENTICATING
        peer.handshake_retries = 0
        peer.next_handshake = now + self.handshake_timeout
        self._send_handshake(peer, reply)

    def _on_reply(self, peer, message, now):
        if peer is None or peer.handshake is None or \
           not peer.handshake.initiator:
            return
        handshake = peer.handshake
        if handshake.complete:
            if message == handshake.reply:
                self._send_handshake(peer, handshake.final)
            return
        final = handshake.on_message(message)
        self._send_handshake(peer, final)
        self._authenticated(peer, now)

    def _on_final(self, peer, message, now):
        if peer is None or peer.handshake is None or \
           peer.handshake.initiator or peer.handshake.complete:
            return
        peer.handshake.on_message(message)
        self._authenticated(peer, now)

    def _authenticated(self, peer, now):
        handshake = peer.handshake
        peer.keys = handshake.keys
        peer.certificate = handshake.remote_certificate
        peer.permissions = handshake.remote_permissions
        self.participant.emit(EventKind.PARTICIPANT_AUTHENTICATED,
                              name='%X' % peer.name)
        if peer.announced:
            self._matched(peer, now)
        else:
            # endpoint exchange waits for the first announcement
            peer.state = PeerState.DISCOVERED

    # -- endpoint exchange ---------------------------------------------------

    def _matched(self, peer, now):
        peer.state = PeerState.MATCHED
        self._update_endpoint_exchange(peer, now)

    def _shares_topics(self, peer):
        if self.participant.discover_all or peer.flags & FLAG_DISCOVER_ALL:
            return True
        return bool(peer.topic_digests & self.local_topic_digests())

    def _update_endpoint_exchange(self, peer, now):
        """builtin endpoints talk only between topic-sharing peers"""
        if not self._shares_topics(peer):
            return
        if not peer.sedp_matched:
            peer.sedp_matched = True
            remote_writer = Guid(peer.prefix, ENTITYID_SEDP_WRITER)
            proxy = WriterProxy(remote_writer, peer, True)
            self.sedp_reader.match_remote_writer(proxy)
            self.participant.routes[remote_writer] = [(self.sedp_reader, proxy)]
            self.sedp_writer.match_remote_reader(
                ReaderProxy(Guid(peer.prefix, ENTITYID_SEDP_READER), peer,
                            True, True, self._visibility(peer)),
                now)
        else:
            # topics the peer did not share before are now relevant
            for announcement in list(self.local_announcements.values()):
                self.sedp_writer.write(announcement)

    def _visibility(self, peer):
        def relevant(entry):
            return self._may_see(peer, entry.value)
        return relevant

    def _may_see(self, peer, announcement):
        if not (peer.flags & FLAG_DISCOVER_ALL or
                topic_digest(announcement.topic_name) in peer.topic_digests):
            return False
        security = self.participant.security
        if security is None:
            return True
        rule = security.governance.rule_for(announcement.topic_name)
        if peer.keys is None:
            return rule.is_open
        if announcement.direction == Direction.WRITER:
            action, controlled = Action.SUBSCRIBE, \
                rule.enable_read_access_control
        else:
            action, controlled = Action.PUBLISH, rule.enable_write_access_control
        if not controlled:
            return True
        return any(check_permission(peer.permissions, action,
                                    announcement.topic_name, partition) ==
                   Decision.ALLOW
                   for partition in announcement.qos.partitions or ('',))

    def _local_announcement(self, endpoint):
        locator = self.participant.transport.unicast_locator
        return EndpointAnnouncement(
            endpoint.guid,
            Direction.WRITER if endpoint.is_writer else Direction.READER,
            endpoint.topic.name, endpoint.topic.type_descriptor.name,
            endpoint.topic.type_digest, endpoint.qos, locator.address,
            locator.port)

    def add_local_endpoint(self, endpoint, now):
        announcement = self._local_announcement(endpoint)
        self.local_announcements[endpoint.guid] = announcement
        self.sedp_writer.write(announcement)
        for guid, remote in list(self.remote_endpoints.items()):
            peer = self.peers.get(guid.prefix)
            if peer is not None:
                self.exchange(endpoint, peer, remote, now)

    def remove_local_endpoint(self, endpoint, now):
        announcement = self.local_announcements.pop(endpoint.guid, None)
        if announcement is not None:
            self.sedp_writer.dispose(announcement)
        for local, remote in list(self.matches):
            if local == endpoint.guid:
                self._unmatch(endpoint, remote)

    def on_endpoint_announcement(self, announcement, flags, now):
        """a remote endpoint appeared, changed or went away"""
        peer = self.peers.get(announcement.guid.prefix)
        if peer is None:
            return
        if flags & FLAG_DISPOSED:
            self._forget_remote(announcement.guid, now)
            return
        known = self.remote_endpoints.get(announcement.guid)
        if known == announcement:
            return
        if known is not None:
            self._forget_remote(announcement.guid, now)
        self.remote_endpoints[announcement.guid] = announcement
        participant = self.participant
        endpoints = participant.readers if \
            announcement.direction == Direction.WRITER else participant.writers
        for endpoint in list(endpoints.values()):
            if not endpoint.builtin:
                self.exchange(endpoint, peer, announcement, now)

    def _forget_remote(self, guid, now):
        self.remote_endpoints.pop(guid, None)
        participant = self.participant
        for local, remote in list(self.matches):
            if remote != guid:
                continue
            endpoint = participant.writers.get(local.entity_id) or \
                participant.readers.get(local.entity_id)
            if endpoint is not None and endpoint.guid == local:
                self._unmatch(endpoint, guid)
            else:
                self.matches.discard((local, remote))

    def exchange(self, endpoint, peer, announcement, now):
        """match one local endpoint with one remote endpoint if they may"""
        participant = self.participant
        if endpoint.topic.name != announcement.topic_name:
            return
        if endpoint.is_writer == (announcement.direction == Direction.WRITER):
            return
        if (endpoint.guid, announcement.guid) in self.matches:
            return
        if peer.state != PeerState.MATCHED:
            return
        if announcement.type_digest != endpoint.topic.type_digest:
            participant.emit(EventKind.INCOMPATIBLE_TYPE,
                             topic=endpoint.topic.name,
                             local=str(endpoint.guid),
                             remote=str(announcement.guid),
                             remote_type=announcement.type_name)
            return
        if endpoint.is_writer:
            offered, requested = endpoint.qos, announcement.qos
        else:
            offered, requested = announcement.qos, endpoint.qos
        compatible = qos_compatible(offered, requested)
        if not compatible:
            participant.emit(EventKind.INCOMPATIBLE_QOS,
                             topic=endpoint.topic.name,
                             local=str(endpoint.guid),
                             remote=str(announcement.guid),
                             reason=compatible.reason)
            return
        if not self._permitted(endpoint, peer, announcement):
            participant.emit(EventKind.PERMISSION_DENIED,
                             topic=endpoint.topic.name,
                             local=str(endpoint.guid),
                             remote=str(announcement.guid),
                             peer='%X' % peer.name)
            return
        self._match(endpoint, peer, announcement, now)

    def _permitted(self, endpoint, peer, announcement):
        """access control over the shared partitions"""
        security = self.participant.security
        if security is None:
            return True
        topic = endpoint.topic.name
        rule = security.governance.rule_for(topic)
        if peer.keys is None:
            return rule.is_open
        if endpoint.is_writer:
            publisher, subscriber = security.permissions, peer.permissions
        else:
            publisher, subscriber = peer.permissions, security.permissions
        shared = set(endpoint.qos.partitions or ('',)) & \
            set(announcement.qos.partitions or ('',))
        for partition in sorted(shared):
            if rule.enable_write_access_control and \
               check_permission(publisher, Action.PUBLISH, topic,
                                partition) != Decision.ALLOW:
                continue
            if rule.enable_read_access_control and \
               check_permission(subscriber, Action.SUBSCRIBE, topic,
                                partition) != Decision.ALLOW:
                continue
            return True
        return False

    def _match(self, endpoint, peer, announcement, now):
        participant = self.participant
        self.matches.add((endpoint.guid, announcement.guid))
        if endpoint.is_writer:
            endpoint.match_remote_reader(ReaderProxy(
                announcement.guid, peer,
                endpoint.qos.is_reliable and announcement.qos.is_reliable,
                announcement.qos.keeps_history), now)
        else:
            proxy = WriterProxy(announcement.guid, peer,
                                endpoint.qos.is_reliable,
                                announcement.qos.ownership_strength)
            endpoint.match_remote_writer(proxy)
            participant.routes.setdefault(announcement.guid, []).append(
                (endpoint, proxy))
        participant.emit(EventKind.ENDPOINT_MATCHED, topic=endpoint.topic.name,
                         local=str(endpoint.guid),
                         remote=str(announcement.guid),
                         peer='%X' % peer.name)

    def _unmatch(self, endpoint, remote):
        participant = self.participant
        self.matches.discard((endpoint.guid, remote))
        if endpoint.is_writer:
            endpoint.unmatch_remote_reader(remote)
        else:
            endpoint.unmatch_remote_writer(remote)
            routes = participant.routes.get(remote, [])
            routes[:] = [(reader, proxy) for reader, proxy in routes
                         if reader is not endpoint]
            if not routes:
                participant.routes.pop(remote, None)
        participant.emit(EventKind.ENDPOINT_UNMATCHED,
                         topic=endpoint.topic.name, local=str(endpoint.guid),
                         remote=str(remote))

    # -- inspection ----------------------------------------------------------

    def graph(self):
        participant = self.participant
        endpoints = []
        for announcement in self.local_announcements.values():
            endpoints.append(self._describe_endpoint(announcement, True))
        for announcement in self.remote_endpoints.values():
            endpoints.append(self._describe_endpoint(announcement, False))
        matches = [{'local': str(local), 'remote': str(remote)}
                   for local, remote in sorted(self.matches)]
        # pairs among remote endpoints, as the inspector sees them
        writers = [a for a in self.remote_endpoints.values()
                   if a.direction == Direction.WRITER]
        readers = [a for a in self.remote_endpoints.values()
                   if a.direction == Direction.READER]
        for writer in writers:
            for reader in readers:
                if writer.topic_name == reader.topic_name and \
                   writer.type_digest == reader.type_digest and \
                   writer.guid.prefix != reader.guid.prefix and \
                   qos_compatible(writer.qos, reader.qos):
                    matches.append({'local': str(writer.guid),
                                    'remote': str(reader.guid)})
        return {
            'participant': {
                'name': '%X' % participant.name,
                'prefix': participant.prefix.hex(),
                'domain_id': participant.domain_id,
                'locator': str(participant.transport.unicast_locator),
                'secure': participant.security is not None,
            },
            'participants': [peer.describe() for _prefix, peer in
                             sorted(self.peers.items())],
            'endpoints': endpoints,
            'matches': matches,
            'topics': sorted(set(e['topic'] for e in endpoints)),
            'partitions': sorted(set(p for e in endpoints
                                     for p in e['partitions'])),
        }

    @staticmethod
    def _describe_endpoint(announcement, local):
        qos = announcement.qos
        return {
            'guid': str(announcement.guid),
            'participant': '%X' % prefix_name(announcement.guid.prefix),
            'local': local,
            'direction': announcement.direction.name.lower(),
            'topic': announcement.topic_name,
            'type': announcement.type_name,
            'partitions': list(qos.partitions),
            'reliability': qos.reliability.name,
            'durability': qos.durability.name,
        }


def announce_participant(participant, now):
    """send one participant announcement on the discovery group"""
    with participant.lock:
        participant.discovery.announce(now)


def process_participant_announcement(participant, announcement, source, now):
    """feed a decoded announcement through the admission rules, returns the
    resulting peer state or None when nothing was admitted"""
    with participant.lock:
        discovery = participant.discovery
        sub = Submessage(SubmessageKind.PARTICIPANT_ANNOUNCE, 0,
                         encode_sample(PARTICIPANT_ANNOUNCEMENT_TYPE,
                                       announcement))
        discovery.on_participant_announcement(announcement.prefix, sub,
                                              source, now)
        peer = discovery.peers.get(announcement.prefix)
        state = peer.state if peer is not None else None
    participant.flush_callbacks()
    return state


def exchange_endpoints(participant, peer_prefix):
    """try every local/remote endpoint pair of one peer, returns the matched
    (local guid, remote guid) pairs"""
    with participant.lock:
        discovery = participant.discovery
        peer = discovery.peers.get(peer_prefix)
        if peer is None:
            return []
        now = participant.clock.now()
        for guid, announcement in list(discovery.remote_endpoints.items()):
            if guid.prefix != peer_prefix:
                continue
            endpoints = participant.readers if \
                announcement.direction == Direction.WRITER else \
                participant.writers
            for endpoint in list(endpoints.values()):
                if not endpoint.builtin:
                    discovery.exchange(endpoint, peer, announcement, now)
        pairs = sorted(pair for pair in discovery.matches
                       if pair[1].prefix == peer_prefix)
    participant.flush_callbacks()
    return pairs
