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
plug-and-play task controller protocol

Every node announces its NAME and service versions on t_service_discovery.
An implement publishes its DDOP into the partition named after its NAME and
exchanges setpoints and actuals there; the server follows every implement
it learns about into that implement's partition.
"""

import enum
import functools
import logging
import threading
import weakref
from dataclasses import dataclass

from .agribus_error import TcError
from .discovery import EventKind
from .endpoint import TopicDescriptor
from .qos import Durability, HistoryKind, QosProfile, Reliability
from .tc_model import (CONTROL_HANDLING_CAPABILITY_TYPE,
                       CONTROL_HANDLING_VALUE_TYPE, ELEMENT_HIERARCHY_TYPE,
                       check_ddop, ddop_to_samples, samples_to_ddop)
from .utils import name_to_hex
from .wire import Field, TypeDescriptor, UInt32, UInt64

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
PD_DEPTH = 16
POLL_INTERVAL = 0.01


@dataclass(frozen=True)
class ServicesRow(object):
    """versions a node supports, 0 meaning not supported"""
    name: int
    v_tc_client: int = 0
    v_tc_server: int = 0
    v_tim_server: int = 0

SERVICES_TYPE = TypeDescriptor('Services', [
    Field('name', UInt64, key=True),
    Field('v_tc_client', UInt32),
    Field('v_tc_server', UInt32),
    Field('v_tim_server', UInt32),
], ServicesRow)


class Channel(enum.Enum):
    BEST_EFFORT = 'best_effort'
    RELIABLE = 'reliable'

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).lower().replace('-', '_'))
        except ValueError:
            raise TcError('BAD_CHANNEL', _('unknown channel %r') % text)


SERVICE_DISCOVERY = TopicDescriptor(
    't_service_discovery', SERVICES_TYPE,
    QosProfile(Reliability.RELIABLE, Durability.TRANSIENT_LOCAL,
               HistoryKind.KEEP_LAST, 1))
DDOP_HIERARCHY = TopicDescriptor(
    't_ddop_hierarchy', ELEMENT_HIERARCHY_TYPE,
    QosProfile(Reliability.RELIABLE, Durability.DURABLE, HistoryKind.KEEP_ALL))
DDI_LINKING = TopicDescriptor(
    't_ddi_linking', CONTROL_HANDLING_CAPABILITY_TYPE,
    QosProfile(Reliability.RELIABLE, Durability.DURABLE, HistoryKind.KEEP_ALL))
PD_VALUES_RELIABLE = TopicDescriptor(
    't_pd_values_reliable', CONTROL_HANDLING_VALUE_TYPE,
    QosProfile(Reliability.RELIABLE, Durability.VOLATILE,
               HistoryKind.KEEP_LAST, PD_DEPTH))
PD_VALUES_BEST_EFFORT = TopicDescriptor(
    't_pd_values_best_effort', CONTROL_HANDLING_VALUE_TYPE,
    QosProfile(Reliability.BEST_EFFORT, Durability.VOLATILE,
               HistoryKind.KEEP_LAST, PD_DEPTH))

TOPIC_CATALOG = (SERVICE_DISCOVERY, DDOP_HIERARCHY, DDI_LINKING,
                 PD_VALUES_RELIABLE, PD_VALUES_BEST_EFFORT)
PD_TOPICS = {
    Channel.RELIABLE: PD_VALUES_RELIABLE,
    Channel.BEST_EFFORT: PD_VALUES_BEST_EFFORT,
}


def partition_name(name):
    """the partition of one implement: its NAME in uppercase hex"""
    return name_to_hex(name)


def partitioned(topic, name):
    return topic.default_qos.replace(partitions=(partition_name(name),))


# -- service discovery -------------------------------------------------------

_service_writers = weakref.WeakKeyDictionary()
_service_readers = weakref.WeakKeyDictionary()


def announce_service(participant, row):
    """publish (or republish) the services row of participant"""
    writer = _service_writers.get(participant)
    if writer is None or writer.deleted:
        writer = participant.create_writer(SERVICE_DISCOVERY)
        _service_writers[participant] = writer
    writer.write(row)
    log.info('%X announces client v%d server v%d tim v%d', row.name,
             row.v_tc_client, row.v_tc_server, row.v_tim_server)
    return row


def service_reader(participant):
    reader = _service_readers.get(participant)
    if reader is None or reader.deleted:
        reader = participant.create_reader(SERVICE_DISCOVERY, ignore_own=True)
        _service_readers[participant] = reader
    return reader


def peer_services(participant):
    """every services row seen, by NAME"""
    return dict((row.latest.name, row.latest)
                for row in service_reader(participant).read_state())


def await_peer_service(participant, predicate, timeout):
    """first peer row satisfying predicate, lowest NAME first

    sleeps on the participant clock, so a simulated network runs meanwhile;
    raise TcError NO_PEER after timeout seconds"""
    clock = participant.clock
    deadline = clock.now() + timeout
    service_reader(participant)
    while True:
        matching = [row for name, row in sorted(
            peer_services(participant).items())
            if name != participant.name and predicate(row)]
        if matching:
            return matching[0]
        remaining = deadline - clock.now()
        if remaining <= 0:
            raise TcError('NO_PEER', _('no matching service within %.1f s') %
                          timeout)
        clock.sleep(min(POLL_INTERVAL, remaining))


def is_tc_server(version=PROTOCOL_VERSION):
    """predicate: a server of at least version"""
    return lambda row: row.v_tc_server >= version


def is_tc_client(version=PROTOCOL_VERSION):
    return lambda row: row.v_tc_client >= version


# -- sessions ----------------------------------------------------------------

class _Session(object):
    """process data plumbing shared by both roles"""

    def __init__(self, participant):
        self.participant = participant
        self.lock = threading.RLock()
        self.callbacks = []
        self.sent = 0
        self.received = 0

    def on_process_value(self, callback, channel=None):
        """callback(value, sender_name) for every accepted sample, of one
        channel or of both"""
        if channel is not None:
            channel = Channel.parse(channel)
        with self.lock:
            self.callbacks.append((callback, channel))
        return callback

    def remove_callback(self, callback):
        with self.lock:
            self.callbacks[:] = [(registered, channel) for registered, channel
                                 in self.callbacks if registered != callback]

    def _deliver(self, channel, sample):
        with self.lock:
            self.received += 1
            callbacks = [callback for callback, wanted in self.callbacks
                         if wanted is None or wanted == channel]
        for callback in callbacks:
            callback(sample.value, sample.sender_name)

    def _pd_readers(self, name):
        readers = {}
        for channel, topic in PD_TOPICS.items():
            readers[channel] = self.participant.create_reader(
                topic, partitioned(topic, name),
                functools.partial(self._deliver, channel), ignore_own=True)
        return readers

    def _pd_writers(self, name):
        return dict((channel, self.participant.create_writer(
            topic, partitioned(topic, name)))
            for channel, topic in PD_TOPICS.items())


class ImplementSession(_Session):
    """one implement, or one more participant of a distributed implement
    when it carries no DDOP"""

    def __init__(self, participant, ddop=None, implement_name=None,
                 version=PROTOCOL_VERSION):
        _Session.__init__(self, participant)
        self.ddop = check_ddop(ddop) if ddop is not None else None
        self.implement_name = implement_name or participant.name
        if self.ddop is not None and self.ddop.name != self.implement_name:
            raise TcError('INVALID_DDOP',
                          _('DDOP written for NAME %X') % self.ddop.name)
        self.partition = partition_name(self.implement_name)
        self.version = version
        self.conflict = None
        self.ddop_writers = ()
        self.monitor = None
        self.writers = {}
        self.readers = {}
        self.started = False

    def start(self):
        participant = self.participant
        self.readers = self._pd_readers(self.implement_name)
        self.writers = self._pd_writers(self.implement_name)
        if self.ddop is not None:
            participant.add_listener(self._on_event)
            self.monitor = participant.create_reader(
                DDOP_HIERARCHY, partitioned(DDOP_HIERARCHY,
                                            self.implement_name),
                ignore_own=True)
            hierarchy = participant.create_writer(
                DDOP_HIERARCHY, partitioned(DDOP_HIERARCHY,
                                            self.implement_name))
            linking = participant.create_writer(
                DDI_LINKING, partitioned(DDI_LINKING, self.implement_name))
            self.ddop_writers = (hierarchy, linking)
            rows, capabilities = ddop_to_samples(self.ddop)
            for row in rows:
                hierarchy.write(row)
            for capability in capabilities:
                linking.write(capability)
            announce_service(participant, ServicesRow(
                participant.name, v_tc_client=self.version))
            log.info('implement %s published a DDOP of %d elements',
                     self.partition, len(self.ddop))
        self.started = True
        return self

    def _on_event(self, event):
        if event.kind != EventKind.ENDPOINT_MATCHED or self.monitor is None:
            return
        if event.detail.get('local') != str(self.monitor.guid):
            return
        self._partition_conflict(event.detail.get('remote'))

    def _partition_conflict(self, remote):
        with self.lock:
            if self.conflict is not None:
                return
            self.conflict = remote
        participant = self.participant
        log.error('another TC client publishes a DDOP in partition %s (%s)',
                  self.partition, remote)
        for writer in self.ddop_writers + tuple(self.writers.values()):
            participant.delete_writer(writer)
        participant.emit(EventKind.PARTITION_CONFLICT,
                         partition=self.partition, remote=remote)

    def check(self):
        """raise TcError PARTITION_CONFLICT once another client showed up"""
        if self.conflict is not None:
            raise TcError('PARTITION_CONFLICT',
                          _('another TC client uses partition %s') %
                          self.partition)

    def send_process_value(self, value, channel=Channel.RELIABLE):
        self.check()
        if not self.started:
            raise TcError('NOT_STARTED', _('session is not started'))
        seq = self.writers[Channel.parse(channel)].write(value)
        self.sent += 1
        return seq

    def matrix(self):
        """{element_num: newest values} over both channels"""
        return _matrix(self.readers.values())

    def stop(self):
        participant = self.participant
        if self.ddop is not None:
            participant.remove_listener(self._on_event)
        for writer in self.ddop_writers + tuple(self.writers.values()):
            participant.delete_writer(writer)
        for reader in list(self.readers.values()) + [self.monitor]:
            if reader is not None:
                participant.delete_reader(reader)
        self.started = False


def _matrix(readers):
    matrix = {}
    for reader in readers:
        for row in reader.read_state():
            element = row.key_value.element_num
            matrix.setdefault(element, []).extend(
                sample.value for sample in row.samples)
    return matrix


class ImplementLink(object):
    """what the server knows about one implement"""

    def __init__(self, server, name):
        self.server = server
        self.name = name
        self.partition = partition_name(name)
        self.ddop = None
        self.unknown_elements = set()
        participant = server.participant
        self.hierarchy = participant.create_reader(
            DDOP_HIERARCHY, partitioned(DDOP_HIERARCHY, name),
            self._on_ddop_sample, ignore_own=True)
        self.linking = participant.create_reader(
            DDI_LINKING, partitioned(DDI_LINKING, name),
            self._on_ddop_sample, ignore_own=True)
        self.readers = dict((channel, participant.create_reader(
            topic, partitioned(topic, name),
            functools.partial(self._on_process_value, channel),
            ignore_own=True)) for channel, topic in PD_TOPICS.items())
        self.writers = server._pd_writers(name)
        self._on_ddop_sample(None)

    def _on_ddop_sample(self, sample):
        rows = [row.latest for row in self.hierarchy.read_state()]
        capabilities = [row.latest for row in self.linking.read_state()]
        try:
            ddop = samples_to_ddop(rows, capabilities, self.name)
        except TcError:
            return
        if ddop != self.ddop:
            self.ddop = ddop
            log.info('reconstructed DDOP of %X: %d elements, %d capabilities',
                     self.name, len(ddop), len(ddop.capabilities))

    def known_element(self, element_num):
        if self.ddop is None or element_num in self.ddop.element_numbers():
            return True
        if element_num not in self.unknown_elements:
            self.unknown_elements.add(element_num)
            log.warning('process value for element %d unknown to the DDOP of '
                        '%X', element_num, self.name)
        return False

    def _on_process_value(self, channel, sample):
        self.known_element(sample.value.element_reference.element_num)
        self.server._deliver(channel, sample)

    def matrix(self):
        return _matrix(self.readers.values())

    def close(self):
        participant = self.server.participant
        for writer in self.writers.values():
            participant.delete_writer(writer)
        for reader in [self.hierarchy, self.linking] + \
                list(self.readers.values()):
            participant.delete_reader(reader)


class ServerSession(_Session):
    """the task controller: one ImplementLink per announced TC client"""

    def __init__(self, participant, version=PROTOCOL_VERSION):
        _Session.__init__(self, participant)
        self.version = version
        self.implements = {}
        self.services = None

    def start(self):
        participant = self.participant
        self.services = participant.create_reader(
            SERVICE_DISCOVERY, on_data_available=self._on_services,
            ignore_own=True)
        announce_service(participant, ServicesRow(participant.name,
                                                  v_tc_server=self.version))
        for row in self.services.read_state():
            self._on_services_row(row.latest)
        return self

    def _on_services(self, sample):
        self._on_services_row(sample.value)

    def _on_services_row(self, row):
        if row.v_tc_client < 1:
            return
        with self.lock:
            if row.name in self.implements:
                return
            log.info('implement %X joined, following partition %s', row.name,
                     partition_name(row.name))
            self.implements[row.name] = ImplementLink(self, row.name)

    def link(self, name):
        with self.lock:
            link = self.implements.get(name)
        if link is None:
            raise TcError('UNKNOWN_IMPLEMENT', _('no implement %X') % name)
        return link

    def ddops(self):
        """{NAME: reconstructed Ddop} of complete pools"""
        with self.lock:
            return dict((name, link.ddop) for name, link in
                        self.implements.items() if link.ddop is not None)

    def send_process_value(self, value, channel=Channel.RELIABLE):
        """send into the partition of the implement value refers to"""
        link = self.link(value.element_reference.name)
        link.known_element(value.element_reference.element_num)
        seq = link.writers[Channel.parse(channel)].write(value)
        self.sent += 1
        return seq

    def stop(self):
        with self.lock:
            links = list(self.implements.values())
            self.implements.clear()
        for link in links:
            link.close()
        if self.services is not None:
            self.participant.delete_reader(self.services)
            self.services = None


def implement_start(participant, ddop):
    """publish ddop and join the implement partition"""
    return ImplementSession(participant, ddop).start()


def implement_join(participant, implement_name):
    """an extra participant of a distributed implement"""
    return ImplementSession(participant, None, implement_name).start()


def server_start(participant):
    return ServerSession(participant).start()


def send_process_value(session, value, channel=Channel.RELIABLE):
    return session.send_process_value(value, channel)


def on_process_value(session, callback, channel=None):
    return session.on_process_value(callback, channel)
