# -*- coding: utf-8 -*-
import json

import jsonschema
import pytest

from AgriBus.discovery import (PARTICIPANT_ANNOUNCEMENT_TYPE, EventKind,
                               ParticipantAnnouncement, PeerState,
                               announce_participant, exchange_endpoints,
                               process_participant_announcement)
from AgriBus.endpoint import TopicDescriptor, topic_digest
from AgriBus.qos import QosProfile, Reliability
from AgriBus.tc_model import (CONTROL_HANDLING_VALUE_TYPE, ControlHandlingValue,
                              DeviceElement, HandlingFeature, HandlingGroup,
                              Unit)
from AgriBus.transport import Locator, LocatorKind
from AgriBus.utils import lookup_bundled
from AgriBus.wire import make_guid_prefix

from conftest import event_kinds, wait_matched

values = TopicDescriptor('values', CONTROL_HANDLING_VALUE_TYPE,
                         QosProfile(Reliability.RELIABLE))
unrelated = TopicDescriptor('unrelated', CONTROL_HANDLING_VALUE_TYPE)


def sample(num, value):
    return ControlHandlingValue(DeviceElement(0xA1, num),
                                HandlingGroup.APPLICATION_RATE,
                                HandlingFeature.ACTUAL, Unit(), value)


def all_know_each_other(members):
    return all(len(p.discovery.peers) == len(members) - 1 and
               all(peer.state == PeerState.MATCHED
                   for peer in p.discovery.peers.values())
               for p in members)


def test_peers_find_each_other(participants, network):
    members = [participants(name) for name in (0xA1, 0xA2, 0xA3, 0xA4)]
    assert network.run_until_true(lambda: all_know_each_other(members), 3.0)
    first = members[0]
    assert set(peer.name for peer in first.discovery.peers.values()) == \
        {0xA2, 0xA3, 0xA4}
    assert EventKind.PARTICIPANT_FOUND in event_kinds(first)


def test_join_in_any_order(participants, network):
    writer_side = participants(0xA1)
    writer = writer_side.create_writer(values)
    network.run_for(2.5)
    reader_side = participants(0xB2)
    reader = reader_side.create_reader(values)
    assert wait_matched(network, writer, reader)
    writer.write(sample(1, 2.5))
    assert network.run_until_true(lambda: reader.received == 1, 1.0)


def test_endpoints_only_between_topic_sharing_peers(participants, network):
    alpha = participants(0xA1)
    beta = participants(0xB2)
    alpha.create_writer(values)
    beta.create_reader(unrelated)
    network.run_for(2.0)
    assert beta.discovery.peers[alpha.prefix].state == PeerState.MATCHED
    assert not beta.discovery.remote_endpoints
    assert not alpha.discovery.remote_endpoints
    assert topic_digest('values') in \
        beta.discovery.peers[alpha.prefix].topic_digests


def test_topics_added_later(participants, network):
    alpha = participants(0xA1)
    beta = participants(0xB2)
    writer = alpha.create_writer(values)
    beta.create_reader(unrelated)
    network.run_for(2.0)
    reader = beta.create_reader(values)
    assert wait_matched(network, writer, reader)


def test_discover_all_sees_everything(participants, network):
    alpha = participants(0xA1)
    alpha.create_writer(values)
    alpha.create_reader(unrelated)
    inspector = participants(0xEE, discover_all=True)
    assert network.run_until_true(
        lambda: len(inspector.discovery.remote_endpoints) == 2, 3.0)
    topics = sorted(a.topic_name for a in
                    inspector.discovery.remote_endpoints.values())
    assert topics == ['unrelated', 'values']


def test_lease_expiry(participants, network):
    alpha = participants(0xA1)
    beta = participants(0xB2)
    writer = alpha.create_writer(values)
    reader = beta.create_reader(values)
    assert wait_matched(network, writer, reader)
    beta.poll_events()
    network.silence(alpha.transport)
    network.run_for(3.5)
    assert alpha.prefix in beta.discovery.peers
    network.run_for(3.0)
    assert alpha.prefix not in beta.discovery.peers
    assert not reader.remote_writers
    kinds = event_kinds(beta)
    assert EventKind.PARTICIPANT_LOST in kinds
    assert EventKind.LIVELINESS_LOST in kinds
    assert EventKind.ENDPOINT_UNMATCHED in kinds


def test_rejoin_after_outage(participants, network):
    alpha = participants(0xA1)
    beta = participants(0xB2)
    writer = alpha.create_writer(values)
    reader = beta.create_reader(values)
    assert wait_matched(network, writer, reader)
    network.silence(alpha.transport)
    network.run_for(7.0)
    assert not reader.remote_writers
    network.silence(alpha.transport, False)
    assert wait_matched(network, writer, reader, 5.0)


def test_leaving_is_immediate(participants, network):
    alpha = participants(0xA1)
    beta = participants(0xB2)
    assert network.run_until_true(
        lambda: alpha.prefix in beta.discovery.peers, 2.0)
    beta.poll_events()
    alpha.close()
    network.run_for(0.1)
    assert alpha.prefix not in beta.discovery.peers
    lost = [e for e in beta.poll_events()
            if e.kind == EventKind.PARTICIPANT_LOST]
    assert lost[0].detail['reason'] == 'left'


def test_name_conflict(participants, network):
    first = participants(0xA1)
    second = participants(0xA1)
    assert first.prefix != second.prefix
    assert network.run_until_true(
        lambda: EventKind.PARTICIPANT_CONFLICT in event_kinds(first), 2.0)


def test_other_domain_unseen(participants, network):
    alpha = participants(0xA1, domain_id=0)
    beta = participants(0xB2, domain_id=1)
    network.run_for(2.0)
    assert not alpha.discovery.peers
    assert not beta.discovery.peers


def test_announcement_fields(participants, network):
    alpha = participants(0xA1)
    alpha.create_writer(values)
    announcement = alpha.discovery.announcement()
    assert announcement.name == 0xA1
    assert announcement.prefix == alpha.prefix
    assert announcement.lease_ms == 5000
    assert announcement.topic_digests == (topic_digest('values'),)


def test_process_announcement_directly(participants):
    alpha = participants(0xA1)
    prefix = make_guid_prefix(0xC3, b'\x01\x02\x03\x04')
    announcement = ParticipantAnnouncement(prefix, 0xC3, 0, 'sim-99', 7651,
                                           5000)
    source = Locator(LocatorKind.SIM, 'sim-99', 7651)
    state = process_participant_announcement(alpha, announcement, source,
                                             alpha.clock.now())
    assert state == PeerState.MATCHED
    assert exchange_endpoints(alpha, prefix) == []
    foreign = ParticipantAnnouncement(make_guid_prefix(0xC4, b'\0' * 4),
                                      0xC4, 9, 'sim-98', 7652, 5000)
    assert process_participant_announcement(alpha, foreign, source,
                                            alpha.clock.now()) is None


def test_announce_on_demand(participants, network):
    alpha = participants(0xA1)
    sent = alpha.discovery.announcements_sent
    announce_participant(alpha, alpha.clock.now())
    assert alpha.discovery.announcements_sent == sent + 1


# -- the graph -------------------------------------------------------------------

@pytest.fixture(scope='module')
def schema():
    with open(lookup_bundled('inspect.schema.json')) as schema_file:
        return json.load(schema_file)


def test_graph(participants, network, schema):
    alpha = participants(0xA1)
    beta = participants(0xB2)
    writer = alpha.create_writer(values)
    reader = beta.create_reader(values)
    assert wait_matched(network, writer, reader)
    writer.write(sample(7, 1.0))
    network.run_until_true(lambda: reader.received == 1, 1.0)

    graph = beta.graph()
    jsonschema.validate(json.loads(json.dumps(graph)), schema)
    assert graph['participant']['name'] == 'B2'
    assert [p['name'] for p in graph['participants']] == ['A1']
    assert graph['topics'] == ['values']
    assert graph['matches'] == [{'local': str(reader.guid),
                                 'remote': str(writer.guid)}]
    directions = sorted((e['direction'], e['local']) for e in graph['endpoints'])
    assert directions == [('reader', True), ('writer', False)]
    (row,) = graph['matrices']['values']
    assert row['samples'][0]['value'] == 1.0
    assert row['samples'][0]['handling_group'] == 'APPLICATION_RATE'


def test_inspector_sees_remote_pairs(participants, network, schema):
    alpha = participants(0xA1)
    beta = participants(0xB2)
    writer = alpha.create_writer(values)
    reader = beta.create_reader(values)
    inspector = participants(0xEE, discover_all=True)
    assert wait_matched(network, writer, reader)
    assert network.run_until_true(
        lambda: len(inspector.discovery.remote_endpoints) == 2, 3.0)
    graph = inspector.graph()
    jsonschema.validate(json.loads(json.dumps(graph)), schema)
    assert {'local': str(writer.guid), 'remote': str(reader.guid)} in \
        graph['matches']
    assert not inspector.discovery.matches


def test_announcement_type_key():
    assert [f.name for f in PARTICIPANT_ANNOUNCEMENT_TYPE.key_fields] == \
        ['prefix']
