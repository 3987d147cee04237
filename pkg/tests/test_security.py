# -*- coding: utf-8 -*-
import random
import time
from dataclasses import dataclass, replace

import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from AgriBus.agribus_error import SecurityError
from AgriBus.discovery import EventKind, PeerState
from AgriBus.endpoint import TopicDescriptor
from AgriBus.qos import QosProfile, Reliability
from AgriBus.security import (Action, CertificateAuthority, Decision,
                              GovernanceDocument, Grant, Handshake,
                              PermissionsDocument, ProtectionKind,
                              ReplayWindow, SecurityConfig, SessionKeys,
                              SCOPE_RTPS, ca_create, check_permission,
                              generate_identity_key, governance_profile,
                              implement_grants, parse_protection_kind,
                              protect, server_grants, unprotect)
from AgriBus.wire import (Field, SubmessageKind, TypeDescriptor, UInt32,
                          decode_message, encode_sample, make_guid_prefix)

from conftest import IMPLEMENT_A, IMPLEMENT_B, SERVER, event_kinds, wait_matched


@dataclass(frozen=True)
class Reading(object):
    sensor: int
    value: int

READING_TYPE = TypeDescriptor('Reading', [
    Field('sensor', UInt32, key=True),
    Field('value', UInt32),
], Reading)

SECRET = Reading(0x5A5A5A5A, 0xC3C3C3C3)


def readings_in(partition):
    return TopicDescriptor('readings', READING_TYPE, QosProfile(
        Reliability.RELIABLE, partitions=(partition,)))


# -- documents -----------------------------------------------------------------

@pytest.fixture(scope='module')
def ca():
    return ca_create()


def test_identity_verifies(ca):
    _key, public_key = generate_identity_key()
    certificate = ca.issue_identity(IMPLEMENT_A, public_key)
    certificate.verify(ca.public_key).check_validity()
    assert certificate.subject_name == IMPLEMENT_A


def test_forged_identity_rejected(ca):
    _key, public_key = generate_identity_key()
    certificate = ca.issue_identity(IMPLEMENT_A, public_key)
    forged = replace(certificate, subject_name=IMPLEMENT_B)
    with pytest.raises(SecurityError) as error:
        forged.verify(ca.public_key)
    assert error.value.code == 'CERT_INVALID'
    with pytest.raises(SecurityError):
        certificate.verify(ca_create().public_key)


def test_expired_request(ca):
    _key, public_key = generate_identity_key()
    now = int(time.time())
    with pytest.raises(SecurityError) as error:
        ca.issue_identity(IMPLEMENT_A, public_key, now - 7200, now - 3600)
    assert error.value.code == 'EXPIRED_REQUEST'


def test_expired_certificate(ca):
    _key, public_key = generate_identity_key()
    certificate = ca.issue_identity(IMPLEMENT_A, public_key)
    with pytest.raises(SecurityError) as error:
        certificate.check_validity(certificate.not_after + 1)
    assert error.value.code == 'CERT_INVALID'


def test_governance_document_travels(ca):
    document = ca.sign_governance(governance_profile('default'))
    loaded = GovernanceDocument.from_dict(document.to_dict())
    loaded.verify(ca.public_key)
    assert loaded == document
    assert loaded.digest == document.digest
    rule = loaded.rule_for('t_pd_values_reliable')
    assert rule.data_protection_kind == ProtectionKind.ENCRYPT
    assert not rule.is_open


def test_tampered_governance(ca):
    document = ca.sign_governance(governance_profile('encrypt'))
    weakened = replace(document,
                       rtps_protection_kind=ProtectionKind.NONE)
    with pytest.raises(SecurityError) as error:
        weakened.verify(ca.public_key)
    assert error.value.code == 'SECURITY_CONFIG_INVALID'


def test_permissions_document_travels(ca):
    document = ca.sign_permissions(PermissionsDocument(
        IMPLEMENT_A, implement_grants(IMPLEMENT_A)))
    loaded = PermissionsDocument.from_dict(document.to_dict())
    loaded.verify(ca.public_key).check_validity()
    assert loaded.grants == document.grants


@pytest.mark.parametrize('text,kind', [
    ('ENCRYPT', ProtectionKind.ENCRYPT),
    ('sign', ProtectionKind.SIGN),
    ('None', ProtectionKind.NONE),
])
def test_protection_kinds(text, kind):
    assert parse_protection_kind(text) == kind


@pytest.mark.parametrize('text,code', [
    ('SIGN_WITH_ORIGIN_AUTHENTICATION', 'UNSUPPORTED'),
    ('ENCRYPT_WITH_ORIGIN_AUTHENTICATION', 'UNSUPPORTED'),
    ('SHOUT', 'SECURITY_CONFIG_INVALID'),
])
def test_bad_protection_kinds(text, code):
    with pytest.raises(SecurityError) as error:
        parse_protection_kind(text)
    assert error.value.code == code


def test_unknown_governance_profile():
    with pytest.raises(SecurityError) as error:
        governance_profile('paranoid')
    assert error.value.code == 'SECURITY_CONFIG_INVALID'


# -- permissions ---------------------------------------------------------------

@pytest.mark.parametrize('action,topic,partition,decision', [
    (Action.PUBLISH, 't_pd_values_reliable', 'FF0001', Decision.ALLOW),
    (Action.SUBSCRIBE, 't_ddop_hierarchy', 'FF0001', Decision.ALLOW),
    (Action.PUBLISH, 't_pd_values_reliable', 'FF0002', Decision.DENY),
    (Action.PUBLISH, 't_pd_values_reliable', '', Decision.DENY),
    (Action.PUBLISH, 't_service_discovery', '', Decision.ALLOW),
    (Action.SUBSCRIBE, 't_service_discovery', '', Decision.ALLOW),
])
def test_implement_grants(action, topic, partition, decision):
    document = PermissionsDocument(IMPLEMENT_A, implement_grants(IMPLEMENT_A))
    assert check_permission(document, action, topic, partition) == decision


def test_server_grants_everything():
    document = PermissionsDocument(SERVER, server_grants())
    for action in Action:
        assert check_permission(document, action, 'anything', 'FF0002') == \
            Decision.ALLOW


def test_default_deny_and_first_match():
    document = PermissionsDocument(IMPLEMENT_A, (
        Grant(Decision.DENY, Action.PUBLISH, ('secret*',), ('*',)),
        Grant(Decision.ALLOW, Action.PUBLISH, ('*',), ('*',)),
    ))
    assert check_permission(document, 'publish', 'secret_plan', 'A') == \
        Decision.DENY
    assert check_permission(document, 'publish', 'weather', 'A') == \
        Decision.ALLOW
    assert check_permission(document, 'subscribe', 'weather', 'A') == \
        Decision.DENY
    assert check_permission(PermissionsDocument(IMPLEMENT_A), 'publish',
                            'weather') == Decision.DENY


# -- credential files ----------------------------------------------------------

def test_security_config_loads(security):
    config = security(IMPLEMENT_A)
    assert config.name == IMPLEMENT_A
    assert config.governance.rtps_protection_kind == ProtectionKind.SIGN


def test_ca_reloads(creds):
    ca = CertificateAuthority.load(creds)
    _key, public_key = generate_identity_key()
    certificate = ca.issue_identity(IMPLEMENT_A, public_key)
    config = SecurityConfig.load(creds, IMPLEMENT_A)
    certificate.verify(config.ca_public_key)


def test_foreign_key_rejected(security):
    config = security(IMPLEMENT_A)
    other, _public_key = generate_identity_key()
    with pytest.raises(SecurityError) as error:
        SecurityConfig(config.ca_public_key, config.certificate, other,
                       config.permissions, config.governance)
    assert error.value.code == 'CERT_INVALID'


def test_missing_identity(creds):
    with pytest.raises(SecurityError) as error:
        SecurityConfig.load(creds, 0xDEAD)
    assert error.value.code == 'CERT_INVALID'


def test_participant_needs_matching_identity(participants, security):
    with pytest.raises(SecurityError) as error:
        participants(IMPLEMENT_B, security(IMPLEMENT_A))
    assert error.value.code == 'SECURITY_CONFIG_INVALID'
    with pytest.raises(SecurityError) as error:
        participants(IMPLEMENT_A, security(IMPLEMENT_A), domain_id=7)
    assert error.value.code == 'SECURITY_CONFIG_INVALID'


# -- handshake -----------------------------------------------------------------

def handshake_pair(security, responder_name=SERVER):
    initiator_prefix = make_guid_prefix(IMPLEMENT_A, b'\x00' * 4)
    responder_prefix = make_guid_prefix(responder_name, b'\x00' * 4)
    initiator = Handshake(security(IMPLEMENT_A), initiator_prefix,
                          responder_prefix, True)
    responder = Handshake(security(SERVER), responder_prefix,
                          initiator_prefix, False)
    return initiator, responder


def test_handshake_agrees_on_keys(security):
    initiator, responder = handshake_pair(security)
    reply = responder.on_message(initiator.begin())
    final = initiator.on_message(reply)
    assert responder.on_message(final) is None
    assert initiator.complete and responder.complete
    assert initiator.keys.key_check(SCOPE_RTPS) == \
        responder.keys.key_check(SCOPE_RTPS)
    assert initiator.remote_certificate.subject_name == SERVER
    assert responder.remote_certificate.subject_name == IMPLEMENT_A


def test_handshake_fresh_keys_each_time(security):
    first = handshake_pair(security)
    second = handshake_pair(security)
    for initiator, responder in (first, second):
        responder.on_message(initiator.on_message(
            responder.on_message(initiator.begin())))
    assert first[0].keys.key_check(SCOPE_RTPS) != \
        second[0].keys.key_check(SCOPE_RTPS)


def test_handshake_replayed_reply(security):
    initiator, responder = handshake_pair(security)
    reply = responder.on_message(initiator.begin())
    initiator.on_message(reply)
    with pytest.raises(SecurityError) as error:
        initiator.on_message(reply)
    assert error.value.code == 'HANDSHAKE_UNEXPECTED'


def test_handshake_reply_from_another_session(security):
    initiator, responder = handshake_pair(security)
    other_initiator, other_responder = handshake_pair(security)
    initiator.begin()
    stale = other_responder.on_message(other_initiator.begin())
    with pytest.raises(SecurityError) as error:
        initiator.on_message(stale)
    assert error.value.code == 'SIGNATURE_INVALID'


def test_handshake_bad_signature(security):
    initiator, responder = handshake_pair(security)
    reply = responder.on_message(initiator.begin())
    forged = replace(reply, signature=bytes(64))
    with pytest.raises(SecurityError) as error:
        initiator.on_message(forged)
    assert error.value.code == 'SIGNATURE_INVALID'


def test_handshake_certificate_for_other_name(security):
    """the responder prefix says FF0002 but the certificate says FF0100"""
    initiator, responder = handshake_pair(security, IMPLEMENT_B)
    with pytest.raises(SecurityError) as error:
        initiator.on_message(responder.on_message(initiator.begin()))
    assert error.value.code == 'CERT_INVALID'


# -- envelopes -----------------------------------------------------------------

def session_pair():
    secret = bytes(range(32))
    return SessionKeys(secret), SessionKeys(secret)


@pytest.mark.parametrize('kind', list(ProtectionKind))
def test_envelope_opens(kind):
    sender, receiver = session_pair()
    envelope = protect('data:x', kind, sender, b'payload', b'aad')
    assert unprotect('data:x', kind, receiver, envelope, b'aad') == b'payload'


def test_encryption_hides_payload():
    sender, _receiver = session_pair()
    envelope = protect('data:x', ProtectionKind.ENCRYPT, sender,
                       b'secret payload')
    assert b'secret payload' not in envelope
    signed = protect('data:x', ProtectionKind.SIGN, sender, b'secret payload')
    assert b'secret payload' in signed


@settings(max_examples=200)
@given(st.sampled_from([ProtectionKind.SIGN, ProtectionKind.ENCRYPT]),
       st.binary(min_size=1, max_size=64), st.data())
def test_tampered_envelope_rejected(kind, payload, data):
    sender, receiver = session_pair()
    envelope = bytearray(protect('data:x', kind, sender, payload, b'aad'))
    position = data.draw(st.integers(0, len(envelope) - 1))
    bit = data.draw(st.integers(0, 7))
    envelope[position] ^= 1 << bit
    with pytest.raises(SecurityError) as error:
        unprotect('data:x', kind, receiver, bytes(envelope), b'aad')
    assert error.value.code in ('MAC_INVALID', 'KIND_MISMATCH')


def test_envelope_bound_to_aad_and_scope():
    sender, receiver = session_pair()
    envelope = protect('data:x', ProtectionKind.SIGN, sender, b'p', b'aad')
    with pytest.raises(SecurityError) as error:
        unprotect('data:x', ProtectionKind.SIGN, receiver, envelope, b'other')
    assert error.value.code == 'MAC_INVALID'
    with pytest.raises(SecurityError) as error:
        unprotect('data:y', ProtectionKind.SIGN, receiver, envelope, b'aad')
    assert error.value.code == 'MAC_INVALID'


def test_envelope_kind_must_match():
    sender, receiver = session_pair()
    envelope = protect('data:x', ProtectionKind.SIGN, sender, b'p')
    with pytest.raises(SecurityError) as error:
        unprotect('data:x', ProtectionKind.ENCRYPT, receiver, envelope)
    assert error.value.code == 'KIND_MISMATCH'


def test_envelope_needs_session():
    with pytest.raises(SecurityError) as error:
        protect('data:x', ProtectionKind.SIGN, None, b'p')
    assert error.value.code == 'NO_SESSION'


def test_envelope_replay():
    sender, receiver = session_pair()
    first = protect('data:x', ProtectionKind.ENCRYPT, sender, b'one')
    second = protect('data:x', ProtectionKind.ENCRYPT, sender, b'two')
    assert unprotect('data:x', ProtectionKind.ENCRYPT, receiver, second) == \
        b'two'
    # late but not seen before
    assert unprotect('data:x', ProtectionKind.ENCRYPT, receiver, first) == \
        b'one'
    with pytest.raises(SecurityError) as error:
        unprotect('data:x', ProtectionKind.ENCRYPT, receiver, first)
    assert error.value.code == 'NONCE_REPLAYED'


def test_replay_window_edges():
    window = ReplayWindow(8)
    window.update(20)
    window.check(13)
    with pytest.raises(SecurityError):
        window.check(12)
    with pytest.raises(SecurityError):
        window.check(20)
    window.check(21)


# -- secure participants ---------------------------------------------------------

def secure_pair(participants, network, security, profile='default'):
    implement = participants(IMPLEMENT_A, security(IMPLEMENT_A, profile))
    server = participants(SERVER, security(SERVER, profile))
    topic = readings_in('FF0001')
    writer = implement.create_writer(topic)
    reader = server.create_reader(topic)
    assert wait_matched(network, writer, reader, 10.0)
    return implement, server, writer, reader


def test_authenticated_exchange(participants, network, security):
    implement, server, writer, reader = secure_pair(participants, network,
                                                    security)
    writer.write(SECRET)
    assert network.run_until_true(lambda: reader.received == 1, 2.0)
    assert reader.read_state()[0].latest == SECRET
    assert server.discovery.peers[implement.prefix].state == PeerState.MATCHED
    assert server.discovery.peers[implement.prefix].authenticated
    assert EventKind.PARTICIPANT_AUTHENTICATED in event_kinds(server)


@pytest.mark.parametrize('profile,visible', [
    ('default', False),
    ('encrypt', False),
    ('sign', True),
    ('none', True),
])
def test_payload_on_the_wire(participants, network, security, profile,
                             visible):
    _implement, _server, writer, reader = secure_pair(participants, network,
                                                      security, profile)
    writer.write(SECRET)
    assert network.run_until_true(lambda: reader.received == 1, 2.0)
    payload = encode_sample(READING_TYPE, SECRET)
    assert any(payload in record.data for record in network.trace) == visible


def _last_envelope(network, source, destination):
    for record in reversed(network.delivered(destination.transport)):
        if record.source != source.transport.unicast_locator:
            continue
        message = decode_message(record.data)
        if [s.kind for s in message.submessages] == \
           [SubmessageKind.SECURE_ENVELOPE]:
            return record
    raise AssertionError('no protected message seen')


def test_replayed_datagram_rejected(participants, network, security):
    implement, server, writer, reader = secure_pair(participants, network,
                                                    security)
    writer.write(SECRET)
    network.run_until_true(lambda: reader.received == 1, 2.0)
    record = _last_envelope(network, implement, server)
    implement.transport.send(record.destination, record.data)
    network.run_for(0.1)
    assert server.stats['rejected_replay'] == 1
    assert reader.received == 1


def test_tampered_datagram_rejected(participants, network, security):
    implement, server, writer, reader = secure_pair(participants, network,
                                                    security)
    writer.write(SECRET)
    network.run_until_true(lambda: reader.received == 1, 2.0)
    record = _last_envelope(network, implement, server)
    data = bytearray(record.data)
    data[-1] ^= 0x01
    implement.transport.send(record.destination, bytes(data))
    network.run_for(0.1)
    assert server.stats['rejected_mac'] == 1


def rejections(participant):
    return sum(count for stat, count in participant.stats.items()
               if stat.startswith('rejected_'))


@pytest.mark.parametrize('profile', ['default', 'encrypt'])
def test_every_single_bit_flip_rejected(participants, network, security,
                                        profile):
    implement, server, writer, reader = secure_pair(participants, network,
                                                    security, profile)
    writer.write(SECRET)
    network.run_until_true(lambda: reader.received == 1, 2.0)
    record = _last_envelope(network, implement, server)
    state = reader.read_state()
    before = rejections(server)
    received = server.stats['samples_received']
    rng = random.Random(0xA6B5)
    flips = 10000
    for batch in range(0, flips, 500):
        for _flip in range(500):
            data = bytearray(record.data)
            bit = rng.randrange(len(data) * 8)
            data[bit // 8] ^= 1 << (bit % 8)
            implement.transport.send(record.destination, bytes(data))
        network.run_for(0.02)
    network.run_for(0.2)
    assert rejections(server) - before == flips
    assert server.stats['samples_received'] == received
    assert reader.received == 1
    assert reader.read_state() == state


def test_unauthenticated_participant_excluded(participants, network,
                                              security):
    server = participants(SERVER, security(SERVER))
    intruder = participants(0xBAD)
    topic = readings_in('FF0001')
    server.create_reader(topic)
    writer = intruder.create_writer(topic)
    network.run_for(3.0)
    writer.write(SECRET)
    network.run_for(1.0)
    assert not server.discovery.matches
    assert not intruder.discovery.matches
    assert not server.discovery.remote_endpoints
    assert server.discovery.peers[intruder.prefix].state == PeerState.IGNORED
    assert EventKind.UNAUTHENTICATED_IGNORED in event_kinds(server)
    assert EventKind.UNAUTHENTICATED_IGNORED in event_kinds(intruder)


def test_governance_mismatch_ignored(participants, network, security):
    implement = participants(IMPLEMENT_A, security(IMPLEMENT_A, 'default'))
    server = participants(SERVER, security(SERVER, 'encrypt'))
    network.run_for(2.0)
    assert server.discovery.peers[implement.prefix].state == PeerState.IGNORED
    assert EventKind.KIND_MISMATCH in event_kinds(server)


def test_partition_outside_grants(participants, security):
    implement = participants(IMPLEMENT_B, security(IMPLEMENT_B))
    with pytest.raises(SecurityError) as error:
        implement.create_writer(readings_in('FF0001'))
    assert error.value.code == 'PERMISSION_DENIED'
    implement.create_writer(readings_in('FF0002'))
