# -*- coding: utf-8 -*-
"""shared fixtures: simulated networks, participants and credentials"""

import os
import tempfile

# keep the per-user configuration out of the tests
_home = tempfile.mkdtemp(prefix='agribus-test-')
os.environ['XDG_CONFIG_HOME'] = os.path.join(_home, 'config')
os.environ['XDG_DATA_HOME'] = os.path.join(_home, 'data')

import pytest

from AgriBus.participant import create_participant
from AgriBus.security import SecurityConfig, make_bench_set
from AgriBus.transport import SimNetwork, SimNetworkConfig
from AgriBus.utils import FailsafeConfigParser

SERVER = 0xFF0100
IMPLEMENT_A = 0xFF0001
IMPLEMENT_B = 0xFF0002
FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')


@pytest.fixture
def conf():
    """a configuration holding nothing but the defaults"""
    return FailsafeConfigParser()


@pytest.fixture
def network():
    return SimNetwork(SimNetworkConfig(seed=1))


@pytest.fixture
def participants(network, conf):
    """factory for participants on the fixture network, closed afterwards"""
    created = []

    def make(name, security=None, domain_id=0, discover_all=False, net=None):
        participant = create_participant(domain_id, name, security,
                                         net or network, conf, discover_all)
        created.append(participant)
        return participant

    yield make
    for participant in reversed(created):
        participant.close()


@pytest.fixture(scope='session')
def creds():
    """CA, identities, permissions and every governance profile for the
    server and two implements"""
    directory = tempfile.mkdtemp(prefix='agribus-creds-')
    make_bench_set(directory, SERVER, [IMPLEMENT_A, IMPLEMENT_B])
    return directory


@pytest.fixture(scope='session')
def security(creds):
    cache = {}

    def load(name, profile='default'):
        if (name, profile) not in cache:
            cache[(name, profile)] = SecurityConfig.load(creds, name, profile)
        return cache[(name, profile)]

    return load


def wait_matched(network, writer, reader, timeout=5.0):
    """run the simulation until writer and reader know each other"""
    return network.run_until_true(
        lambda: reader.guid in writer.remote_readers and
        writer.guid in reader.remote_writers, timeout)


def event_kinds(participant):
    return [event.kind for event in participant.poll_events()]
