# -*- coding: utf-8 -*-
import csv

import pytest

from AgriBus.agribus_error import BenchError, PubSubError
from AgriBus.benchmark import (BENCH_IMPLEMENT_NAME, BENCH_SERVER_NAME,
                               CSV_HEADER, BenchConfig,
                               BenchRecord, ProcessValueSender, Role,
                               SecurityMode, ThroughputCounter, bench_ddop,
                               read_records, run_bench, run_sender,
                               summarize, sweep, write_records,
                               write_summary)
from AgriBus.tc_model import HandlingFeature, check_ddop
from AgriBus.tc_protocol import Channel, implement_start, server_start
from AgriBus.transport import SimNetwork, SimNetworkConfig

from conftest import IMPLEMENT_A, SERVER, wait_matched


class FakeClock(object):

    def __init__(self, now=0.0):
        self.current = now

    def now(self):
        return self.current


class RecordingSession(object):
    """stands in for an implement session"""

    def __init__(self, failures=()):
        self.values = []
        self.failures = list(failures)

    def send_process_value(self, value, channel):
        if self.failures:
            raise self.failures.pop(0)
        self.values.append((value, channel))


# -- configuration ----------------------------------------------------------------

def test_defaults_from_config(conf):
    bench = BenchConfig.from_config(conf)
    assert bench.warmup == 2.0
    assert bench.measure == 10
    assert bench.cooldown == 2.0
    assert bench.element_count == 100
    assert bench.duration == 14.0
    assert bench.role == Role.BOTH
    assert bench.channel == Channel.BEST_EFFORT
    assert bench.security == SecurityMode.NOT_USED
    assert bench.rate is None


def test_overrides(conf):
    bench = BenchConfig.from_config(conf, channel='reliable', security='sign',
                                    role='server', measure=3, warmup=None)
    assert bench.channel == Channel.RELIABLE
    assert bench.security == SecurityMode.SIGN
    assert bench.role == Role.SERVER
    assert bench.measure == 3
    assert bench.warmup == 2.0
    assert bench.label == 'SIGN'


@pytest.mark.parametrize('overrides', [
    {'element_count': 0},
    {'measure': 0},
    {'warmup': -1.0},
    {'cooldown': -0.5},
    {'rate': 0.0},
])
def test_bad_config(overrides):
    with pytest.raises(BenchError) as error:
        BenchConfig(**overrides)
    assert error.value.code == 'BAD_BENCH_CONFIG'


@pytest.mark.parametrize('text,mode', [
    ('encrypt', SecurityMode.ENCRYPT),
    ('SIGN', SecurityMode.SIGN),
    ('none', SecurityMode.NONE),
    ('not-used', SecurityMode.NOT_USED),
    ('not_used', SecurityMode.NOT_USED),
])
def test_security_modes(text, mode):
    assert SecurityMode.parse(text) == mode


def test_security_mode_profiles():
    assert SecurityMode.NOT_USED.profile is None
    assert SecurityMode.NONE.profile == 'none'
    with pytest.raises(BenchError) as error:
        SecurityMode.parse('default')
    assert error.value.code == 'BAD_SECURITY_MODE'


def test_bench_pool():
    ddop = check_ddop(bench_ddop(IMPLEMENT_A, 100))
    assert len(ddop) == 100
    assert len(ddop.capabilities) == 100
    assert ddop.rows[0].display_name == 'Sprayer'


# -- sending ----------------------------------------------------------------------

def test_sender_cycles_over_elements():
    session = RecordingSession()
    sender = ProcessValueSender(session, BenchConfig(element_count=3),
                                IMPLEMENT_A)
    for _step in range(7):
        assert sender.step()
    elements = [v.element_reference.element_num for v, _c in session.values]
    assert elements == [1, 2, 0, 1, 2, 0, 1]
    assert [v.value for v, _c in session.values] == [1, 2, 3, 4, 5, 6, 7]
    assert all(v.handling_feature == HandlingFeature.ACTUAL
               for v, _c in session.values)
    assert all(c == Channel.BEST_EFFORT for _v, c in session.values)


def test_sender_counts_throttling():
    session = RecordingSession([PubSubError('TIMEOUT')])
    sender = ProcessValueSender(session, BenchConfig(), IMPLEMENT_A)
    assert not sender.step()
    assert sender.step()
    assert (sender.stats.sent, sender.stats.throttled) == (1, 1)


def test_sender_passes_other_errors():
    session = RecordingSession([PubSubError('ALREADY_DELETED')])
    sender = ProcessValueSender(session, BenchConfig(), IMPLEMENT_A)
    with pytest.raises(PubSubError):
        sender.step()


def test_paced_ticks():
    session = RecordingSession()
    sender = ProcessValueSender(session, BenchConfig(rate=200.0), IMPLEMENT_A)
    sender.tick(10.0)
    assert sender.stats.sent == 0
    sender.tick(10.5)
    assert sender.stats.sent == 100
    sender.tick(11.0)
    assert sender.stats.sent == 200
    assert sender.stats.elapsed == 1.0


def test_run_sender_in_simulation(participants, network):
    server = server_start(participants(SERVER))
    implement = implement_start(participants(IMPLEMENT_A),
                                bench_ddop(IMPLEMENT_A, 10))
    assert network.run_until_true(lambda: IMPLEMENT_A in server.ddops(), 5.0)
    stats = run_sender(implement, BenchConfig(rate=100.0), iterations=50)
    assert stats.sent == 50
    assert stats.elapsed == pytest.approx(0.5, abs=0.02)


def test_run_sender_needs_a_target():
    session = RecordingSession()
    with pytest.raises(BenchError) as error:
        run_sender(session, BenchConfig(), iterations=1)
    assert error.value.code == 'NO_TARGET'


# -- counting ---------------------------------------------------------------------

def feed(counter, clock, sender, start, rate, seconds):
    for index in range(int(rate * seconds)):
        clock.current = start + index / float(rate)
        counter(None, sender)


def test_counter_buckets():
    clock = FakeClock()
    config = BenchConfig(warmup=2.0, measure=10, cooldown=2.0)
    counter = ThroughputCounter(config, clock)
    feed(counter, clock, IMPLEMENT_A, 100.0, 500, 14)
    records = counter.records('server')
    assert [r.timestep for r in records] == list(range(1, 11))
    for record in records:
        assert record.samples == pytest.approx(500, abs=1)
        assert record.sender_name == IMPLEMENT_A
        assert record.config == 'NOT_USED'
        assert record.channel == 'best_effort'
    assert sum(r.samples for r in records) + counter.ignored == 7000
    assert counter.finished_at == 114.0


def test_counter_per_sender():
    clock = FakeClock()
    config = BenchConfig(warmup=0.0, measure=2, cooldown=0.0)
    counter = ThroughputCounter(config, clock)
    counter(None, 0xB)
    clock.current = 0.5
    counter(None, 0xA)
    clock.current = 1.5
    counter(None, 0xA)
    counter(None, 0xA)
    records = counter.records('implement')
    assert [(r.sender_name, r.timestep, r.samples) for r in records] == [
        (0xA, 1, 1), (0xA, 2, 2), (0xB, 1, 1), (0xB, 2, 0)]


def test_counter_before_traffic():
    counter = ThroughputCounter(BenchConfig(), FakeClock())
    assert counter.finished_at is None
    assert counter.records('server') == []


def test_simulated_run():
    network = SimNetwork(SimNetworkConfig(seed=5))
    config = BenchConfig(element_count=10, warmup=1.0, measure=3,
                         cooldown=0.5, rate=500.0, no_traffic_timeout=10.0)
    records = run_bench(config, network=network)
    senders = {'server': BENCH_IMPLEMENT_NAME, 'implement': BENCH_SERVER_NAME}
    for role, sender_name in senders.items():
        received = [r for r in records if r.role == role]
        assert [r.timestep for r in received] == [1, 2, 3]
        for record in received:
            assert record.sender_name == sender_name
            assert record.samples == pytest.approx(500, abs=5)
    assert len(records) == 6


def test_server_sends_setpoints(participants, network):
    server = server_start(participants(SERVER))
    implement = implement_start(participants(IMPLEMENT_A),
                                bench_ddop(IMPLEMENT_A, 10))
    assert network.run_until_true(lambda: IMPLEMENT_A in server.ddops(), 5.0)
    link = server.link(IMPLEMENT_A)
    assert wait_matched(network, link.writers[Channel.RELIABLE],
                        implement.readers[Channel.RELIABLE])
    received = []
    implement.on_process_value(lambda value, sender: received.append(
        (value, sender)), Channel.RELIABLE)
    sender = ProcessValueSender(server, BenchConfig(channel=Channel.RELIABLE,
                                                    element_count=10),
                                IMPLEMENT_A)
    for _step in range(5):
        assert sender.step()
    assert network.run_until_true(lambda: len(received) == 5, 2.0)
    assert all(value.handling_feature == HandlingFeature.SETPOINT and
               value.element_reference.name == IMPLEMENT_A and
               sender_name == SERVER for value, sender_name in received)


def test_simulated_run_needs_a_rate():
    network = SimNetwork(SimNetworkConfig(seed=5))
    with pytest.raises(BenchError) as error:
        run_bench(BenchConfig(element_count=10), network=network)
    assert error.value.code == 'BAD_BENCH_CONFIG'


def test_simulated_run_with_security(creds):
    network = SimNetwork(SimNetworkConfig(seed=6))
    config = BenchConfig(channel=Channel.RELIABLE,
                         security=SecurityMode.ENCRYPT, element_count=10,
                         warmup=1.0, measure=2, cooldown=0.5, rate=200.0,
                         no_traffic_timeout=15.0)
    records = run_bench(config, creds_dir=creds, network=network)
    assert [(r.config, r.role) for r in records] == [
        ('ENCRYPT', 'server'), ('ENCRYPT', 'server'),
        ('ENCRYPT', 'implement'), ('ENCRYPT', 'implement')]
    assert all(r.samples == pytest.approx(200, abs=5) for r in records)


# -- logs and summaries -----------------------------------------------------------

RECORDS = [
    BenchRecord('ENCRYPT', 'reliable', 'server', IMPLEMENT_A, 1, 900),
    BenchRecord('ENCRYPT', 'reliable', 'server', IMPLEMENT_A, 2, 1100),
    BenchRecord('NONE', 'reliable', 'server', IMPLEMENT_A, 1, 2000),
    BenchRecord('NONE', 'reliable', 'server', IMPLEMENT_A, 2, 2000),
]


def test_log_round_trip(tmp_path):
    path = str(tmp_path / 'bench.csv')
    write_records(path, RECORDS[:2])
    write_records(path, RECORDS[2:])
    with open(path) as log_file:
        rows = list(csv.reader(log_file))
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[1] == ['ENCRYPT', 'reliable', 'server', 'FF0001', '1', '900']
    assert len(rows) == 5
    assert read_records(path) == RECORDS


def test_summaries(tmp_path):
    encrypt, plain = summarize(RECORDS)
    assert (encrypt.config, encrypt.mean, encrypt.stdev) == \
        ('ENCRYPT', 1000, 100)
    assert encrypt.series == {1: 900, 2: 1100}
    assert (plain.config, plain.mean, plain.stdev, plain.buckets) == \
        ('NONE', 2000, 0, 2)
    csv_path = str(tmp_path / 'summary.csv')
    dat_path = str(tmp_path / 'summary.dat')
    write_summary([encrypt, plain], csv_path, dat_path)
    with open(csv_path) as summary_file:
        rows = list(csv.DictReader(summary_file))
    assert rows[0] == {'config': 'ENCRYPT', 'channel': 'reliable',
                       'role': 'server', 'mean': '1000.000',
                       'stdev': '100.000', 'buckets': '2'}
    with open(dat_path) as dat_file:
        lines = dat_file.read().splitlines()
    assert lines[1] == '0 ENCRYPT reliable server 1000.000 100.000'
    assert len(lines) == 3


def test_summary_without_dat(tmp_path):
    csv_path = tmp_path / 'summary.csv'
    write_summary(summarize(RECORDS[2:]), str(csv_path))
    assert csv_path.read_text().startswith('config,channel')
    assert not (tmp_path / 'summary.csv.dat').exists()


def test_summaries_per_receiving_role():
    records = RECORDS[:2] + [
        BenchRecord('ENCRYPT', 'reliable', 'implement', SERVER, 1, 400),
        BenchRecord('ENCRYPT', 'reliable', 'implement', SERVER, 2, 600)]
    implement, server = summarize(records)
    assert (implement.role, implement.mean) == ('implement', 500)
    assert (server.role, server.mean) == ('server', 1000)


# -- over real sockets ------------------------------------------------------------

@pytest.mark.live
def test_live_sweep_ordering():
    config = BenchConfig(element_count=100, warmup=1.0, measure=5,
                         cooldown=1.0, no_traffic_timeout=15.0)
    records = sweep(config, channels=[Channel.BEST_EFFORT], domain_id=17)
    means = dict((summary.config, summary.mean) for summary in
                 summarize(r for r in records if r.role == 'server'))
    assert set(means) == {'ENCRYPT', 'SIGN', 'NONE', 'NOT_USED'}
    assert means['NOT_USED'] == pytest.approx(means['NONE'], rel=0.1)
    assert means['SIGN'] >= means['ENCRYPT']
    assert means['NONE'] > means['ENCRYPT']
    assert min(means.values()) >= 4000
