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
throughput benchmark

A sender loops over the elements of a pool, bumping one process value each
time. Both sides send and count at once, the server setpoints into the
implement's partition and the implement actuals back. A receiver starts its timer at the first sample, ignores a warmup
period, then counts samples per sender in one-second buckets and ignores a
cooldown period while traffic keeps flowing.
"""

import csv
import enum
import logging
import math
import os
import statistics
import tempfile
import threading
from dataclasses import dataclass, field

from .agribus_error import BenchError, PubSubError
from .globals import config as global_config
from .participant import create_participant
from .security import SecurityConfig, make_bench_set
from .tc_model import (ControlHandlingValue, DeviceElement, HandlingFeature,
                       HandlingGroup, Unit, UnitAtom, make_ddop)
from .tc_protocol import (Channel, ImplementSession, ServerSession,
                          await_peer_service, is_tc_client, is_tc_server)

log = logging.getLogger(__name__)

CSV_HEADER = ('config', 'channel', 'role', 'sender_name', 'timestep',
              'samples')
BENCH_SERVER_NAME = 0xFF0100
BENCH_IMPLEMENT_NAME = 0xFF0001
RATE_UNIT = Unit(UnitAtom.KILOGRAM, UnitAtom.SQUARE_METRE)


class SecurityMode(enum.Enum):
    ENCRYPT = 'encrypt'
    SIGN = 'sign'
    NONE = 'none'
    NOT_USED = 'not-used'

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        wanted = str(text).lower().replace('_', '-')
        for member in cls:
            if member.value == wanted:
                return member
        raise BenchError('BAD_SECURITY_MODE',
                         _('unknown security configuration %r') % text)

    @property
    def profile(self):
        """governance profile, None when security is not loaded at all"""
        if self == SecurityMode.NOT_USED:
            return None
        return self.value


class Role(enum.Enum):
    SERVER = 'server'
    IMPLEMENT = 'implement'
    BOTH = 'both'


@dataclass(frozen=True)
class BenchConfig(object):
    role: Role = Role.BOTH
    channel: Channel = Channel.BEST_EFFORT
    security: SecurityMode = SecurityMode.NOT_USED
    element_count: int = 100
    warmup: float = 2.0
    measure: int = 10
    cooldown: float = 2.0
    no_traffic_timeout: float = 30.0
    rate: float = None
    log_path: str = None

    def __post_init__(self):
        if self.element_count < 1:
            raise BenchError('BAD_BENCH_CONFIG',
                             _('element count must be positive'))
        if self.measure < 1 or self.warmup < 0 or self.cooldown < 0:
            raise BenchError('BAD_BENCH_CONFIG', _('bad phase durations'))
        if self.rate is not None and self.rate <= 0:
            raise BenchError('BAD_BENCH_CONFIG', _('rate must be positive'))

    @classmethod
    def from_config(cls, config=None, **overrides):
        """phases and sizes from the benchmark section, overridden by flags"""
        config = config or global_config
        values = dict(
            element_count=config.getint('benchmark', 'element_count'),
            warmup=config.getfloat('benchmark', 'warmup'),
            measure=config.getint('benchmark', 'measure'),
            cooldown=config.getfloat('benchmark', 'cooldown'),
            no_traffic_timeout=config.getfloat('benchmark',
                                               'no_traffic_timeout'),
        )
        values.update((key, value) for key, value in overrides.items()
                      if value is not None)
        values['role'] = Role(values.get('role', Role.BOTH))
        values['channel'] = Channel.parse(values.get('channel',
                                                     Channel.BEST_EFFORT))
        values['security'] = SecurityMode.parse(values.get(
            'security', SecurityMode.NOT_USED))
        return cls(**values)

    @property
    def label(self):
        return self.security.name

    @property
    def duration(self):
        return self.warmup + self.measure + self.cooldown


@dataclass(frozen=True)
class BenchRecord(object):
    config: str
    channel: str
    role: str
    sender_name: int
    timestep: int
    samples: int


@dataclass
class SendStats(object):
    sent: int = 0
    throttled: int = 0
    value: float = 0.0
    element_num: int = 0
    elapsed: float = 0.0


# -- sending -----------------------------------------------------------------

class ProcessValueSender(object):
    """the benchmark send loop, one step at a time

    the server sends setpoints, an implement actuals"""

    def __init__(self, session, config, target_name):
        self.session = session
        self.config = config
        self.feature = HandlingFeature.SETPOINT \
            if isinstance(session, ServerSession) else HandlingFeature.ACTUAL
        self.target_name = target_name
        self.stats = SendStats()
        self._started_at = None

    def step(self):
        stats = self.stats
        stats.value += 1
        stats.element_num += 1
        if stats.element_num == self.config.element_count:
            stats.element_num = 0
        value = ControlHandlingValue(
            DeviceElement(self.target_name, stats.element_num),
            HandlingGroup.APPLICATION_RATE, self.feature, RATE_UNIT,
            stats.value)
        try:
            self.session.send_process_value(value, self.config.channel)
        except PubSubError as error:
            if error.code != 'TIMEOUT':
                raise
            stats.throttled += 1
            return False
        stats.sent += 1
        return True

    def tick(self, now):
        """send whatever the configured rate owes at now"""
        if self._started_at is None:
            self._started_at = now
        owed = int(math.floor((now - self._started_at) * self.config.rate))
        while self.stats.sent + self.stats.throttled < owed:
            self.step()
        self.stats.elapsed = now - self._started_at


def run_sender(session, config, target_name=None, stop=None, iterations=None,
               duration=None):
    """loop until stop is set, iterations are done or duration has passed

    unpaced unless config.rate is set"""
    if target_name is None:
        target_name = getattr(session, 'implement_name', None)
    if target_name is None:
        raise BenchError('NO_TARGET', _('no implement to send to'))
    sender = ProcessValueSender(session, config, target_name)
    clock = session.participant.clock
    started = clock.now()
    deadline = started + duration if duration is not None else None
    while True:
        if stop is not None and stop.is_set():
            break
        if iterations is not None and sender.stats.sent >= iterations:
            break
        now = clock.now()
        if deadline is not None and now >= deadline:
            break
        sender.step()
        if config.rate is not None:
            clock.sleep(1.0 / config.rate)
    sender.stats.elapsed = clock.now() - started
    log.info('sent %d samples in %.2f s (%d throttled)', sender.stats.sent,
             sender.stats.elapsed, sender.stats.throttled)
    return sender.stats


# -- receiving ---------------------------------------------------------------

class ThroughputCounter(object):
    """per sender, per second counters over the measurement window"""

    def __init__(self, config, clock):
        self.config = config
        self.clock = clock
        self.lock = threading.Lock()
        self.started_at = None
        self.first_sample = threading.Event()
        self.counts = {}
        self.ignored = 0

    def __call__(self, value, sender_name):
        now = self.clock.now()
        with self.lock:
            if self.started_at is None:
                self.started_at = now
                self.first_sample.set()
            offset = now - self.started_at - self.config.warmup
            if not 0 <= offset < self.config.measure:
                self.ignored += 1
                return
            timestep = int(math.floor(offset)) + 1
            buckets = self.counts.setdefault(sender_name, {})
            buckets[timestep] = buckets.get(timestep, 0) + 1

    @property
    def finished_at(self):
        if self.started_at is None:
            return None
        return self.started_at + self.config.duration

    def records(self, role):
        config = self.config
        with self.lock:
            return [BenchRecord(config.label, config.channel.value, role,
                                sender_name, timestep,
                                buckets.get(timestep, 0))
                    for sender_name, buckets in sorted(self.counts.items())
                    for timestep in range(1, config.measure + 1)]


def receive(sessions, config):
    """count the configured channel on every (session, role) pair through
    warmup, measure and cooldown; records of all of them

    raise BenchError NO_TRAFFIC unless every session saw a first sample in
    time"""
    clock = sessions[0][0].participant.clock
    counters = []
    for session, role in sessions:
        if role is None:
            role = Role.SERVER.value if isinstance(session, ServerSession) \
                else Role.IMPLEMENT.value
        counter = ThroughputCounter(config, session.participant.clock)
        session.on_process_value(counter, config.channel)
        counters.append((session, role, counter))
    try:
        deadline = clock.now() + config.no_traffic_timeout
        while any(counter.started_at is None for _s, _r, counter in counters):
            remaining = deadline - clock.now()
            if remaining <= 0:
                raise BenchError('NO_TRAFFIC',
                                 _('no sample within %d s') %
                                 config.no_traffic_timeout)
            clock.sleep(min(0.05, remaining))
        finished_at = max(counter.finished_at for _s, _r, counter in counters)
        while clock.now() < finished_at:
            clock.sleep(min(0.05, finished_at - clock.now()))
    finally:
        for session, _role, counter in counters:
            session.remove_callback(counter)
    records = []
    for _session, role, counter in counters:
        counted = counter.records(role)
        log.info('%s counted %d samples from %d senders, %d outside the '
                 'window', role, sum(r.samples for r in counted),
                 len(counter.counts), counter.ignored)
        records.extend(counted)
    if config.log_path:
        write_records(config.log_path, records)
    return records


def run_receiver(session, config, role=None):
    """count the configured channel on one session, see receive()"""
    return receive([(session, role)], config)


def exchange(session, config, target_name, role=None):
    """send in a background thread while counting what the peer sends back;
    the receiving side's records"""
    stop = threading.Event()
    sender = threading.Thread(target=run_sender, args=(session, config,
                                                       target_name),
                              kwargs={'stop': stop}, name='bench-sender',
                              daemon=True)
    sender.start()
    try:
        return run_receiver(session, config, role)
    finally:
        stop.set()
        sender.join(5.0)


def await_link(server, name, timeout):
    """wait until the server follows the partition of implement name"""
    clock = server.participant.clock
    deadline = clock.now() + timeout
    while name not in server.implements:
        remaining = deadline - clock.now()
        if remaining <= 0:
            raise BenchError('NO_TRAFFIC', _('implement %X never joined') %
                             name)
        clock.sleep(min(0.05, remaining))
    return server.implements[name]


# -- logs and summaries ------------------------------------------------------

def write_records(path, records):
    """append records to a CSV log, writing the header into new files"""
    new = not os.path.isfile(path) or os.path.getsize(path) == 0
    with open(path, 'a', newline='') as log_file:
        writer = csv.writer(log_file)
        if new:
            writer.writerow(CSV_HEADER)
        for record in records:
            writer.writerow((record.config, record.channel, record.role,
                             '%X' % record.sender_name, record.timestep,
                             record.samples))


def read_records(path):
    with open(path, 'r', newline='') as log_file:
        return [BenchRecord(row['config'], row['channel'], row['role'],
                            int(row['sender_name'], 16), int(row['timestep']),
                            int(row['samples']))
                for row in csv.DictReader(log_file)]


@dataclass(frozen=True)
class Summary(object):
    config: str
    channel: str
    role: str
    mean: float
    stdev: float
    buckets: int
    series: dict = field(default_factory=dict)


def summarize(records):
    """mean and standard deviation of samples per second, per configuration,
    channel and receiving role, plus the mean per timestep"""
    groups = {}
    for record in records:
        groups.setdefault((record.config, record.channel, record.role),
                          []).append(record)
    summaries = []
    for (config, channel, role), members in sorted(groups.items()):
        counts = [record.samples for record in members]
        steps = {}
        for record in members:
            steps.setdefault(record.timestep, []).append(record.samples)
        summaries.append(Summary(
            config, channel, role, statistics.mean(counts),
            statistics.pstdev(counts), len(counts),
            dict((step, statistics.mean(values))
                 for step, values in sorted(steps.items()))))
    return summaries


def write_summary(summaries, csv_path, dat_path=None):
    """summary CSV and, optionally, a gnuplot data file"""
    with open(csv_path, 'w', newline='') as summary_file:
        writer = csv.writer(summary_file)
        writer.writerow(('config', 'channel', 'role', 'mean', 'stdev',
                         'buckets'))
        for summary in summaries:
            writer.writerow((summary.config, summary.channel, summary.role,
                             '%.3f' % summary.mean, '%.3f' % summary.stdev,
                             summary.buckets))
    if dat_path is None:
        return
    with open(dat_path, 'w') as dat_file:
        dat_file.write('# index config channel role mean stdev\n')
        for index, summary in enumerate(summaries):
            dat_file.write('%d %s %s %s %.3f %.3f\n' % (
                index, summary.config, summary.channel, summary.role,
                summary.mean, summary.stdev))


# -- whole runs --------------------------------------------------------------

def bench_security(config, creds_dir, name):
    if config.security.profile is None:
        return None
    return SecurityConfig.load(creds_dir, name, config.security.profile)


def bench_ddop(name, element_count):
    """flat pool with one section per element number the sender visits"""
    return make_ddop(name, [(element, 'Section %d' % element, 0)
                            for element in range(1, element_count)],
                     [(element, HandlingGroup.APPLICATION_RATE, RATE_UNIT)
                      for element in range(element_count)], 'Sprayer')


def run_bench(config, domain_id=0, creds_dir=None, network=None):
    """server and implement in this process, the server sending setpoints
    and the implement actuals; records of both receiving sides"""
    if config.security.profile is not None and creds_dir is None:
        creds_dir = tempfile.mkdtemp(prefix='agribus-bench-')
        make_bench_set(creds_dir, BENCH_SERVER_NAME, [BENCH_IMPLEMENT_NAME])
    server_participant = create_participant(
        domain_id, BENCH_SERVER_NAME,
        bench_security(config, creds_dir, BENCH_SERVER_NAME), network)
    implement_participant = create_participant(
        domain_id, BENCH_IMPLEMENT_NAME,
        bench_security(config, creds_dir, BENCH_IMPLEMENT_NAME), network)
    try:
        server = ServerSession(server_participant).start()
        implement = ImplementSession(
            implement_participant,
            bench_ddop(BENCH_IMPLEMENT_NAME, config.element_count)).start()
        await_peer_service(implement_participant, is_tc_server(),
                           config.no_traffic_timeout)
        await_peer_service(server_participant, is_tc_client(),
                           config.no_traffic_timeout)
        await_link(server, implement.implement_name,
                   config.no_traffic_timeout)
        if network is not None:
            return _run_simulated(server, implement, config, network)
        return _run_live(server, implement, config)
    finally:
        implement_participant.close()
        server_participant.close()


def _both_sides(server, implement):
    return [(server, Role.SERVER.value), (implement, Role.IMPLEMENT.value)]


def _run_live(server, implement, config):
    stop = threading.Event()
    senders = [threading.Thread(target=run_sender,
                                args=(session, config,
                                      implement.implement_name),
                                kwargs={'stop': stop},
                                name='bench-sender-%s' % role, daemon=True)
               for session, role in _both_sides(server, implement)]
    for sender in senders:
        sender.start()
    try:
        return receive(_both_sides(server, implement), config)
    finally:
        stop.set()
        for sender in senders:
            sender.join(5.0)


def _run_simulated(server, implement, config, network):
    if config.rate is None:
        raise BenchError('BAD_BENCH_CONFIG',
                         _('a simulated run needs a send rate'))
    senders = [ProcessValueSender(session, config, implement.implement_name)
               for session, _role in _both_sides(server, implement)]
    for sender in senders:
        network.add_ticker(sender)
    try:
        return receive(_both_sides(server, implement), config)
    finally:
        for sender in senders:
            network.remove_ticker(sender)


def sweep(config, channels=None, domain_id=0, creds_dir=None):
    """every security configuration on every channel, records of all runs"""
    records = []
    for channel in channels or list(Channel):
        for security in SecurityMode:
            run_config = BenchConfig(
                config.role, channel, security, config.element_count,
                config.warmup, config.measure, config.cooldown,
                config.no_traffic_timeout, config.rate, config.log_path)
            log.info('benchmark %s over %s', security.name, channel.value)
            records.extend(run_bench(run_config, domain_id, creds_dir))
    return records
