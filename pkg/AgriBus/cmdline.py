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
AgriBus command line
====================

One binary, several commands: certificate authority tooling, the task
controller server and implement client, the benchmark runner and a network
inspector.
"""

import json
import logging
import os
import signal
import sys
from dataclasses import replace
from optparse import OptionParser

import jsonschema

import AgriBus
from .agribus_error import (EXIT_OK, ConfigError, TcError, handle_error)
from .benchmark import (BenchConfig, SecurityMode, await_link, bench_ddop,
                        exchange, run_bench, summarize, sweep,
                        write_records, write_summary)
from .globals import config, state
from .participant import create_participant
from .security import (CertificateAuthority, SecurityConfig, ca_create,
                       implement_grants, issue_identity_files, load_grants,
                       make_bench_set, server_grants, write_governance,
                       write_permissions)
from .tc_model import (ControlHandlingValue, HandlingFeature, load_ddop,
                       load_fixture_ddop)
from .tc_protocol import (Channel, ImplementSession, ServerSession,
                          await_peer_service, is_tc_client, is_tc_server)
from .transport import SimNetwork, SimNetworkConfig
from .utils import build_default_conf, hex_to_name, lookup_bundled

__VERSION__ = AgriBus.__VERSION__

NAME = 'agribus'
SECURITY_CHOICES = ['default', 'encrypt', 'sign', 'none', 'not-used']
CHANNEL_CHOICES = ['best-effort', 'reliable']
INSPECT_SCHEMA = 'inspect.schema.json'

log = logging.getLogger(__name__)


def _fullusage():
    print(_("""agribus is a data-centric publish-subscribe bus for agricultural machines.

Commands:
\tagribus ca\t\tcertificate authority: init, issue, sign-governance,
\t\t\t\tsign-permissions, bench-set
\tagribus tc-server\trun a task controller server
\tagribus tc-client\trun an implement publishing its DDOP
\tagribus bench\t\trun the throughput benchmark
\tagribus inspect\t\tdump participants, endpoints and matches as JSON

Type agribus <command> -h for more detailed usage, e.g. 'agribus bench -h'
"""))
    sys.exit(getattr(os, 'EX_USAGE', 2))


def _parse_name(text):
    try:
        name = hex_to_name(text)
    except ValueError:
        raise ConfigError('BAD_NAME', _('%r is not a hexadecimal NAME') % text)
    if not 0 < name <= 0xFFFFFFFFFFFFFFFF:
        raise ConfigError('BAD_NAME', _('NAME must be a nonzero 64-bit value'))
    return name


def _common_options(parser):
    parser.add_option('-d', '--domain', dest='domain', type='int', default=0,
                      help=_('domain id (default 0)'))
    parser.add_option('-n', '--name', dest='name', default=None,
                      help=_('64-bit NAME in hex, e.g. FF0001'))
    parser.add_option('--creds', dest='creds', default=None, metavar='DIR',
                      help=_('credential directory'))
    parser.add_option('--security', dest='security', default='not-used',
                      choices=SECURITY_CHOICES,
                      help=_('governance: default, encrypt, sign, none or '
                             'not-used (security not loaded)'))
    parser.add_option('-v', '--verbose', dest='verbose', action='store_true',
                      default=False, help=_('log at debug level'))
    parser.add_option('--log-file', dest='log_file', default=None,
                      metavar='FILE', help=_('write the log to FILE'))
    parser.add_option('--duration', dest='duration', type='float',
                      default=None, help=_('stop after this many seconds'))


def _sim_options(parser):
    parser.add_option('--sim', dest='sim', action='store_true', default=False,
                      help=_('use the simulated network'))
    parser.add_option('--seed', dest='seed', type='int', default=0)
    parser.add_option('--loss', dest='loss', type='float', default=0.0,
                      help=_('packet loss probability of the simulation'))


def _setup_logging(options):
    logging.basicConfig(
        level=logging.DEBUG if options.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        filename=options.log_file)


def _creds_dir(options):
    return options.creds or state['creds_dir']


def _security(options, name):
    """SecurityConfig for name, or None when security is not used"""
    if options.security == 'not-used':
        return None
    return SecurityConfig.load(_creds_dir(options), name, options.security)


def _participant(options, default_name, discover_all=False, network=None):
    name = _parse_name(options.name) if options.name else default_name
    return create_participant(options.domain, name, _security(options, name),
                              network, discover_all=discover_all)


def _run_until_stopped(participant, duration, step=None, period=1.0):
    """call step every period until duration passes or ctrl+c"""
    clock = participant.clock
    deadline = clock.now() + duration if duration is not None else None
    try:
        while deadline is None or clock.now() < deadline:
            if step is not None:
                step()
            remaining = period if deadline is None else \
                min(period, deadline - clock.now())
            clock.sleep(max(remaining, 0.0))
    except KeyboardInterrupt:
        log.info('interrupted')


# -- ca ----------------------------------------------------------------------

def _cmd_ca(argv):
    parser = OptionParser(
        usage=_('usage: %prog ca init|issue|sign-governance|sign-permissions|'
                'bench-set [options]'), prog=NAME)
    parser.add_option('--creds', dest='creds', default=None, metavar='DIR')
    parser.add_option('-n', '--name', dest='name', default=None)
    parser.add_option('-d', '--domain', dest='domain', type='int', default=0)
    parser.add_option('--profile', dest='profile', default='default',
                      choices=['default', 'encrypt', 'sign', 'none'])
    parser.add_option('--grants', dest='grants', default=None, metavar='FILE',
                      help=_('JSON grant list, role defaults otherwise'))
    parser.add_option('--role', dest='role', default='implement',
                      choices=['server', 'implement'])
    parser.add_option('--implements', dest='implements', default='FF0001',
                      help=_('comma separated implement NAMEs for bench-set'))
    options, args = parser.parse_args(argv[2:])
    if len(args) != 1:
        parser.error(_('exactly one ca action expected'))
    action = args[0]
    directory = _creds_dir(options)
    if action == 'init':
        if not os.path.isdir(directory):
            os.makedirs(directory)
        ca_create().save(directory)
        print(_('new certificate authority in %s') % directory)
        return EXIT_OK
    if action == 'bench-set':
        server = _parse_name(options.name) if options.name else 0xFF0100
        implements = [_parse_name(text) for text in
                      options.implements.split(',') if text.strip()]
        make_bench_set(directory, server, implements)
        print(_('benchmark credentials for %(count)d participants in '
                '%(dir)s') % {'count': len(implements) + 1, 'dir': directory})
        return EXIT_OK
    ca = CertificateAuthority.load(directory)
    if action == 'issue':
        if not options.name:
            parser.error(_('--name is required'))
        certificate = issue_identity_files(ca, directory,
                                           _parse_name(options.name))
        print(_('identity issued for %X') % certificate.subject_name)
    elif action == 'sign-governance':
        write_governance(ca, directory, options.profile, options.domain)
        print(_('governance %s signed') % options.profile)
    elif action == 'sign-permissions':
        if not options.name:
            parser.error(_('--name is required'))
        name = _parse_name(options.name)
        if options.grants:
            grants = load_grants(options.grants)
        elif options.role == 'server':
            grants = server_grants()
        else:
            grants = implement_grants(name)
        write_permissions(ca, directory, name, grants)
        print(_('permissions signed for %X') % name)
    else:
        parser.error(_('unknown ca action %r') % action)
    return EXIT_OK


# -- task controller ---------------------------------------------------------

def _cmd_tc_server(argv):
    parser = OptionParser(usage=_('usage: %prog tc-server [options]'),
                          prog=NAME)
    _common_options(parser)
    options, _args = parser.parse_args(argv[2:])
    _setup_logging(options)
    participant = _participant(options, 0xFF0100)
    reported = set()

    def report():
        for name, ddop in server.ddops().items():
            if (name, len(ddop)) not in reported:
                reported.add((name, len(ddop)))
                print(_('implement %(name)X: DDOP of %(count)d elements') %
                      {'name': name, 'count': len(ddop)})
                sys.stdout.flush()

    try:
        server = ServerSession(participant).start()
        server.on_process_value(
            lambda value, sender: log.debug('%X: %s', sender, value))
        _run_until_stopped(participant, options.duration, report, 0.1)
        report()
    finally:
        participant.close()
    return EXIT_OK


def _cmd_tc_client(argv):
    parser = OptionParser(usage=_('usage: %prog tc-client [options]'),
                          prog=NAME)
    _common_options(parser)
    parser.add_option('--ddop', dest='ddop', default=None, metavar='FILE',
                      help=_('DDOP authoring file (bundled 103 element '
                             'sprayer otherwise)'))
    parser.add_option('--channel', dest='channel', default='reliable',
                      choices=CHANNEL_CHOICES)
    parser.add_option('--timeout', dest='timeout', type='float', default=30.0,
                      help=_('seconds to wait for a TC server'))
    options, _args = parser.parse_args(argv[2:])
    _setup_logging(options)
    name = _parse_name(options.name) if options.name else 0xFF0001
    ddop = load_ddop(options.ddop, name) if options.ddop else \
        load_fixture_ddop(name)
    participant = create_participant(options.domain, name,
                                     _security(options, name))
    try:
        session = ImplementSession(participant, ddop).start()
        session.on_process_value(
            lambda value, sender: log.info('setpoint from %X: %s', sender,
                                           value))
        server = await_peer_service(participant, is_tc_server(),
                                    options.timeout)
        print(_('TC server %X found, exchanging') % server.name)
        sys.stdout.flush()
        sender = _ActualReporter(session, ddop, Channel.parse(options.channel))
        _run_until_stopped(participant, options.duration, sender.step, 0.1)
        session.check()
    finally:
        participant.close()
    return EXIT_OK


class _ActualReporter(object):
    """reports one actual value per capability and step"""

    def __init__(self, session, ddop, channel):
        self.session = session
        self.channel = channel
        self.values = [ControlHandlingValue(c.element_reference,
                                            c.handling_group,
                                            HandlingFeature.ACTUAL, c.unit, 0.0)
                       for c in ddop.capabilities]
        self.count = 0

    def step(self):
        self.session.check()
        self.count += 1
        for value in self.values:
            self.session.send_process_value(
                replace(value, value=float(self.count)), self.channel)


# -- benchmark ---------------------------------------------------------------

def _cmd_bench(argv):
    parser = OptionParser(usage=_('usage: %prog bench [options]'), prog=NAME)
    _common_options(parser)
    _sim_options(parser)
    parser.add_option('--role', dest='role', default='both',
                      choices=['server', 'implement', 'both'])
    parser.add_option('--channel', dest='channel', default='best-effort',
                      choices=CHANNEL_CHOICES)
    parser.add_option('--sweep', dest='sweep', action='store_true',
                      default=False,
                      help=_('every security configuration on both channels'))
    parser.add_option('--log', dest='log', default=None, metavar='FILE',
                      help=_('CSV log of the per second counters'))
    parser.add_option('--summary', dest='summary', default=None,
                      metavar='FILE', help=_('summary CSV, plus FILE.dat'))
    parser.add_option('--rate', dest='rate', type='float', default=None,
                      help=_('samples per second, unpaced otherwise'))
    parser.add_option('--element-count', dest='element_count', type='int',
                      default=None)
    parser.add_option('--warmup', dest='warmup', type='float', default=None)
    parser.add_option('--measure', dest='measure', type='int', default=None)
    parser.add_option('--cooldown', dest='cooldown', type='float',
                      default=None)
    options, _args = parser.parse_args(argv[2:])
    _setup_logging(options)
    security = SecurityMode.parse(options.security)
    bench_config = BenchConfig.from_config(
        config, role=options.role, channel=options.channel, security=security,
        rate=options.rate, element_count=options.element_count,
        warmup=options.warmup, measure=options.measure,
        cooldown=options.cooldown)
    if options.sweep:
        records = sweep(bench_config, domain_id=options.domain,
                        creds_dir=options.creds)
    elif options.role == 'both':
        network = None
        if options.sim:
            network = SimNetwork(SimNetworkConfig(options.loss, seed=options.seed))
        records = run_bench(bench_config, options.domain, options.creds,
                            network)
    else:
        records = _bench_one_role(options, bench_config)
    if options.log:
        write_records(options.log, records)
    summaries = summarize(records) if records else []
    for summary in summaries:
        print('%s %s %s: %.1f +- %.1f samples/s' % (
            summary.config, summary.channel, summary.role, summary.mean,
            summary.stdev))
    if options.summary:
        write_summary(summaries, options.summary, options.summary + '.dat')
    return EXIT_OK


def _bench_one_role(options, bench_config):
    """one side of a two-process benchmark, sending and counting"""
    server_role = options.role == 'server'
    participant = _participant(options, 0xFF0100 if server_role else 0xFF0001)
    try:
        if server_role:
            session = ServerSession(participant).start()
            peer = await_peer_service(participant, is_tc_client(),
                                      bench_config.no_traffic_timeout)
            await_link(session, peer.name, bench_config.no_traffic_timeout)
            target_name = peer.name
        else:
            session = ImplementSession(participant, bench_ddop(
                participant.name, bench_config.element_count)).start()
            await_peer_service(participant, is_tc_server(),
                               bench_config.no_traffic_timeout)
            target_name = session.implement_name
        try:
            return exchange(session, bench_config, target_name)
        except KeyboardInterrupt:
            return []
    finally:
        participant.close()


# -- inspect -----------------------------------------------------------------

def inspect_schema():
    path = lookup_bundled(INSPECT_SCHEMA)
    if path is None:
        raise ConfigError('MISSING_SCHEMA', _('%s is not installed') %
                          INSPECT_SCHEMA)
    with open(path, 'r') as schema_file:
        return json.load(schema_file)


def _cmd_inspect(argv):
    parser = OptionParser(usage=_('usage: %prog inspect [options]'),
                          prog=NAME)
    _common_options(parser)
    parser.add_option('--output', dest='output', default=None,
                      metavar='FILE', help=_('write the JSON dump to FILE'))
    parser.add_option('--validate', dest='validate', action='store_true',
                      default=False,
                      help=_('check the dump against the bundled schema'))
    options, _args = parser.parse_args(argv[2:])
    _setup_logging(options)
    participant = _participant(options, 0xFFFFFE, discover_all=True)
    try:
        _run_until_stopped(participant, options.duration or 3.0)
        graph = participant.graph()
    finally:
        participant.close()
    if options.validate:
        try:
            jsonschema.validate(graph, inspect_schema())
        except jsonschema.ValidationError as error:
            raise TcError('BAD_DUMP', error.message)
    dump = json.dumps(graph, indent=2, sort_keys=True)
    if options.output:
        with open(options.output, 'w') as output:
            output.write(dump + '\n')
    else:
        print(dump)
    return EXIT_OK


COMMANDS = {
    'ca': _cmd_ca,
    'tc-server': _cmd_tc_server,
    'tc-client': _cmd_tc_client,
    'bench': _cmd_bench,
    'inspect': _cmd_inspect,
}


def main(argv=None):
    sys.excepthook = handle_error
    if argv is None:
        argv = sys.argv
    if len(argv) < 2 or argv[1] not in COMMANDS:
        if len(argv) >= 2 and argv[1] == '--version':
            print('%s %s' % (NAME, __VERSION__))
            return EXIT_OK
        _fullusage()
    build_default_conf()
    signal.signal(signal.SIGTERM, signal.default_int_handler)
    return COMMANDS[argv[1]](argv)


if __name__ == '__main__':
    sys.exit(main())
