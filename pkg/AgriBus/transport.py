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
moving datagrams around

Two interchangeable implementations: UDP sockets (one multicast group for
discovery, one unicast port per participant) and an in-process simulated
network on a virtual clock with seeded loss, delay and reordering. Both call
handler(data, source_locator) for every datagram they deliver.
"""

import enum
import errno
import heapq
import logging
import queue
import random
import select
import socket
import struct
import threading
import time
from dataclasses import dataclass

from .agribus_error import TransportError
from .globals import config as global_config
from .utils import discovery_address
from .wire import MAX_DATAGRAM

log = logging.getLogger(__name__)

MAX_DOMAIN_ID = 232
SIM_TICK_INTERVAL = 0.005


class LocatorKind(enum.IntEnum):
    UDP_UNICAST = 1
    UDP_MULTICAST = 2
    SIM = 3
    SIM_MULTICAST = 4


@dataclass(frozen=True)
class Locator(object):
    kind: LocatorKind
    address: str
    port: int

    @property
    def is_multicast(self):
        return self.kind in (LocatorKind.UDP_MULTICAST,
                             LocatorKind.SIM_MULTICAST)

    def __str__(self):
        return '%s:%d' % (self.address, self.port)


@dataclass(frozen=True)
class TransportConfig(object):
    domain_id: int = 0
    multicast_addr: str = '239.255.77.77'
    discovery_port: int = 7400
    unicast_ports: range = range(7650, 7750)
    interface: str = ''
    max_datagram: int = MAX_DATAGRAM

    @classmethod
    def for_domain(cls, domain_id, config=None):
        """ports and addresses for one domain, from the configuration"""
        config = config or global_config
        if not 0 <= domain_id <= MAX_DOMAIN_ID:
            raise TransportError('BAD_DOMAIN',
                                 _('domain id %d outside 0..232') % domain_id)
        port_base = config.getint('discovery', 'port_base')
        unicast_base = config.getint('transport', 'unicast_port_base')
        per_domain = config.getint('transport', 'ports_per_domain')
        first = unicast_base + domain_id * per_domain
        return cls(
            domain_id=domain_id,
            multicast_addr=discovery_address(config),
            discovery_port=port_base + domain_id,
            unicast_ports=range(first, first + per_domain),
            interface=config.get('transport', 'interface'),
            max_datagram=config.getint('transport', 'max_datagram'),
        )


class WallClock(object):
    """monotonic seconds"""

    def now(self):
        return time.monotonic()

    def sleep(self, seconds):
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock(object):
    """simulated seconds; sleeping runs the network forward"""

    def __init__(self, network):
        self.network = network
        self._now = 0.0

    def now(self):
        return self._now

    def sleep(self, seconds):
        self.network.run_for(max(seconds, 0.0))

    def _advance(self, when):
        if when > self._now:
            self._now = when


class Transport(object):
    """what a participant needs from a transport"""
    clock = None
    unicast_locator = None
    multicast_locator = None

    def __init__(self, transport_config):
        self.config = transport_config
        self.handler = None

    def set_handler(self, handler):
        self.handler = handler

    def check_size(self, data):
        if len(data) > self.config.max_datagram:
            raise TransportError(
                'OVERSIZE_DATAGRAM',
                _('%(size)d bytes, at most %(max)d fit in one datagram') %
                {'size': len(data), 'max': self.config.max_datagram})

    def send(self, locator, data):
        raise NotImplementedError

    def close(self):
        raise NotImplementedError

    def _deliver(self, data, source):
        handler = self.handler
        if handler is not None:
            handler(data, source)


def open_participant_transport(transport_config, network=None):
    """UDP sockets, or an attachment to a simulated network"""
    if network is not None:
        return network.open_transport(transport_config)
    return UdpTransport(transport_config)


# -- UDP ---------------------------------------------------------------------

class UdpTransport(Transport):
    """multicast discovery socket plus one unicast socket

    both sockets are read by one thread feeding the inbound queue, a second
    thread drains the queue into the handler"""

    def __init__(self, transport_config):
        Transport.__init__(self, transport_config)
        self.clock = WallClock()
        self.inbound = queue.Queue()
        self._closed = False
        self.unicast_socket, port = self._bind_unicast()
        try:
            self.multicast_socket = self._join_multicast()
        except TransportError:
            self.unicast_socket.close()
            raise
        self.unicast_locator = Locator(LocatorKind.UDP_UNICAST,
                                       transport_config.interface, port)
        self.multicast_locator = Locator(LocatorKind.UDP_MULTICAST,
                                         transport_config.multicast_addr,
                                         transport_config.discovery_port)
        self._receiver = threading.Thread(target=self._receive_loop,
                                          name='agribus-recv-%d' % port,
                                          daemon=True)
        self._dispatcher = threading.Thread(target=self._dispatch_loop,
                                            name='agribus-dispatch-%d' % port,
                                            daemon=True)
        self._receiver.start()
        self._dispatcher.start()
        log.debug('udp transport on port %d, group %s', port,
                  self.multicast_locator)

    def _bind_unicast(self):
        ports = self.config.unicast_ports
        if not len(ports):
            raise TransportError('PORT_EXHAUSTED', _('empty unicast port range'))
        for port in ports:
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            try:
                sock.bind((self.config.interface, port))
            except OSError as error:
                sock.close()
                if error.errno in (errno.EADDRINUSE, errno.EACCES):
                    continue
                raise TransportError('BIND_FAILED', str(error))
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 1)
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
            if self.config.interface:
                sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_IF,
                                socket.inet_aton(self.config.interface))
            return sock, port
        raise TransportError('PORT_EXHAUSTED',
                             _('no free unicast port in %(first)d..%(last)d') %
                             {'first': ports[0], 'last': ports[-1]})

    def _join_multicast(self):
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM,
                             socket.IPPROTO_UDP)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, 'SO_REUSEPORT'):
            try:
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
            except OSError:
                pass
        try:
            sock.bind(('', self.config.discovery_port))
            membership = struct.pack(
                '4s4s', socket.inet_aton(self.config.multicast_addr),
                socket.inet_aton(self.config.interface or '0.0.0.0'))
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP,
                            membership)
        except OSError as error:
            sock.close()
            raise TransportError('MULTICAST_JOIN_FAILED',
                                 _('cannot join %(group)s:%(port)d: %(error)s') %
                                 {'group': self.config.multicast_addr,
                                  'port': self.config.discovery_port,
                                  'error': error})
        return sock

    def send(self, locator, data):
        self.check_size(data)
        try:
            self.unicast_socket.sendto(data, (locator.address or '127.0.0.1',
                                              locator.port))
        except OSError as error:
            log.warning('send to %s failed: %s', locator, error)
            return False
        return True

    def _receive_loop(self):
        sockets = [self.unicast_socket, self.multicast_socket]
        while not self._closed:
            try:
                readable, _w, _x = select.select(sockets, [], [], 0.1)
            except (OSError, ValueError):
                break
            for sock in readable:
                try:
                    data, (address, port) = sock.recvfrom(65535)
                except OSError:
                    continue
                self.inbound.put((data, Locator(LocatorKind.UDP_UNICAST,
                                                address, port)))
        self.inbound.put(None)

    def _dispatch_loop(self):
        while True:
            item = self.inbound.get()
            if item is None:
                break
            try:
                self._deliver(*item)
            except Exception:
                log.exception('inbound datagram handler failed')

    def close(self):
        if self._closed:
            return
        self._closed = True
        self._receiver.join(1.0)
        self.unicast_socket.close()
        self.multicast_socket.close()
        if self._dispatcher is not threading.current_thread():
            self._dispatcher.join(1.0)


# -- simulation --------------------------------------------------------------

@dataclass(frozen=True)
class SimNetworkConfig(object):
    """loss and delay applied to every link

    delay_ms is a (low, high) range in milliseconds, fixed when equal"""
    loss_probability: float = 0.0
    delay_ms: tuple = (1.0, 1.0)
    reorder: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_probability <= 1.0:
            raise TransportError('BAD_SIM_CONFIG',
                                 _('loss probability must be within [0, 1]'))
        low, high = self.delay_ms
        if not 0.0 <= low <= high:
            raise TransportError('BAD_SIM_CONFIG', _('bad delay range'))


@dataclass(frozen=True)
class TraceRecord(object):
    sent_at: float
    source: Locator
    destination: Locator
    data: bytes
    delivered_at: float = None

    @property
    def dropped(self):
        return self.delivered_at is None


class SimTransport(Transport):
    """one participant's attachment to a SimNetwork"""

    def __init__(self, network, transport_config, address, port):
        Transport.__init__(self, transport_config)
        self.network = network
        self.clock = network.clock
        self.unicast_locator = Locator(LocatorKind.SIM, address, port)
        self.multicast_locator = Locator(LocatorKind.SIM_MULTICAST,
                                         transport_config.multicast_addr,
                                         transport_config.discovery_port)
        self.closed = False

    def send(self, locator, data):
        self.check_size(data)
        if self.closed:
            return False
        self.network.send(self, locator, bytes(data))
        return True

    def close(self):
        if not self.closed:
            self.closed = True
            self.network.detach(self)


class SimNetwork(object):
    """deterministic in-process network

    every random decision comes from one seeded generator in send order, so
    the same seed and the same send schedule give the same trace"""

    def __init__(self, sim_config=None, keep_trace=True):
        self.config = sim_config or SimNetworkConfig()
        self.clock = VirtualClock(self)
        self.trace = []
        self.keep_trace = keep_trace
        self._rng = random.Random(self.config.seed)
        self._entropy = random.Random('entropy-%d' % self.config.seed)
        self._events = []
        self._order = 0
        self._transports = {}
        self._groups = {}
        self._fifo = {}
        self._links = {}
        self._silenced = set()
        self._tickers = []
        self._next_tick = 0.0
        self._running = False
        self._hosts = 0

    def entropy(self, size):
        """reproducible random bytes for guid prefixes"""
        return bytes(self._entropy.getrandbits(8) for _index in range(size))

    def open_transport(self, transport_config):
        ports = transport_config.unicast_ports
        if not len(ports):
            raise TransportError('PORT_EXHAUSTED', _('empty unicast port range'))
        self._hosts += 1
        address = 'sim-%d' % self._hosts
        used = set(key[1] for key in self._transports)
        for port in ports:
            if port not in used:
                break
        else:
            raise TransportError('PORT_EXHAUSTED',
                                 _('no free unicast port in the simulation'))
        transport = SimTransport(self, transport_config, address, port)
        self._transports[(address, port)] = transport
        group = (transport_config.multicast_addr,
                 transport_config.discovery_port)
        self._groups.setdefault(group, []).append(transport)
        return transport

    def detach(self, transport):
        key = (transport.unicast_locator.address,
               transport.unicast_locator.port)
        self._transports.pop(key, None)
        for members in self._groups.values():
            if transport in members:
                members.remove(transport)

    def add_ticker(self, ticker):
        """ticker.tick(now) is called every SIM_TICK_INTERVAL"""
        if ticker not in self._tickers:
            self._tickers.append(ticker)

    def remove_ticker(self, ticker):
        if ticker in self._tickers:
            self._tickers.remove(ticker)

    def set_link(self, source, destination, loss_probability=None,
                 delay_ms=None):
        """override loss or delay between two transports"""
        self._links[(source.unicast_locator.address,
                     destination.unicast_locator.address)] = \
            (loss_probability, delay_ms)

    def silence(self, transport, silenced=True):
        """drop everything to and from transport, like a pulled cable"""
        address = transport.unicast_locator.address
        if silenced:
            self._silenced.add(address)
        else:
            self._silenced.discard(address)

    def send(self, source, locator, data):
        if locator.is_multicast:
            destinations = list(self._groups.get((locator.address,
                                                  locator.port), ()))
        else:
            target = self._transports.get((locator.address, locator.port))
            destinations = [target] if target is not None else []
        now = self.clock.now()
        for destination in destinations:
            self._schedule(source, destination, data, now)

    def _schedule(self, source, destination, data, now):
        src = source.unicast_locator.address
        dst = destination.unicast_locator.address
        loss, delay = self._links.get((src, dst), (None, None))
        if loss is None:
            loss = self.config.loss_probability
        low, high = delay if delay is not None else self.config.delay_ms
        roll = self._rng.random()
        span = self._rng.random()
        if roll < loss or src in self._silenced or dst in self._silenced:
            self._record(now, source, destination, data, None)
            return
        when = now + (low + (high - low) * span) / 1000.0
        if not self.config.reorder:
            when = max(when, self._fifo.get((src, dst), 0.0))
            self._fifo[(src, dst)] = when
        self._order += 1
        heapq.heappush(self._events, (when, self._order, destination,
                                      source.unicast_locator, data))
        self._record(now, source, destination, data, when)

    def _record(self, now, source, destination, data, when):
        if self.keep_trace:
            self.trace.append(TraceRecord(now, source.unicast_locator,
                                          destination.unicast_locator, data,
                                          when))

    def run_until(self, end):
        """deliver datagrams and tick participants up to time end"""
        if self._running:
            raise TransportError('REENTRANT_RUN',
                                 _('the simulation cannot be run from a callback'))
        self._running = True
        try:
            while True:
                next_delivery = self._events[0][0] if self._events else None
                if next_delivery is not None and \
                   next_delivery <= self._next_tick and next_delivery <= end:
                    when, _order, destination, source, data = \
                        heapq.heappop(self._events)
                    self.clock._advance(when)
                    if not destination.closed:
                        destination._deliver(data, source)
                elif self._next_tick <= end:
                    self.clock._advance(self._next_tick)
                    for ticker in list(self._tickers):
                        ticker.tick(self._next_tick)
                    self._next_tick += SIM_TICK_INTERVAL
                else:
                    break
            self.clock._advance(end)
        finally:
            self._running = False

    def run_for(self, seconds):
        self.run_until(self.clock.now() + seconds)

    def run_until_true(self, predicate, timeout):
        """run in tick steps until predicate() holds; False on timeout"""
        deadline = self.clock.now() + timeout
        while not predicate():
            if self.clock.now() >= deadline:
                return False
            self.run_until(min(self.clock.now() + SIM_TICK_INTERVAL, deadline))
        return True

    def delivered(self, destination=None):
        """trace records that reached a destination"""
        return [record for record in self.trace if not record.dropped and
                (destination is None or
                 record.destination == destination.unicast_locator)]
