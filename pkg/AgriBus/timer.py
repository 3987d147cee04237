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
provide the periodic timer context of live participants

Announcements, heartbeats, acknacks, lease and deadline checks all run from
participant.tick(); in sim mode the simulated network drives tick() from its
virtual clock and none of this is used.
"""
import logging
import threading

log = logging.getLogger(__name__)

TICK_INTERVAL = 0.010


def start_timer(participant):
    """start the timer thread of a live participant"""
    stop_event = threading.Event()
    thread = threading.Thread(
        target=_timer_loop,
        args=(participant, stop_event),
        name='agribus-timer-%X' % participant.name,
        daemon=True,
    )
    participant.timer_stop_event = stop_event
    participant.timer_thread = thread
    participant.timer_ticks = 0
    thread.start()


def stop_timer(participant):
    """stop the timer thread and wait for it"""
    stop_event = getattr(participant, 'timer_stop_event', None)
    if stop_event is None:
        return
    stop_event.set()
    thread = participant.timer_thread
    if thread is not threading.current_thread():
        thread.join(1.0)
    participant.timer_stop_event = None
    participant.timer_thread = None


def timer_timeout(participant):
    """run one round of periodic work; False stops the timer"""
    if participant.closed:
        return False
    participant.tick(participant.clock.now())
    participant.timer_ticks += 1
    return True


def _timer_loop(participant, stop_event):
    while not stop_event.wait(TICK_INTERVAL):
        try:
            if not timer_timeout(participant):
                break
        except Exception:
            # the next tick retries
            log.exception('periodic work failed for %X', participant.name)
