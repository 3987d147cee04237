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
the keyed instance matrix of a reader

One row per distinct key value, each row holding the newest samples its
history policy allows. Readers either react to new samples (take_new) or
look at the whole topic state (read_state).
"""

import collections
import threading
from dataclasses import dataclass
from typing import Any, Optional

from .wire import Guid, prefix_name


@dataclass(frozen=True)
class Sample(object):
    value: Any
    key_hash: bytes
    writer: Guid
    seq: int
    received_at: float = 0.0

    @property
    def sender_name(self):
        """NAME of the participant that wrote the sample"""
        return prefix_name(self.writer.prefix)


@dataclass(frozen=True)
class RowSnapshot(object):
    key_hash: bytes
    key_value: Any
    samples: tuple
    last_writer: Guid
    last_seq: int
    owner: Optional[Guid]

    @property
    def latest(self):
        return self.samples[0].value


class _Entry(object):
    __slots__ = ('sample', 'read', 'dropped')

    def __init__(self, sample):
        self.sample = sample
        self.read = False
        self.dropped = False


class _Row(object):

    def __init__(self, key_value):
        self.key_value = key_value
        self.entries = collections.deque()
        self.last_writer = None
        self.last_seq = 0
        self.owner = None
        self.owner_strength = 0


def row_key(type_descriptor, value):
    """the key a row is shown under: the key field, or a tuple of them"""
    key = type_descriptor.key_of(value)
    return key[0] if len(key) == 1 else key


class InstanceCache(object):

    def __init__(self, history_limit):
        self.history_limit = history_limit
        self._lock = threading.Lock()
        self._rows = {}
        self._unread = collections.deque()

    def __len__(self):
        with self._lock:
            return len(self._rows)

    def add(self, sample, key_value, strength=None):
        """store a sample; False when an exclusive owner outranks its writer

        strength is None on shared topics"""
        with self._lock:
            row = self._rows.get(sample.key_hash)
            if row is None:
                row = self._rows[sample.key_hash] = _Row(key_value)
            if strength is not None and not self._claim(row, sample.writer,
                                                        strength):
                return False
            entry = _Entry(sample)
            row.entries.appendleft(entry)
            if self.history_limit is not None:
                while len(row.entries) > self.history_limit:
                    row.entries.pop().dropped = True
            row.key_value = key_value
            row.last_writer = sample.writer
            row.last_seq = sample.seq
            self._unread.append(entry)
            while self._unread[0].dropped:
                self._unread.popleft()
            return True

    def _claim(self, row, writer, strength):
        if row.owner is None or row.owner == writer or \
           strength > row.owner_strength or \
           (strength == row.owner_strength and writer < row.owner):
            row.owner = writer
            row.owner_strength = strength
            return True
        return False

    def owner_of(self, key_hash):
        with self._lock:
            row = self._rows.get(key_hash)
            return row.owner if row is not None else None

    def release_owner(self, writer):
        """a writer went away, its instances are free to claim"""
        with self._lock:
            for row in self._rows.values():
                if row.owner == writer:
                    row.owner = None
                    row.owner_strength = 0

    def dispose(self, key_hash):
        with self._lock:
            row = self._rows.pop(key_hash, None)
            if row is not None:
                for entry in row.entries:
                    entry.dropped = True
            return row is not None

    def read_state(self):
        """consistent snapshot of every row, newest sample first"""
        with self._lock:
            return [RowSnapshot(key_hash, row.key_value,
                                tuple(e.sample for e in row.entries),
                                row.last_writer, row.last_seq, row.owner)
                    for key_hash, row in self._rows.items()]

    def take_new(self):
        """unread samples still held by some row, in arrival order"""
        with self._lock:
            taken = []
            while self._unread:
                entry = self._unread.popleft()
                if entry.dropped or entry.read:
                    continue
                entry.read = True
                taken.append(entry.sample)
            return taken

    def matrix(self):
        """{key value: values newest first}"""
        return dict((row.key_value, tuple(s.value for s in row.samples))
                    for row in self.read_state())

    def sample_count(self):
        with self._lock:
            return sum(len(row.entries) for row in self._rows.values())
