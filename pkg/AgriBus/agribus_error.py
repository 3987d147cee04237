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
Errors raised within agribus

Every error carries a stable upper-case code so scripts and tests can match
on it without parsing translated messages.
"""

import sys
import traceback

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SECURITY = 3
EXIT_PROTOCOL = 4


class AgriBusError(Exception):
    """failure with a stable code for callers and a message for people"""
    exit_code = EXIT_PROTOCOL

    def __init__(self, code, message=None):
        self.code = code
        self.message = message or code
        Exception.__init__(self, '%s: %s' % (code, self.message))


class ConfigError(AgriBusError):
    """bad flags, unreadable files, invalid domain ids"""
    exit_code = EXIT_CONFIG


class WireError(AgriBusError):
    """malformed or oversized bytes"""


class TransportError(AgriBusError):
    """sockets and the simulated network"""


class PubSubError(AgriBusError):
    """endpoints, matching, ownership"""


class SecurityError(AgriBusError):
    """credentials, handshakes, envelopes, permissions"""
    exit_code = EXIT_SECURITY


class TcError(AgriBusError):
    """task controller protocol"""


class BenchError(AgriBusError):
    """benchmark harness"""


def handle_error(exception_type, exception_value, exception_traceback):
    """report errors to the operator on stderr and exit with a stable code"""
    if issubclass(exception_type, AgriBusError):
        sys.stderr.write(_('ERROR [%(code)s]: %(message)s\n') % {
            'code': exception_value.code,
            'message': exception_value.message,
        })
        sys.exit(exception_value.exit_code)
    elif issubclass(exception_type, KeyboardInterrupt): # ctrl+c
        return
    else: # uncaught exception in code
        sys.stderr.write(_("""There has been an uncaught exception in agribus.
This is most likely a programming error. Please submit a bug report.\n"""))
        sys.stderr.write(''.join(traceback.format_exception(
            exception_type,
            exception_value,
            exception_traceback,
        )))
        sys.exit(1)
