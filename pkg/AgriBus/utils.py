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
helper functions
"""

import os
from configparser import ConfigParser, NoOptionError, NoSectionError
# avoiding circular imports, actual import is below!
# from globals import state

DEFAULT_CONF = {
    'discovery':{
        'announce_period':'1000',
        'fast_announce_period':'100',
        'fast_announce_count':'3',
        'lease_duration':'5000',
        'multicast_addr':'239.255.77.77',
        'port_base':'7400',
    },
    'transport':{
        'unicast_port_base':'7650',
        'ports_per_domain':'100',
        'interface':'',
        'max_datagram':'61440',
    },
    'reliability':{
        'heartbeat_period':'100',
        'acknack_delay':'10',
        'max_blocking_time':'1000',
        'max_unacked':'2048',
    },
    'security':{
        'handshake_timeout':'3000',
        'handshake_retries':'3',
        'quarantine':'30000',
        'replay_window':'1024',
    },
    'benchmark':{
        'warmup':'2',
        'measure':'10',
        'cooldown':'2',
        'no_traffic_timeout':'30',
        'element_count':'100',
    },
    'debug':{
        'callback_watchdog':'0',
        'callback_budget':'50',
    },
}

class FailsafeConfigParser(ConfigParser):
    """
    ConfigParser falling back to DEFAULT_CONF

    Options missing from the file, or whole missing sections, read as the
    value DEFAULT_CONF holds for them, so configuration files written by
    older releases keep working. Only options DEFAULT_CONF does not know
    raise NoOptionError.
    """
    def get(self, section, option, **kw):
        """the value from the file, else the DEFAULT_CONF one"""
        try:
            return ConfigParser.get(self, section, option, raw=True)
        except NoOptionError:
            try:
                default_value = DEFAULT_CONF[section][option]
            except KeyError:
                raise NoOptionError(option, section)
            else:
                return default_value
        except NoSectionError:
            self.add_section(section)
            return self.get(section, option)

    def getseconds(self, section, option):
        """millisecond options as float seconds"""
        return self.getint(section, option) / 1000.0

# late import, globals imports this module
from .globals import state


def build_default_conf():
    """builds necessary default conf.

    * makes directories if not here,
    * builds the default conf file
    """
    new_config = FailsafeConfigParser()
    if not os.path.isdir(state['conf_dir']):
        os.makedirs(state['conf_dir'])
        for section, settings in DEFAULT_CONF.items():
            new_config.add_section(section)
            for key, value in settings.items():
                new_config.set(section, key, str(value))
        with open(os.path.join(state['conf_dir'], 'agribus.conf'), 'w') \
                as config_file:
            new_config.write(config_file)
    for directory in (state['creds_dir'], state['log_dir']):
        if not os.path.isdir(directory):
            os.makedirs(directory)


def discovery_address(config):
    """multicast group for discovery, AGRIBUS_DISCOVERY_ADDR wins"""
    return os.environ.get('AGRIBUS_DISCOVERY_ADDR') or \
        config.get('discovery', 'multicast_addr')


def lookup_bundled(filename, *directories):
    """lookup a data file

    order of preference is the given directories, the per-user data dir,
    then the copy bundled with the package"""
    for dirname in directories + (state['data_dir'], state['bundled_dir']):
        if not dirname:
            continue
        candidate = os.path.join(dirname, filename)
        if os.path.isfile(candidate):
            return candidate


def name_to_hex(name):
    """uppercase hexadecimal, no prefix: 0xFF0001 -> 'FF0001'"""
    return '%X' % name


def hex_to_name(text):
    """parse '0xFF0001', 'ff0001' or 'FF0001'"""
    text = text.strip()
    if text.lower().startswith('0x'):
        text = text[2:]
    return int(text, 16)
