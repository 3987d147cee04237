#!/usr/bin/env python
# -*- coding:utf-8 -*-

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
global objects

Configuration, state keeping, etc
"""

import os
from sys import platform

if platform == 'win32':
    data_home, config_home = (os.environ['APPDATA'],) * 2
else:
    from xdg.BaseDirectory import xdg_config_home as config_home
    from xdg.BaseDirectory import xdg_data_home as data_home

# avoiding circular imports, actual import is below!
#from utils import FailsafeConfigParser

state = dict(
    absolute_path = os.path.dirname(os.path.abspath(__file__)),
    conf_dir = os.path.join(config_home, 'agribus'),
    data_dir = os.path.join(data_home, 'agribus'),
    creds_dir = os.path.join(data_home, 'agribus', 'credentials'),
    log_dir = os.path.join(data_home, 'agribus', 'logs'),
)
# fixtures shipped inside the package (DDOP pool, inspector schema)
state['bundled_dir'] = os.path.join(state['absolute_path'], 'data')

# late import, utils needs state from above
from .utils import FailsafeConfigParser
config = FailsafeConfigParser()
config_file = os.path.join(state['conf_dir'], 'agribus.conf')
if os.path.isfile(config_file):
    with open(config_file, 'r') as conf:
        config.read_file(conf)
