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
task controller information model

Device descriptor object pools (DDOPs) as element hierarchy rows plus
control handling capabilities, the decomposed data dictionary enums and the
SI unit pairs. Enum ordinals are frozen: new values are appended, never
renumbered.
"""

import enum
import json
import logging
import struct
from dataclasses import dataclass

from .agribus_error import ConfigError, TcError
from .utils import hex_to_name, lookup_bundled
from .wire import (EnumOf, Field, Float32, Text, TypeDescriptor, UInt64)

log = logging.getLogger(__name__)

MAX_DISPLAY_NAME = 100
ROOT_ELEMENT = 0
FIXTURE_DDOP = 'fixture103.json'


class HandlingGroup(enum.IntEnum):
    NONE = 0
    WORKING_HEIGHT = 1
    APPLICATION_RATE = 2
    TILLAGE_DEPTH = 3
    WORKING_WIDTH = 4
    WORK_STATE = 5
    GEOMETRY = 6
    FLOW_RATE = 7
    SPEED = 8
    FILL_LEVEL = 9


class HandlingFeature(enum.IntEnum):
    NONE = 0
    SETPOINT = 1
    ACTUAL = 2
    MINIMUM = 3
    MAXIMUM = 4
    DEFAULT = 5


class UnitAtom(enum.IntEnum):
    NONE = 0
    METRE = 1
    SQUARE_METRE = 2
    CUBIC_METRE = 3
    KILOGRAM = 4
    SECOND = 5
    COUNT = 6
    KELVIN = 7
    AMPERE = 8

UNIT_SYMBOLS = {
    UnitAtom.NONE: '1',
    UnitAtom.METRE: 'm',
    UnitAtom.SQUARE_METRE: 'm2',
    UnitAtom.CUBIC_METRE: 'm3',
    UnitAtom.KILOGRAM: 'kg',
    UnitAtom.SECOND: 's',
    UnitAtom.COUNT: 'count',
    UnitAtom.KELVIN: 'K',
    UnitAtom.AMPERE: 'A',
}


def enum_member(enum_class, text):
    """ApplicationRate, APPLICATION_RATE, application_rate or an ordinal"""
    if isinstance(text, int) and not isinstance(text, bool):
        return enum_class(text)
    wanted = str(text).replace('_', '').replace(' ', '').lower()
    for member in enum_class:
        if member.name.replace('_', '').lower() == wanted:
            return member
    raise ValueError('%r is not a %s' % (text, enum_class.__name__))


def camel_name(member):
    """APPLICATION_RATE -> ApplicationRate, as written in DDOP files"""
    return ''.join(part.capitalize() for part in member.name.split('_'))


@dataclass(frozen=True)
class Unit(object):
    numerator: UnitAtom = UnitAtom.NONE
    denominator: UnitAtom = UnitAtom.NONE

    @property
    def is_valid(self):
        """a bare denominator has to be written over Count"""
        return not (self.numerator == UnitAtom.NONE and
                    self.denominator != UnitAtom.NONE)

    def __str__(self):
        return unit_text(self)

UNITLESS = Unit()


def unit_text(unit):
    """canonical text of a unit: kg/m2, m, 1"""
    numerator = UNIT_SYMBOLS[UnitAtom(unit.numerator)]
    if unit.denominator == UnitAtom.NONE:
        return numerator
    return '%s/%s' % (numerator, UNIT_SYMBOLS[UnitAtom(unit.denominator)])


@dataclass(frozen=True, order=True)
class DeviceElement(object):
    name: int
    element_num: int

    @property
    def is_root(self):
        return self.element_num == ROOT_ELEMENT

    def __str__(self):
        return '%X/%d' % (self.name, self.element_num)


@dataclass(frozen=True)
class ElementHierarchyRow(object):
    element_reference: DeviceElement
    display_name: str
    parent_reference: DeviceElement


@dataclass(frozen=True)
class ControlHandlingCapability(object):
    element_reference: DeviceElement
    handling_group: HandlingGroup
    unit: Unit = UNITLESS


def float32(value):
    """value as it comes back from the wire"""
    return struct.unpack('<f', struct.pack('<f', value))[0]


@dataclass(frozen=True)
class ControlHandlingValue(object):
    element_reference: DeviceElement
    handling_group: HandlingGroup
    handling_feature: HandlingFeature
    unit: Unit
    value: float

    def __post_init__(self):
        object.__setattr__(self, 'value', float32(self.value))


DEVICE_ELEMENT_TYPE = TypeDescriptor('DeviceElement', [
    Field('name', UInt64),
    Field('element_num', UInt64),
], DeviceElement)

UNIT_TYPE = TypeDescriptor('Unit', [
    Field('numerator', EnumOf(UnitAtom)),
    Field('denominator', EnumOf(UnitAtom)),
], Unit)

ELEMENT_HIERARCHY_TYPE = TypeDescriptor('ElementHierarchy', [
    Field('element_reference', DEVICE_ELEMENT_TYPE, key=True),
    Field('display_name', Text(MAX_DISPLAY_NAME)),
    Field('parent_reference', DEVICE_ELEMENT_TYPE),
], ElementHierarchyRow)

CONTROL_HANDLING_CAPABILITY_TYPE = TypeDescriptor(
    'ControlHandlingCapabilities', [
        Field('element_reference', DEVICE_ELEMENT_TYPE, key=True),
        Field('handling_group', EnumOf(HandlingGroup)),
        Field('unit', UNIT_TYPE),
    ], ControlHandlingCapability)

CONTROL_HANDLING_VALUE_TYPE = TypeDescriptor('ControlHandlingValues', [
    Field('element_reference', DEVICE_ELEMENT_TYPE, key=True),
    Field('handling_group', EnumOf(HandlingGroup)),
    Field('handling_feature', EnumOf(HandlingFeature)),
    Field('unit', UNIT_TYPE),
    Field('value', Float32),
], ControlHandlingValue)


# -- pools -------------------------------------------------------------------

def _row_order(row):
    return row.element_reference

def _capability_order(capability):
    return (capability.element_reference, capability.handling_group,
            capability.unit.numerator, capability.unit.denominator)


@dataclass(frozen=True)
class Ddop(object):
    """one implement's pool; rows and capabilities kept in canonical order"""
    name: int
    rows: tuple = ()
    capabilities: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'rows', tuple(sorted(self.rows,
                                                      key=_row_order)))
        object.__setattr__(self, 'capabilities', tuple(sorted(
            self.capabilities, key=_capability_order)))

    def __len__(self):
        return len(self.rows)

    def element_numbers(self):
        return set(row.element_reference.element_num for row in self.rows)

    def children(self):
        """{parent element_num: [child element_num, ...]} without the root
        self reference"""
        children = {}
        for row in self.rows:
            element = row.element_reference.element_num
            if element == ROOT_ELEMENT:
                continue
            children.setdefault(row.parent_reference.element_num,
                                []).append(element)
        for members in children.values():
            members.sort()
        return children

    def tree_signature(self):
        """nested text describing the tree shape and display names, equal
        for isomorphic pools"""
        names = dict((row.element_reference.element_num, row.display_name)
                     for row in self.rows)
        children = self.children()

        def signature(element, seen):
            if element in seen:
                return '<cycle>'
            seen = seen | {element}
            below = sorted(signature(child, seen)
                           for child in children.get(element, ()))
            return '%s(%s)' % (names.get(element, ''), ','.join(below))

        return signature(ROOT_ELEMENT, frozenset())

    def capabilities_of(self, element_num):
        return [c for c in self.capabilities
                if c.element_reference.element_num == element_num]


def make_ddop(name, elements, capabilities=(), root_display='Device'):
    """Ddop from (element_num, display_name, parent_num) triples and
    (element_num, handling_group, unit) triples; the root row is added when
    elements leave it out"""
    rows = [ElementHierarchyRow(DeviceElement(name, element),
                                display, DeviceElement(name, parent))
            for element, display, parent in elements]
    if not any(row.element_reference.element_num == ROOT_ELEMENT
               for row in rows):
        root = DeviceElement(name, ROOT_ELEMENT)
        rows.append(ElementHierarchyRow(root, root_display, root))
    return Ddop(name, tuple(rows), tuple(
        ControlHandlingCapability(DeviceElement(name, element), group, unit)
        for element, group, unit in capabilities))


# -- validation --------------------------------------------------------------

@dataclass(frozen=True)
class DdopIssue(object):
    rule: str
    index: int
    message: str

    def __str__(self):
        return '%s at %d: %s' % (self.rule, self.index, self.message)


def validate_ddop(ddop):
    """every violation of the pool rules, as DdopIssue; empty when valid

    rows are indexed in canonical order, capabilities after the rows"""
    issues = []

    def report(rule, index, message):
        issues.append(DdopIssue(rule, index, message))

    if not ddop.name:
        report('ZERO_NAME', 0, _('the device NAME must not be zero'))
    parents = {}
    roots = 0
    for index, row in enumerate(ddop.rows):
        element = row.element_reference
        if element.name != ddop.name or row.parent_reference.name != ddop.name:
            report('FOREIGN_NAME', index,
                   _('row %s belongs to another device') % element)
        if len(row.display_name) > MAX_DISPLAY_NAME:
            report('NAME_TOO_LONG', index,
                   _('display name of %d characters') % len(row.display_name))
        if element.element_num in parents:
            report('DUPLICATE_ELEMENT', index,
                   _('element %d appears twice') % element.element_num)
            continue
        parents[element.element_num] = row.parent_reference.element_num
        if element.is_root:
            roots += 1
            if row.parent_reference.element_num != ROOT_ELEMENT:
                report('BAD_ROOT', index,
                       _('the root must be its own parent'))
    if not roots:
        report('NO_ROOT', 0, _('element 0 is missing'))

    positions = dict((row.element_reference.element_num, index)
                     for index, row in reversed(list(enumerate(ddop.rows))))
    for element, parent in sorted(parents.items()):
        if element != ROOT_ELEMENT and parent != ROOT_ELEMENT and \
           parent not in parents:
            report('DANGLING_PARENT', positions[element],
                   _('parent %(parent)d of element %(element)d is missing') %
                   {'parent': parent, 'element': element})

    # every element has to reach the root
    settled = set([ROOT_ELEMENT])
    for element in sorted(parents):
        path = []
        current = element
        while current not in settled and current in parents and \
              current not in path:
            path.append(current)
            current = parents[current]
        if current in path:
            cycle = path[path.index(current):]
            if not settled.intersection(cycle):
                report('CYCLE', positions[min(cycle)],
                       _('elements %s form a cycle') %
                       ', '.join(str(e) for e in sorted(cycle)))
        settled.update(path)

    offset = len(ddop.rows)
    for index, capability in enumerate(ddop.capabilities):
        reference = capability.element_reference
        if reference.name != ddop.name or \
           reference.element_num not in parents:
            report('UNKNOWN_ELEMENT', offset + index,
                   _('capability for missing element %s') % reference)
        if not capability.unit.is_valid:
            report('BAD_UNIT', offset + index,
                   _('unit %s has no numerator') % unit_text(capability.unit))
    return issues


def check_ddop(ddop):
    """raise TcError INVALID_DDOP unless ddop validates"""
    issues = validate_ddop(ddop)
    if issues:
        raise TcError('INVALID_DDOP', '; '.join(str(i) for i in issues[:5]))
    return ddop


# -- topic samples -----------------------------------------------------------

def ddop_to_samples(ddop):
    """(hierarchy rows, linking rows) to publish, in canonical order"""
    return tuple(ddop.rows), tuple(ddop.capabilities)


def samples_to_ddop(hierarchy_rows, linking_rows, name=None):
    """rebuild a pool from received rows

    raise TcError INCOMPLETE while a referenced row is still missing"""
    hierarchy_rows = list(hierarchy_rows)
    linking_rows = list(linking_rows)
    if name is None:
        if not hierarchy_rows:
            raise TcError('INCOMPLETE', _('no hierarchy rows yet'))
        name = hierarchy_rows[0].element_reference.name
    elements = set(row.element_reference.element_num for row in hierarchy_rows)
    if ROOT_ELEMENT not in elements:
        raise TcError('INCOMPLETE', _('root element not received yet'))
    for row in hierarchy_rows:
        if row.parent_reference.element_num not in elements:
            raise TcError('INCOMPLETE',
                          _('parent %d not received yet') %
                          row.parent_reference.element_num)
    for capability in linking_rows:
        if capability.element_reference.element_num not in elements:
            raise TcError('INCOMPLETE',
                          _('element %d not received yet') %
                          capability.element_reference.element_num)
    return Ddop(name, tuple(hierarchy_rows), tuple(linking_rows))


# -- authoring files ---------------------------------------------------------

def _unit_from(document):
    if document is None:
        return UNITLESS
    return Unit(enum_member(UnitAtom, document.get('numerator', 'None')),
                enum_member(UnitAtom, document.get('denominator', 'None')))


def ddop_from_dict(document, name=None):
    try:
        if name is None:
            name = document['name']
            if isinstance(name, str):
                name = hex_to_name(name)
        elements = [(int(e['element_num']), str(e.get('display_name', '')),
                     int(e.get('parent_num', ROOT_ELEMENT)))
                    for e in document.get('elements', ())]
        capabilities = [(int(c['element_num']),
                         enum_member(HandlingGroup, c['handling_group']),
                         _unit_from(c.get('unit')))
                        for c in document.get('capabilities', ())]
    except (KeyError, TypeError, ValueError, AttributeError) as error:
        raise ConfigError('BAD_DDOP_FILE', _('malformed DDOP document: %s') %
                          error)
    return make_ddop(name, elements, capabilities,
                     document.get('display_name', 'Device'))


def ddop_to_dict(ddop):
    return {
        'name': '%X' % ddop.name,
        'elements': [{
            'element_num': row.element_reference.element_num,
            'display_name': row.display_name,
            'parent_num': row.parent_reference.element_num,
        } for row in ddop.rows],
        'capabilities': [{
            'element_num': c.element_reference.element_num,
            'handling_group': camel_name(c.handling_group),
            'unit': {'numerator': camel_name(c.unit.numerator),
                     'denominator': camel_name(c.unit.denominator)},
        } for c in ddop.capabilities],
    }


def load_ddop(path, name=None):
    """read a DDOP authoring file; name overrides the NAME written in it"""
    try:
        with open(path, 'r') as ddop_file:
            document = json.load(ddop_file)
    except (IOError, OSError, ValueError) as error:
        raise ConfigError('BAD_DDOP_FILE', _('cannot read %(path)s: %(error)s')
                          % {'path': path, 'error': error})
    ddop = ddop_from_dict(document, name)
    log.debug('loaded DDOP of %d elements from %s', len(ddop), path)
    return ddop


def dump_ddop(ddop, path):
    with open(path, 'w') as ddop_file:
        json.dump(ddop_to_dict(ddop), ddop_file, indent=2)


def load_fixture_ddop(name=None):
    """the bundled 103 element sprayer"""
    path = lookup_bundled(FIXTURE_DDOP)
    if path is None:
        raise ConfigError('BAD_DDOP_FILE', _('%s is not installed') %
                          FIXTURE_DDOP)
    return load_ddop(path, name)
