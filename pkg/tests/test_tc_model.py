# -*- coding: utf-8 -*-
import csv
import os
import random

import pytest

from AgriBus.agribus_error import ConfigError, TcError
from AgriBus.tc_model import (ControlHandlingCapability, ControlHandlingValue,
                              Ddop, DeviceElement, ElementHierarchyRow,
                              HandlingFeature, HandlingGroup, Unit, UnitAtom,
                              camel_name, check_ddop, ddop_from_dict,
                              ddop_to_dict, ddop_to_samples, dump_ddop,
                              enum_member, float32, load_ddop,
                              load_fixture_ddop, make_ddop, samples_to_ddop,
                              unit_text, validate_ddop)

from conftest import FIXTURES

NAME = 0xFF0001
METRE = Unit(UnitAtom.METRE)


def read_unit_table():
    with open(os.path.join(FIXTURES, 'unit_text.csv')) as table:
        return [(enum_member(UnitAtom, row['numerator']),
                 enum_member(UnitAtom, row['denominator']), row['text'])
                for row in csv.DictReader(table)]


@pytest.mark.parametrize('numerator,denominator,text', read_unit_table())
def test_unit_text(numerator, denominator, text):
    unit = Unit(numerator, denominator)
    assert unit_text(unit) == text
    assert str(unit) == text
    assert unit.is_valid == (numerator != UnitAtom.NONE or
                             denominator == UnitAtom.NONE)


def test_unit_table_is_complete():
    assert len(read_unit_table()) == len(UnitAtom) ** 2


@pytest.mark.parametrize('text', ['ApplicationRate', 'APPLICATION_RATE',
                                  'application_rate', 'Application Rate', 2])
def test_enum_member_spellings(text):
    assert enum_member(HandlingGroup, text) == HandlingGroup.APPLICATION_RATE


def test_enum_member_unknown():
    with pytest.raises(ValueError):
        enum_member(HandlingGroup, 'Colour')


def test_camel_names():
    assert camel_name(HandlingGroup.APPLICATION_RATE) == 'ApplicationRate'
    assert camel_name(UnitAtom.SQUARE_METRE) == 'SquareMetre'
    assert camel_name(HandlingFeature.SETPOINT) == 'Setpoint'


def test_values_are_float32():
    value = ControlHandlingValue(DeviceElement(NAME, 1),
                                 HandlingGroup.APPLICATION_RATE,
                                 HandlingFeature.SETPOINT, Unit(), 0.1)
    assert value.value == float32(0.1)
    assert value.value != 0.1


# -- validation ------------------------------------------------------------------

def rules(ddop):
    return [issue.rule for issue in validate_ddop(ddop)]


def row(element, display, parent, name=NAME, parent_name=NAME):
    return ElementHierarchyRow(DeviceElement(name, element), display,
                               DeviceElement(parent_name, parent))


def test_small_pool_is_valid():
    ddop = make_ddop(NAME, [(1, 'Main Boom', 0), (2, 'Section 1', 1)],
                     [(1, HandlingGroup.WORKING_HEIGHT, METRE)])
    assert rules(ddop) == []
    assert check_ddop(ddop) is ddop
    assert len(ddop) == 3
    assert ddop.children() == {0: [1], 1: [2]}


@pytest.mark.parametrize('ddop,rule', [
    (make_ddop(0, [(1, 'a', 0)]), 'ZERO_NAME'),
    (Ddop(NAME, (row(0, 'root', 0), row(1, 'a', 0, name=0xBEEF))),
     'FOREIGN_NAME'),
    (Ddop(NAME, (row(0, 'root', 0), row(1, 'a', 0, parent_name=0xBEEF))),
     'FOREIGN_NAME'),
    (make_ddop(NAME, [(1, 'x' * 101, 0)]), 'NAME_TOO_LONG'),
    (make_ddop(NAME, [(1, 'a', 0), (1, 'b', 0)]), 'DUPLICATE_ELEMENT'),
    (make_ddop(NAME, [(0, 'root', 5), (5, 'a', 0)]), 'BAD_ROOT'),
    (Ddop(NAME, (row(1, 'a', 0),)), 'NO_ROOT'),
    (make_ddop(NAME, [(1, 'a', 7)]), 'DANGLING_PARENT'),
    (make_ddop(NAME, [(1, 'a', 2), (2, 'b', 1)]), 'CYCLE'),
    (make_ddop(NAME, [(1, 'a', 0)],
               [(9, HandlingGroup.APPLICATION_RATE, Unit())]),
     'UNKNOWN_ELEMENT'),
    (make_ddop(NAME, [(1, 'a', 0)],
               [(1, HandlingGroup.APPLICATION_RATE,
                 Unit(UnitAtom.NONE, UnitAtom.SECOND))]),
     'BAD_UNIT'),
])
def test_rule_violations(ddop, rule):
    assert rules(ddop) == [rule]
    with pytest.raises(TcError) as error:
        check_ddop(ddop)
    assert error.value.code == 'INVALID_DDOP'
    assert rule in error.value.message


def test_display_name_at_the_limit():
    assert rules(make_ddop(NAME, [(1, 'x' * 100, 0)])) == []


def random_pool(rng, name=NAME):
    """valid (rows, capabilities) of a random tree of 2 to 200 elements"""
    numbers = [0] + rng.sample(range(1, 65535), rng.randrange(1, 200))
    rows = [row(0, 'Device', 0, name, name)]
    for position, number in enumerate(numbers[1:], 1):
        display = 'e' * rng.randrange(101)
        rows.append(row(number, display, rng.choice(numbers[:position]),
                        name, name))
    numerators = [atom for atom in UnitAtom if atom != UnitAtom.NONE]
    capabilities = [ControlHandlingCapability(
        DeviceElement(name, rng.choice(numbers[1:])),
        rng.choice(list(HandlingGroup)),
        Unit(rng.choice(numerators), rng.choice(list(UnitAtom))))
        for _capability in range(rng.randrange(1, 50))]
    return rows, capabilities


def _child(rng, rows):
    return rng.randrange(1, len(rows))


def _reparent(rows, index, parent):
    old = rows[index]
    rows[index] = row(old.element_reference.element_num, old.display_name,
                      parent)


def _unused(rows):
    return max(r.element_reference.element_num for r in rows) + 1000


def inject(rng, rule, rows, capabilities):
    """one defect breaking rule, on top of a valid pool"""
    if rule == 'FOREIGN_NAME':
        index = _child(rng, rows)
        old = rows[index]
        rows[index] = row(old.element_reference.element_num, old.display_name,
                          old.parent_reference.element_num, name=0xBEEF)
    elif rule == 'NAME_TOO_LONG':
        index = rng.randrange(len(rows))
        rows[index] = row(rows[index].element_reference.element_num,
                          'x' * 101,
                          rows[index].parent_reference.element_num)
    elif rule == 'DUPLICATE_ELEMENT':
        rows.append(rows[_child(rng, rows)])
    elif rule == 'BAD_ROOT':
        _reparent(rows, 0, rows[_child(rng, rows)]
                  .element_reference.element_num)
    elif rule == 'NO_ROOT':
        del rows[0]
    elif rule == 'DANGLING_PARENT':
        _reparent(rows, _child(rng, rows), _unused(rows))
    elif rule == 'CYCLE':
        index = _child(rng, rows)
        _reparent(rows, index, rows[index].element_reference.element_num)
    elif rule == 'UNKNOWN_ELEMENT':
        capabilities.append(ControlHandlingCapability(
            DeviceElement(NAME, _unused(rows)),
            HandlingGroup.APPLICATION_RATE, METRE))
    elif rule == 'BAD_UNIT':
        index = rng.randrange(len(capabilities))
        capabilities[index] = ControlHandlingCapability(
            capabilities[index].element_reference,
            capabilities[index].handling_group,
            Unit(UnitAtom.NONE, UnitAtom.METRE))


INJECTED_RULES = ['FOREIGN_NAME', 'NAME_TOO_LONG', 'DUPLICATE_ELEMENT',
                  'BAD_ROOT', 'NO_ROOT', 'DANGLING_PARENT', 'CYCLE',
                  'UNKNOWN_ELEMENT', 'BAD_UNIT']


def test_random_pools_are_valid():
    rng = random.Random(7)
    for _pool in range(100):
        rows, capabilities = random_pool(rng)
        assert rules(Ddop(NAME, rows, capabilities)) == []


@pytest.mark.parametrize('rule', INJECTED_RULES)
def test_one_injected_defect(rule):
    rng = random.Random(rule)
    for _pool in range(40):
        rows, capabilities = random_pool(rng)
        inject(rng, rule, rows, capabilities)
        assert rules(Ddop(NAME, rows, capabilities)) == [rule]
        rng.shuffle(rows)
        rng.shuffle(capabilities)
        assert rules(Ddop(NAME, rows, capabilities)) == [rule]


def test_zero_name_on_random_pools():
    rng = random.Random(0)
    for _pool in range(40):
        rows, capabilities = random_pool(rng, name=0)
        assert rules(Ddop(0, rows, capabilities)) == ['ZERO_NAME']
        rng.shuffle(rows)
        assert rules(Ddop(0, rows, capabilities)) == ['ZERO_NAME']


def test_issue_positions_follow_canonical_order():
    ddop = make_ddop(NAME, [(3, 'c', 0), (2, 'b', 9), (1, 'a', 0)])
    (issue,) = validate_ddop(ddop)
    assert issue.rule == 'DANGLING_PARENT'
    # root 0, then 1, then 2
    assert issue.index == 2


def test_canonical_order():
    elements = [(n, 'Section %d' % n, 0) for n in range(1, 30)]
    shuffled = list(elements)
    random.Random(3).shuffle(shuffled)
    assert make_ddop(NAME, shuffled) == make_ddop(NAME, elements)


# -- the bundled pool ------------------------------------------------------------

def test_fixture_pool():
    ddop = load_fixture_ddop()
    assert ddop.name == NAME
    assert len(ddop) == 103
    assert rules(ddop) == []
    children = ddop.children()
    assert children[0] == [101, 102]
    assert children[101] == list(range(1, 51))
    assert children[102] == list(range(51, 101))
    assert len(ddop.capabilities) == 102
    (boom,) = ddop.capabilities_of(101)
    assert boom.handling_group == HandlingGroup.WORKING_HEIGHT
    assert boom.unit == METRE
    (section,) = ddop.capabilities_of(1)
    assert section.unit == Unit(UnitAtom.KILOGRAM, UnitAtom.SQUARE_METRE)
    root = ddop.rows[0]
    assert root.display_name == 'Sprayer'
    assert root.parent_reference == root.element_reference


def test_fixture_under_another_name():
    ddop = load_fixture_ddop(0xFF0002)
    assert rules(ddop) == []
    assert set(r.element_reference.name for r in ddop.rows) == {0xFF0002}
    assert ddop.tree_signature() == load_fixture_ddop().tree_signature()


def test_document_round_trip(tmp_path):
    ddop = load_fixture_ddop()
    assert ddop_from_dict(ddop_to_dict(ddop)) == ddop
    path = str(tmp_path / 'pool.json')
    dump_ddop(ddop, path)
    assert load_ddop(path) == ddop


@pytest.mark.parametrize('document', [
    {'elements': []},
    {'name': 'FF0001', 'elements': [{'display_name': 'no number'}]},
    {'name': 'FF0001', 'elements': [],
     'capabilities': [{'element_num': 1, 'handling_group': 'Colour'}]},
    {'name': 'zz'},
])
def test_malformed_documents(document):
    with pytest.raises(ConfigError) as error:
        ddop_from_dict(document)
    assert error.value.code == 'BAD_DDOP_FILE'


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError) as error:
        load_ddop(str(tmp_path / 'missing.json'))
    assert error.value.code == 'BAD_DDOP_FILE'
    broken = tmp_path / 'broken.json'
    broken.write_text('{"name": ')
    with pytest.raises(ConfigError):
        load_ddop(str(broken))


# -- samples ---------------------------------------------------------------------

def test_samples_rebuild_the_pool():
    ddop = load_fixture_ddop()
    hierarchy, linking = ddop_to_samples(ddop)
    hierarchy, linking = list(hierarchy), list(linking)
    random.Random(8).shuffle(hierarchy)
    random.Random(9).shuffle(linking)
    assert samples_to_ddop(hierarchy, linking) == ddop


@pytest.mark.parametrize('drop', ['root', 'boom', 'capability element'])
def test_incomplete_samples(drop):
    ddop = load_fixture_ddop()
    hierarchy, linking = list(ddop.rows), list(ddop.capabilities)
    if drop == 'root':
        hierarchy = hierarchy[1:]
    elif drop == 'boom':
        hierarchy = [r for r in hierarchy
                     if r.element_reference.element_num != 101]
        linking = [c for c in linking
                   if c.element_reference.element_num != 101]
    else:
        hierarchy = [r for r in hierarchy
                     if r.element_reference.element_num != 5]
    with pytest.raises(TcError) as error:
        samples_to_ddop(hierarchy, linking)
    assert error.value.code == 'INCOMPLETE'


def test_no_samples_yet():
    with pytest.raises(TcError) as error:
        samples_to_ddop([], [])
    assert error.value.code == 'INCOMPLETE'


def test_capability_defaults_to_unitless():
    capability = ControlHandlingCapability(DeviceElement(NAME, 1),
                                           HandlingGroup.FILL_LEVEL)
    assert capability.unit == Unit(UnitAtom.NONE, UnitAtom.NONE)
