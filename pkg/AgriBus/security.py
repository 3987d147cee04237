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
document based security

A local certificate authority signs identity certificates, governance and
permissions documents (canonical JSON, Ed25519). Participants authenticate
each other with a three message handshake, agree on a shared secret over
X25519 and derive one key per protection scope. Envelopes are NONE (a tag
byte), SIGN (HMAC-SHA256) or ENCRYPT (AES-256-GCM).
"""

import base64
import enum
import fnmatch
import hashlib
import hmac
import json
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass, replace

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey, X25519PublicKey)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .agribus_error import SecurityError
from .utils import name_to_hex
from .wire import (Bytes, EnumOf, Field, FixedBytes, GUID_PREFIX_SIZE,
                   TypeDescriptor, prefix_name)

log = logging.getLogger(__name__)

CA_ISSUER = 'agribus-ca'
DEFAULT_VALIDITY = 365 * 24 * 3600
REPLAY_WINDOW = 1024
MAC_SIZE = 32
NONCE_SIZE = 12
COUNTER = struct.Struct('<Q')

# scopes a session derives keys for, data scopes are 'data:<topic>'
SCOPE_DISCOVERY = 'discovery'
SCOPE_LIVELINESS = 'liveliness'
SCOPE_RTPS = 'rtps'
SCOPE_METADATA = 'metadata'


def data_scope(topic_name):
    return 'data:' + topic_name


class ProtectionKind(enum.IntEnum):
    NONE = 0
    SIGN = 1
    ENCRYPT = 2

_ORIGIN_AUTHENTICATION_KINDS = ('SIGN_WITH_ORIGIN_AUTHENTICATION',
                                'ENCRYPT_WITH_ORIGIN_AUTHENTICATION')


def parse_protection_kind(text):
    """'ENCRYPT' -> ProtectionKind.ENCRYPT"""
    if isinstance(text, ProtectionKind):
        return text
    text = str(text).upper()
    if text in _ORIGIN_AUTHENTICATION_KINDS:
        raise SecurityError('UNSUPPORTED',
                            _('protection kind %s is not supported') % text)
    try:
        return ProtectionKind[text]
    except KeyError:
        raise SecurityError('SECURITY_CONFIG_INVALID',
                            _('unknown protection kind %r') % text)


def canonical_json(body):
    """the bytes a signature covers"""
    return json.dumps(body, sort_keys=True, separators=(',', ':')).encode('utf-8')


def b64(data):
    return base64.b64encode(data).decode('ascii')


def unb64(text):
    try:
        return base64.b64decode(text.encode('ascii'), validate=True)
    except (ValueError, AttributeError):
        raise SecurityError('SECURITY_CONFIG_INVALID', _('bad base64 field'))


def _digest(data):
    return hashlib.blake2b(data, digest_size=16).digest()


# -- signed documents --------------------------------------------------------

class SignedDocument(object):
    """mixin for the three CA-signed document kinds

    subclasses are frozen dataclasses with issuer and signature fields and
    a body() returning everything but the signature"""
    failure_code = 'SECURITY_CONFIG_INVALID'

    def body(self):
        raise NotImplementedError

    def to_dict(self):
        document = self.body()
        document['signature'] = b64(self.signature)
        return document

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_bytes(self):
        return canonical_json(self.to_dict())

    @property
    def digest(self):
        return _digest(canonical_json(self.body()))

    def verify(self, ca_public_key):
        """raise unless signed by the CA"""
        if not self.signature:
            raise SecurityError(self.failure_code, _('document is not signed'))
        try:
            Ed25519PublicKey.from_public_bytes(ca_public_key).verify(
                self.signature, canonical_json(self.body()))
        except (InvalidSignature, ValueError):
            raise SecurityError(self.failure_code,
                                _('signature does not verify under the CA key'))
        return self

    def check_validity(self, now=None):
        now = time.time() if now is None else now
        if not self.not_before <= now < self.not_after:
            raise SecurityError(self.failure_code,
                                _('document used outside its validity window'))
        return self


@dataclass(frozen=True)
class IdentityCertificate(SignedDocument):
    subject_name: int
    public_key: bytes
    not_before: int
    not_after: int
    issuer: str = CA_ISSUER
    signature: bytes = b''
    failure_code = 'CERT_INVALID'

    def body(self):
        return {
            'subject_name': self.subject_name,
            'public_key': b64(self.public_key),
            'not_before': self.not_before,
            'not_after': self.not_after,
            'issuer': self.issuer,
        }

    @classmethod
    def from_dict(cls, document):
        try:
            return cls(int(document['subject_name']),
                       unb64(document['public_key']),
                       int(document['not_before']), int(document['not_after']),
                       document['issuer'],
                       unb64(document.get('signature', '')))
        except (KeyError, TypeError, ValueError, SecurityError):
            raise SecurityError('CERT_INVALID', _('malformed certificate'))


@dataclass(frozen=True)
class TopicRule(object):
    topic_expression: str = '*'
    enable_discovery_protection: bool = False
    enable_liveliness_protection: bool = False
    enable_read_access_control: bool = False
    enable_write_access_control: bool = False
    metadata_protection_kind: ProtectionKind = ProtectionKind.NONE
    data_protection_kind: ProtectionKind = ProtectionKind.NONE

    @property
    def is_open(self):
        """nothing about this topic needs an authenticated peer"""
        return not (self.enable_discovery_protection or
                    self.enable_liveliness_protection or
                    self.enable_read_access_control or
                    self.enable_write_access_control or
                    self.metadata_protection_kind or
                    self.data_protection_kind)

    def to_dict(self):
        return {
            'topic_expression': self.topic_expression,
            'enable_discovery_protection': self.enable_discovery_protection,
            'enable_liveliness_protection': self.enable_liveliness_protection,
            'enable_read_access_control': self.enable_read_access_control,
            'enable_write_access_control': self.enable_write_access_control,
            'metadata_protection_kind': self.metadata_protection_kind.name,
            'data_protection_kind': self.data_protection_kind.name,
        }

    @classmethod
    def from_dict(cls, rule):
        return cls(
            str(rule.get('topic_expression', '*')),
            _flag(rule, 'enable_discovery_protection'),
            _flag(rule, 'enable_liveliness_protection'),
            _flag(rule, 'enable_read_access_control'),
            _flag(rule, 'enable_write_access_control'),
            parse_protection_kind(rule.get('metadata_protection_kind', 'NONE')),
            parse_protection_kind(rule.get('data_protection_kind', 'NONE')),
        )

OPEN_TOPIC_RULE = TopicRule()


def _flag(document, key):
    value = document.get(key, False)
    if not isinstance(value, bool):
        raise SecurityError('SECURITY_CONFIG_INVALID',
                            _('%s must be true or false') % key)
    return value


@dataclass(frozen=True)
class GovernanceDocument(SignedDocument):
    domain_id: int = 0
    allow_unauthenticated_participants: bool = False
    enable_join_access_control: bool = True
    discovery_protection_kind: ProtectionKind = ProtectionKind.ENCRYPT
    liveliness_protection_kind: ProtectionKind = ProtectionKind.ENCRYPT
    rtps_protection_kind: ProtectionKind = ProtectionKind.SIGN
    topic_rules: tuple = ()
    issuer: str = CA_ISSUER
    signature: bytes = b''

    def body(self):
        return {
            'domain_id': self.domain_id,
            'allow_unauthenticated_participants':
                self.allow_unauthenticated_participants,
            'enable_join_access_control': self.enable_join_access_control,
            'discovery_protection_kind': self.discovery_protection_kind.name,
            'liveliness_protection_kind': self.liveliness_protection_kind.name,
            'rtps_protection_kind': self.rtps_protection_kind.name,
            'topic_rules': [rule.to_dict() for rule in self.topic_rules],
            'issuer': self.issuer,
        }

    @classmethod
    def from_dict(cls, document):
        try:
            return cls(
                int(document.get('domain_id', 0)),
                _flag(document, 'allow_unauthenticated_participants'),
                _flag(document, 'enable_join_access_control'),
                parse_protection_kind(document['discovery_protection_kind']),
                parse_protection_kind(document['liveliness_protection_kind']),
                parse_protection_kind(document['rtps_protection_kind']),
                tuple(TopicRule.from_dict(rule)
                      for rule in document.get('topic_rules', ())),
                document.get('issuer', CA_ISSUER),
                unb64(document.get('signature', '')),
            )
        except (KeyError, TypeError, ValueError, AttributeError):
            raise SecurityError('SECURITY_CONFIG_INVALID',
                                _('malformed governance document'))

    def rule_for(self, topic_name):
        """first rule whose expression matches, open otherwise"""
        for rule in self.topic_rules:
            if fnmatch.fnmatchcase(topic_name, rule.topic_expression):
                return rule
        return OPEN_TOPIC_RULE


class Decision(enum.Enum):
    ALLOW = 'allow'
    DENY = 'deny'


class Action(enum.Enum):
    PUBLISH = 'publish'
    SUBSCRIBE = 'subscribe'


@dataclass(frozen=True)
class Grant(object):
    decision: Decision
    action: Action
    topics: tuple = ('*',)
    partitions: tuple = ('',)

    def matches(self, action, topic, partition):
        return action == self.action and \
            any(fnmatch.fnmatchcase(topic, p) for p in self.topics) and \
            any(fnmatch.fnmatchcase(partition, p) for p in self.partitions)

    def to_dict(self):
        return {'decision': self.decision.value, 'action': self.action.value,
                'topics': list(self.topics),
                'partitions': list(self.partitions)}

    @classmethod
    def from_dict(cls, grant):
        try:
            return cls(Decision(grant['decision'].lower()),
                       Action(grant['action'].lower()),
                       tuple(grant.get('topics', ('*',))),
                       tuple(grant.get('partitions', ('',))))
        except (KeyError, ValueError, AttributeError):
            raise SecurityError('SECURITY_CONFIG_INVALID',
                                _('malformed grant %r') % (grant,))


@dataclass(frozen=True)
class PermissionsDocument(SignedDocument):
    subject_name: int
    grants: tuple = ()
    not_before: int = 0
    not_after: int = 0
    issuer: str = CA_ISSUER
    signature: bytes = b''

    def body(self):
        return {
            'subject_name': self.subject_name,
            'grants': [grant.to_dict() for grant in self.grants],
            'not_before': self.not_before,
            'not_after': self.not_after,
            'issuer': self.issuer,
        }

    @classmethod
    def from_dict(cls, document):
        try:
            return cls(int(document['subject_name']),
                       tuple(Grant.from_dict(g) for g in document['grants']),
                       int(document['not_before']), int(document['not_after']),
                       document.get('issuer', CA_ISSUER),
                       unb64(document.get('signature', '')))
        except (KeyError, TypeError, ValueError):
            raise SecurityError('SECURITY_CONFIG_INVALID',
                                _('malformed permissions document'))


def check_permission(permissions_doc, action, topic, partition=''):
    """first matching grant decides, no match denies"""
    action = Action(action) if not isinstance(action, Action) else action
    for grant in permissions_doc.grants:
        if grant.matches(action, topic, partition):
            return grant.decision
    return Decision.DENY


# -- the certificate authority -----------------------------------------------

def _raw_private(key):
    return key.private_bytes(serialization.Encoding.Raw,
                             serialization.PrivateFormat.Raw,
                             serialization.NoEncryption())


def _raw_public(key):
    return key.public_bytes(serialization.Encoding.Raw,
                            serialization.PublicFormat.Raw)


def load_private_key(raw):
    try:
        return Ed25519PrivateKey.from_private_bytes(raw)
    except ValueError:
        raise SecurityError('BAD_KEY', _('not an Ed25519 private key'))


class CertificateAuthority(object):
    """identity CA and permissions CA in one"""

    def __init__(self, private_key, issuer=CA_ISSUER):
        self.private_key = private_key
        self.issuer = issuer
        self.public_key = _raw_public(private_key.public_key())

    def _sign(self, document):
        signature = self.private_key.sign(canonical_json(document.body()))
        return replace(document, signature=signature)

    def _window(self, not_before, not_after):
        now = int(time.time())
        not_before = now - 60 if not_before is None else int(not_before)
        not_after = now + DEFAULT_VALIDITY if not_after is None \
            else int(not_after)
        if not_after <= not_before or not_after <= now:
            raise SecurityError('EXPIRED_REQUEST',
                                _('validity window ends in the past'))
        return not_before, not_after

    def issue_identity(self, name, public_key, not_before=None, not_after=None):
        if not name:
            raise SecurityError('BAD_KEY', _('NAME must be nonzero'))
        try:
            Ed25519PublicKey.from_public_bytes(public_key)
        except ValueError:
            raise SecurityError('BAD_KEY', _('not an Ed25519 public key'))
        not_before, not_after = self._window(not_before, not_after)
        return self._sign(IdentityCertificate(name, bytes(public_key),
                                              not_before, not_after,
                                              self.issuer))

    def sign_governance(self, document):
        return self._sign(replace(document, issuer=self.issuer))

    def sign_permissions(self, document, not_before=None, not_after=None):
        not_before, not_after = self._window(not_before, not_after)
        return self._sign(replace(document, issuer=self.issuer,
                                  not_before=not_before, not_after=not_after))

    def save(self, directory):
        _write_json(os.path.join(directory, 'ca.json'),
                    {'issuer': self.issuer, 'public_key': b64(self.public_key)})
        _write_json(os.path.join(directory, 'ca_key.json'),
                    {'private_key': b64(_raw_private(self.private_key))},
                    private=True)

    @classmethod
    def load(cls, directory):
        document = _read_json(os.path.join(directory, 'ca_key.json'), 'BAD_KEY')
        issuer = _read_json(os.path.join(directory, 'ca.json'),
                            'BAD_KEY').get('issuer', CA_ISSUER)
        return cls(load_private_key(unb64(document.get('private_key', ''))),
                   issuer)


def ca_create():
    return CertificateAuthority(Ed25519PrivateKey.generate())


def ca_issue_identity(ca, name, public_key, **window):
    return ca.issue_identity(name, public_key, **window)


def ca_sign_governance(ca, document):
    return ca.sign_governance(document)


def ca_sign_permissions(ca, document, **window):
    return ca.sign_permissions(document, **window)


def generate_identity_key():
    """(private key, raw public key bytes)"""
    key = Ed25519PrivateKey.generate()
    return key, _raw_public(key.public_key())


# -- governance profiles and grant sets ----------------------------------------

def governance_profile(profile, domain_id=0):
    """'default' is the domain 0 reference setting, the others set every
    protection kind to one value"""
    profile = profile.lower()
    if profile == 'default':
        kinds = dict(discovery=ProtectionKind.ENCRYPT,
                     liveliness=ProtectionKind.ENCRYPT,
                     rtps=ProtectionKind.SIGN,
                     metadata=ProtectionKind.NONE,
                     data=ProtectionKind.ENCRYPT)
    elif profile in ('encrypt', 'sign', 'none'):
        kind = ProtectionKind[profile.upper()]
        kinds = dict(discovery=kind, liveliness=kind, rtps=kind,
                     metadata=kind, data=kind)
    else:
        raise SecurityError('SECURITY_CONFIG_INVALID',
                            _('unknown governance profile %r') % profile)
    rule = TopicRule('*', True, True, True, True, kinds['metadata'],
                     kinds['data'])
    return GovernanceDocument(domain_id, False, True, kinds['discovery'],
                              kinds['liveliness'], kinds['rtps'], (rule,))


def server_grants():
    """a task controller server may use every partition"""
    return tuple(Grant(Decision.ALLOW, action, ('*',), ('*',))
                 for action in Action)


def implement_grants(name):
    """an implement may use its own partition and the default one"""
    partition = name_to_hex(name)
    grants = []
    for action in Action:
        grants.append(Grant(Decision.ALLOW, action, ('*',), (partition,)))
        grants.append(Grant(Decision.ALLOW, action, ('t_service_discovery',),
                            ('',)))
    return tuple(grants)


# -- files -------------------------------------------------------------------

def _write_json(path, document, private=False):
    with open(path, 'w') as output:
        json.dump(document, output, indent=2, sort_keys=True)
    if private:
        os.chmod(path, 0o600)


def _read_json(path, code):
    try:
        with open(path, 'r') as source:
            return json.load(source)
    except (OSError, ValueError) as error:
        raise SecurityError(code, _('cannot read %(path)s: %(error)s') %
                            {'path': path, 'error': error})


def identity_paths(directory, name):
    hexname = name_to_hex(name)
    return (os.path.join(directory, 'identity_%s.json' % hexname),
            os.path.join(directory, 'identity_%s.key' % hexname))


def permissions_path(directory, name):
    return os.path.join(directory, 'permissions_%s.json' % name_to_hex(name))


def governance_path(directory, profile):
    return os.path.join(directory, 'governance_%s.json' % profile.lower())


def issue_identity_files(ca, directory, name):
    """new key pair plus certificate, written next to the CA"""
    key, public_key = generate_identity_key()
    certificate = ca.issue_identity(name, public_key)
    cert_path, key_path = identity_paths(directory, name)
    _write_json(cert_path, certificate.to_dict())
    _write_json(key_path, {'private_key': b64(_raw_private(key))},
                private=True)
    return certificate


def write_governance(ca, directory, profile, domain_id=0, document=None):
    document = ca.sign_governance(document or
                                  governance_profile(profile, domain_id))
    _write_json(governance_path(directory, profile), document.to_dict())
    return document


def write_permissions(ca, directory, name, grants):
    document = ca.sign_permissions(PermissionsDocument(name, tuple(grants)))
    _write_json(permissions_path(directory, name), document.to_dict())
    return document


def load_grants(path):
    """grant list from a JSON file: [{decision, action, topics, partitions}]"""
    document = _read_json(path, 'SECURITY_CONFIG_INVALID')
    if isinstance(document, dict):
        document = document.get('grants', [])
    return tuple(Grant.from_dict(grant) for grant in document)


def make_bench_set(directory, server_name, implement_names):
    """CA, identities, the four governance variants and permissions for a
    benchmark or demo run"""
    if not os.path.isdir(directory):
        os.makedirs(directory)
    ca = ca_create()
    ca.save(directory)
    issue_identity_files(ca, directory, server_name)
    write_permissions(ca, directory, server_name, server_grants())
    for name in implement_names:
        issue_identity_files(ca, directory, name)
        write_permissions(ca, directory, name, implement_grants(name))
    for profile in ('default', 'encrypt', 'sign', 'none'):
        write_governance(ca, directory, profile)
    return ca


@dataclass
class SecurityConfig(object):
    """everything a secure participant needs, verified"""
    ca_public_key: bytes
    certificate: IdentityCertificate
    private_key: Ed25519PrivateKey
    permissions: PermissionsDocument
    governance: GovernanceDocument
    replay_window: int = REPLAY_WINDOW

    def __post_init__(self):
        self.certificate.verify(self.ca_public_key).check_validity()
        self.governance.verify(self.ca_public_key)
        self.permissions.verify(self.ca_public_key).check_validity()
        if _raw_public(self.private_key.public_key()) != \
           self.certificate.public_key:
            raise SecurityError('CERT_INVALID',
                                _('private key does not match the certificate'))
        if self.permissions.subject_name != self.certificate.subject_name:
            raise SecurityError('SECURITY_CONFIG_INVALID',
                                _('permissions issued for another NAME'))

    @property
    def name(self):
        return self.certificate.subject_name

    @classmethod
    def load(cls, directory, name, profile='default'):
        ca = _read_json(os.path.join(directory, 'ca.json'), 'CERT_INVALID')
        cert_path, key_path = identity_paths(directory, name)
        certificate = IdentityCertificate.from_dict(
            _read_json(cert_path, 'CERT_INVALID'))
        key = load_private_key(unb64(
            _read_json(key_path, 'CERT_INVALID').get('private_key', '')))
        governance = GovernanceDocument.from_dict(
            _read_json(governance_path(directory, profile),
                       'SECURITY_CONFIG_INVALID'))
        permissions = PermissionsDocument.from_dict(
            _read_json(permissions_path(directory, name),
                       'SECURITY_CONFIG_INVALID'))
        return cls(unb64(ca.get('public_key', '')), certificate, key,
                   permissions, governance)

    def sign(self, data):
        return self.private_key.sign(data)


# -- session keys and envelopes ----------------------------------------------

class ReplayWindow(object):
    """sliding window over message counters"""

    def __init__(self, size=REPLAY_WINDOW):
        self.size = size
        self.highest = 0
        self.bitmap = 0

    def check(self, counter):
        if counter > self.highest:
            return
        offset = self.highest - counter
        if offset >= self.size or self.bitmap >> offset & 1:
            raise SecurityError('NONCE_REPLAYED',
                                _('message counter %d already seen') % counter)

    def update(self, counter):
        if counter > self.highest:
            shift = counter - self.highest
            self.bitmap = ((self.bitmap << shift) | 1) & ((1 << self.size) - 1)
            self.highest = counter
        else:
            self.bitmap |= 1 << (self.highest - counter)


class SessionKeys(object):
    """keys shared with one authenticated peer

    one key per scope, derived from the shared secret with the scope as
    HKDF info; counters and replay windows are kept per scope"""

    def __init__(self, shared_secret, replay_window=REPLAY_WINDOW):
        self.shared_secret = shared_secret
        self.replay_window = replay_window
        self._lock = threading.Lock()
        self._keys = {}
        self._counters = {}
        self._windows = {}

    def key(self, scope):
        with self._lock:
            key = self._keys.get(scope)
            if key is None:
                key = self._keys[scope] = HKDF(
                    algorithm=hashes.SHA256(), length=32, salt=None,
                    info=b'agribus ' + scope.encode('utf-8'),
                ).derive(self.shared_secret)
            return key

    def next_counter(self, scope):
        with self._lock:
            counter = self._counters.get(scope, 0) + 1
            self._counters[scope] = counter
            return counter

    def window(self, scope):
        with self._lock:
            window = self._windows.get(scope)
            if window is None:
                window = self._windows[scope] = \
                    ReplayWindow(self.replay_window)
            return window

    def key_check(self, scope):
        """short fingerprint of a scope key, safe to log"""
        return hmac.new(self.key(scope), b'agribus key check',
                        hashlib.sha256).hexdigest()[:16]


def protect(scope, protection_kind, session_keys, plaintext, aad=b''):
    """seal plaintext into envelope bytes"""
    tag = bytes((int(protection_kind),))
    if protection_kind == ProtectionKind.NONE:
        return tag + plaintext
    if session_keys is None:
        raise SecurityError('NO_SESSION', _('no session keys for %s') % scope)
    counter = COUNTER.pack(session_keys.next_counter(scope))
    key = session_keys.key(scope)
    if protection_kind == ProtectionKind.SIGN:
        mac = hmac.new(key, aad + tag + counter + plaintext,
                       hashlib.sha256).digest()
        return tag + counter + plaintext + mac
    nonce = os.urandom(NONCE_SIZE)
    return tag + counter + nonce + \
        AESGCM(key).encrypt(nonce, bytes(plaintext), aad + tag + counter)


def unprotect(scope, protection_kind, session_keys, envelope, aad=b''):
    """verify and open an envelope; nothing is released unverified"""
    if not envelope:
        raise SecurityError('MAC_INVALID', _('empty envelope'))
    if envelope[0] != int(protection_kind):
        raise SecurityError('KIND_MISMATCH',
                            _('envelope kind %(got)d, expected %(want)d') %
                            {'got': envelope[0], 'want': int(protection_kind)})
    if protection_kind == ProtectionKind.NONE:
        return bytes(envelope[1:])
    if session_keys is None:
        raise SecurityError('NO_SESSION', _('no session keys for %s') % scope)
    tag = envelope[:1]
    header = 1 + COUNTER.size
    if len(envelope) < header:
        raise SecurityError('MAC_INVALID', _('short envelope'))
    counter_bytes = envelope[1:header]
    counter = COUNTER.unpack(counter_bytes)[0]
    key = session_keys.key(scope)
    if protection_kind == ProtectionKind.SIGN:
        if len(envelope) < header + MAC_SIZE:
            raise SecurityError('MAC_INVALID', _('short envelope'))
        plaintext = envelope[header:-MAC_SIZE]
        expected = hmac.new(key, aad + tag + counter_bytes + plaintext,
                            hashlib.sha256).digest()
        if not hmac.compare_digest(expected, envelope[-MAC_SIZE:]):
            raise SecurityError('MAC_INVALID', _('message authentication failed'))
    else:
        if len(envelope) < header + NONCE_SIZE:
            raise SecurityError('MAC_INVALID', _('short envelope'))
        nonce = envelope[header:header + NONCE_SIZE]
        try:
            plaintext = AESGCM(key).decrypt(nonce, envelope[header + NONCE_SIZE:],
                                            aad + tag + counter_bytes)
        except InvalidTag:
            raise SecurityError('MAC_INVALID', _('message authentication failed'))
    window = session_keys.window(scope)
    window.check(counter)
    window.update(counter)
    return bytes(plaintext)


# -- handshake ---------------------------------------------------------------

class HandshakeKind(enum.IntEnum):
    REQUEST = 1
    REPLY = 2
    FINAL = 3


@dataclass(frozen=True)
class HandshakeMessage(object):
    kind: HandshakeKind
    initiator: bytes
    responder: bytes
    certificate: bytes = b''
    permissions: bytes = b''
    nonce: bytes = b''
    key_share: bytes = b''
    signature: bytes = b''

HANDSHAKE_TYPE = TypeDescriptor('HandshakeMessage', [
    Field('kind', EnumOf(HandshakeKind)),
    Field('initiator', FixedBytes(GUID_PREFIX_SIZE)),
    Field('responder', FixedBytes(GUID_PREFIX_SIZE)),
    Field('certificate', Bytes(4096)),
    Field('permissions', Bytes(16384)),
    Field('nonce', Bytes(32)),
    Field('key_share', Bytes(32)),
    Field('signature', Bytes(64)),
], HandshakeMessage)


class Handshake(object):
    """one side of the authentication of a peer

    the participant with the lower guid prefix initiates; the transcript
    covers both prefixes, both certificates, permissions, nonces and key
    shares, so a replayed message never completes a fresh handshake"""

    def __init__(self, security_config, local_prefix, remote_prefix,
                 initiator, now=0.0):
        self.config = security_config
        self.local_prefix = local_prefix
        self.remote_prefix = remote_prefix
        self.initiator = initiator
        self.started_at = now
        self.attempts = 0
        self.nonce = os.urandom(32)
        self._dh = X25519PrivateKey.generate()
        self.key_share = _raw_public(self._dh.public_key())
        self.request = None
        self.reply = None
        self.final = None
        self.keys = None
        self.remote_certificate = None
        self.remote_permissions = None

    @property
    def complete(self):
        return self.keys is not None

    def begin(self):
        """REQUEST message, initiator only"""
        self.request = HandshakeMessage(
            HandshakeKind.REQUEST, self.local_prefix, self.remote_prefix,
            self.config.certificate.to_bytes(),
            self.config.permissions.to_bytes(), self.nonce, self.key_share)
        return self.request

    def on_message(self, message):
        """next message to send, or None; raise SecurityError on failure"""
        if message.kind == HandshakeKind.REQUEST and not self.initiator:
            self._check_prefixes(message, self.remote_prefix, self.local_prefix)
            self._accept_credentials(message)
            self.request = message
            signature = self.config.sign(self._transcript() + b'reply')
            self.reply = HandshakeMessage(
                HandshakeKind.REPLY, message.initiator, message.responder,
                self.config.certificate.to_bytes(),
                self.config.permissions.to_bytes(), self.nonce,
                self.key_share, signature)
            return self.reply
        if message.kind == HandshakeKind.REPLY and self.initiator and \
           self.request is not None and self.keys is None:
            self._check_prefixes(message, self.local_prefix, self.remote_prefix)
            self._accept_credentials(message)
            self.reply = message
            transcript = self._transcript()
            self._verify(transcript + b'reply', message.signature)
            self._derive(message.key_share)
            self.final = HandshakeMessage(
                HandshakeKind.FINAL, self.local_prefix, self.remote_prefix,
                signature=self.config.sign(transcript + b'final'))
            return self.final
        if message.kind == HandshakeKind.FINAL and not self.initiator and \
           self.reply is not None and self.keys is None:
            self._check_prefixes(message, self.remote_prefix, self.local_prefix)
            self._verify(self._transcript() + b'final', message.signature)
            self._derive(self.request.key_share)
            return None
        raise SecurityError('HANDSHAKE_UNEXPECTED',
                            _('unexpected %s message') % message.kind.name)

    def _check_prefixes(self, message, initiator, responder):
        if message.initiator != initiator or message.responder != responder:
            raise SecurityError('SIGNATURE_INVALID',
                                _('handshake addressed to another session'))

    def _accept_credentials(self, message):
        try:
            certificate = IdentityCertificate.from_dict(
                json.loads(message.certificate.decode('utf-8')))
        except (ValueError, UnicodeDecodeError):
            raise SecurityError('CERT_INVALID', _('unreadable certificate'))
        certificate.verify(self.config.ca_public_key).check_validity()
        if certificate.subject_name != prefix_name(self.remote_prefix):
            raise SecurityError('CERT_INVALID',
                                _('certificate issued for another NAME'))
        try:
            permissions = PermissionsDocument.from_dict(
                json.loads(message.permissions.decode('utf-8')))
            permissions.verify(self.config.ca_public_key).check_validity()
        except (ValueError, UnicodeDecodeError, SecurityError):
            if self.config.governance.enable_join_access_control:
                raise SecurityError('PERMISSION_DENIED',
                                    _('peer permissions do not verify'))
            permissions = PermissionsDocument(certificate.subject_name)
        if permissions.subject_name != certificate.subject_name:
            raise SecurityError('PERMISSION_DENIED',
                                _('permissions issued for another NAME'))
        self.remote_certificate = certificate
        self.remote_permissions = permissions

    def _transcript(self):
        request, reply = self.request, self.reply
        parts = [b'agribus handshake', request.initiator, request.responder,
                 request.certificate, request.permissions, request.nonce,
                 request.key_share]
        if self.initiator:
            parts += [reply.certificate, reply.permissions, reply.nonce,
                      reply.key_share]
        else:
            parts += [self.config.certificate.to_bytes(),
                      self.config.permissions.to_bytes(), self.nonce,
                      self.key_share]
        digest = hashlib.sha256()
        for part in parts:
            digest.update(struct.pack('<I', len(part)))
            digest.update(part)
        return digest.digest()

    def _verify(self, data, signature):
        try:
            Ed25519PublicKey.from_public_bytes(
                self.remote_certificate.public_key).verify(signature, data)
        except (InvalidSignature, ValueError):
            raise SecurityError('SIGNATURE_INVALID',
                                _('handshake signature does not verify'))

    def _derive(self, remote_share):
        try:
            shared = self._dh.exchange(X25519PublicKey.from_public_bytes(
                remote_share))
        except ValueError:
            raise SecurityError('SIGNATURE_INVALID', _('bad key share'))
        if self.initiator:
            salt = self.nonce + self.reply.nonce
        else:
            salt = self.request.nonce + self.nonce
        secret = HKDF(algorithm=hashes.SHA256(), length=32, salt=salt,
                      info=b'agribus session').derive(shared)
        self.keys = SessionKeys(secret, self.config.replay_window)
        log.debug('session with %X established, rtps key check %s',
                  prefix_name(self.remote_prefix),
                  self.keys.key_check(SCOPE_RTPS))
