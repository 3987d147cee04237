# -*- coding:utf-8 -*-

"""
AgriBus: data-centric publish-subscribe for agricultural machines

Importing the package installs the translation function `_` into builtins
and attaches a NullHandler to the package logger; the command line sets up
real logging.
"""

__VERSION__ = '0.3.0'

import builtins
import gettext
import locale
import logging
import os

GETTEXT_DOMAIN = 'agribus'


def locale_path():
    """$AGRIBUS_LOCALE_DIR, else the system catalogs"""
    return os.environ.get('AGRIBUS_LOCALE_DIR') or '/usr/share/locale'


def install_translation():
    try:
        locale.setlocale(locale.LC_ALL, '')
    except locale.Error:
        locale.setlocale(locale.LC_ALL, 'C')
    languages = []
    language, _encoding = locale.getlocale()
    if language:
        languages.append(language)
    languages.extend(os.environ.get('LANGUAGE', '').split(':'))
    translation = gettext.translation(GETTEXT_DOMAIN, locale_path(),
                                      languages=[l for l in languages if l],
                                      fallback=True)
    builtins._ = translation.gettext
    return translation

install_translation()
logging.getLogger(__name__).addHandler(logging.NullHandler())
