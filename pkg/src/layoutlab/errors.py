"""Exception hierarchy shared across the package.

``InputError`` and its subclasses cover everything a caller can fix
(bad files, invalid layouts, unparseable text).  Anything else raised
by this package signals an internal problem.
"""

from __future__ import annotations


class LayoutLabError(Exception):
    """Base class for all errors raised by layoutlab."""


class InputError(LayoutLabError):
    """Caller-addressable problem: bad path, bad value, bad file format."""


class InvalidLayoutError(InputError):
    """A layout failed structural validation."""


class LayoutParseError(InputError):
    """Free text contained no recoverable layout lines."""


class PromptSpecError(InputError):
    """A task specification violates the instruction grammar rules."""


class CorpusFormatError(InputError):
    """An on-disk corpus is malformed; the message names the failing record."""


class MalformedTokenStreamError(LayoutLabError):
    """A token sequence cannot be decoded back into a layout."""


class DegenerateFeedbackError(LayoutLabError):
    """Preference training got no usable pairs for a whole pass."""
