"""Exception hierarchy shared by every layer.

Each exception class carries a stable numeric ``code`` (u16) so errors can
cross the wire and be re-raised as the same class on the other side.  Codes
are grouped by layer:

    1xx  item/schema validation and codec errors
    2xx  volume/container store errors
    3xx  expression DSL errors
    4xx  device execution errors
    5xx  wire/transport errors
    6xx  host/CLI errors
"""

from __future__ import annotations


class NdpError(Exception):
    """Base class; ``code`` is the wire error code for this class."""

    code = 0

    def __init__(self, message: str = "", **context):
        self.context = context
        if context and message:
            message = f"{message} ({', '.join(f'{k}={v!r}' for k, v in context.items())})"
        super().__init__(message or self.__class__.__name__)


# --- item/schema (1xx) ---

class ValidationError(NdpError):
    code = 100

class ArityMismatch(ValidationError):
    code = 101

class TypeMismatch(ValidationError):
    code = 102

class LengthExceeded(ValidationError):
    code = 103

class InvalidUtf8(ValidationError):
    code = 104

class InvalidSchema(ValidationError):
    code = 105

class DecodeError(NdpError):
    code = 110

class Truncated(DecodeError):
    code = 111

class TrailingBytes(DecodeError):
    code = 112

class DuplicateName(DecodeError):
    code = 113

class BadTypeTag(DecodeError):
    code = 114


# --- volume store (2xx) ---

class StoreError(NdpError):
    code = 200

class AlreadyExists(StoreError):
    code = 201

class NotAVolume(StoreError):
    code = 202

class BadVersion(StoreError):
    code = 203

class CorruptCatalog(StoreError):
    code = 204

class NameInUse(StoreError):
    code = 205

class NoSuchContainer(StoreError):
    code = 206

class RangeOutOfBounds(StoreError):
    code = 207

class IndexOutOfBounds(StoreError):
    code = 208

class Tombstoned(StoreError):
    code = 209

class ErrFrozen(StoreError):
    code = 210

class NoSuchToken(StoreError):
    code = 211

class JournalWriteFailed(StoreError):
    code = 212


# --- expression DSL (3xx) ---

class ExprError(NdpError):
    code = 300

class ExprTypeError(ExprError):
    """Type rule violated; ``path`` locates the offending node from the root."""

    code = 301

    def __init__(self, message: str = "", path: tuple = (), **context):
        self.path = path
        if path:
            context.setdefault("path", ".".join(path) or "root")
        super().__init__(message, **context)

class UnknownField(ExprError):
    code = 302

class DepthExceeded(ExprError):
    code = 303

class BadTag(ExprError):
    code = 304

class EvalError(ExprError):
    code = 310

class DivByZero(EvalError):
    code = 311

class Overflow(EvalError):
    code = 312


# --- device (4xx) ---

class DeviceError(NdpError):
    code = 400

class NoSuchHandle(DeviceError):
    code = 401

class StaleHandle(DeviceError):
    code = 402

class SchemaMismatch(DeviceError):
    code = 403

class EmptyInput(DeviceError):
    code = 404

class ErrQueueFull(DeviceError):
    code = 405

class RequestNotDelayable(DeviceError):
    code = 406

class NoSuchTrigger(DeviceError):
    code = 407

class InvalidTriggerAction(DeviceError):
    code = 408

class BadRequest(DeviceError):
    code = 409


# --- wire/transport (5xx) ---

class FrameError(NdpError):
    code = 500

class BadMagic(FrameError):
    code = 501

class BadCrc(FrameError):
    code = 502

class PayloadTooLarge(FrameError):
    code = 503

class BadFrameVersion(FrameError):
    code = 504

class TransportClosed(NdpError):
    code = 510

class RemoteError(NdpError):
    """Error received over the wire whose code maps to no known class."""

    code = 511

    def __init__(self, code: int, message: str = ""):
        self.remote_code = code
        super().__init__(message or f"remote error code {code}")


# --- host/CLI (6xx) ---

class HandleClosed(NdpError):
    code = 600

class SchemaRequired(NdpError):
    code = 601

class ExprParseError(NdpError):
    """Text expression rejected; carries the source and caret offset."""

    code = 602

    def __init__(self, message: str, text: str = "", pos: int = 0):
        self.text = text
        self.pos = pos
        super().__init__(message)

    def caret(self) -> str:
        return f"{self.text}\n{' ' * self.pos}^"

class CsvParseError(NdpError):
    code = 603

    def __init__(self, message: str, line: int = 0, column: str = ""):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column!r}: {message}" if line else message)

class ReadOnlyFile(NdpError):
    code = 604


_BY_CODE: dict[int, type] = {}


def _register(cls: type) -> None:
    for sub in cls.__subclasses__():
        _BY_CODE.setdefault(sub.code, sub)
        _register(sub)


_register(NdpError)
_BY_CODE[NdpError.code] = NdpError


def error_class_for_code(code: int) -> type:
    """Class to re-raise for a wire error code; RemoteError when unknown."""
    return _BY_CODE.get(code, RemoteError)


def raise_for_code(code: int, message: str):
    cls = error_class_for_code(code)
    if cls is RemoteError:
        raise RemoteError(code, message)
    raise cls(message)
