"""Runnable model of a storage stack that computes next to the data.

A `store.Volume` holds typed item containers with crash-safe commits; a
`device.Device` executes filters, mutations and programs directly over that
volume; `server`/`client` put a checksummed binary protocol between host and
device; `hostfs.DcFile` is the host-side file surface over that wire; and
`bench` measures the byte traffic each approach costs.
"""

from .bench import BenchReport, run_bench
from .client import Connection, HostTrafficLedger, connect
from .device import Device
from .errors import NdpError
from .hostfs import DcFile, open_dc, resolve_device_addr
from .items import (
    BOOL,
    F64,
    I64,
    U64,
    FieldType,
    ItemSchema,
    Kind,
    binary,
    utf8,
)
from .modes import Async, Delayed, Interrupt, Poll, Sync
from .exprtext import (
    parse_mutation,
    parse_predicate,
    parse_program,
    parse_schema_spec,
)
from .report import write_report
from .server import Server, TcpServer, loopback
from .store import Volume

__version__ = "0.1.0"

__all__ = [
    "Async",
    "BOOL",
    "BenchReport",
    "Connection",
    "DcFile",
    "Delayed",
    "Device",
    "F64",
    "FieldType",
    "HostTrafficLedger",
    "I64",
    "Interrupt",
    "ItemSchema",
    "Kind",
    "NdpError",
    "Poll",
    "Server",
    "Sync",
    "TcpServer",
    "U64",
    "Volume",
    "binary",
    "connect",
    "loopback",
    "open_dc",
    "parse_mutation",
    "parse_predicate",
    "parse_program",
    "parse_schema_spec",
    "resolve_device_addr",
    "run_bench",
    "utf8",
    "write_report",
    "__version__",
]
