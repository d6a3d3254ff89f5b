"""Configuration, CLI and on-disk formats."""

from .config import RunConfig, load_config, parse_config, serialize_config
from .output import (DiagnosticsWriter, dump_field, format_record, load_field,
                     read_diagnostics, write_diagnostics, write_plotdata)
from .runner import build_model, execute

__all__ = [
    "RunConfig", "parse_config", "load_config", "serialize_config", "DiagnosticsWriter",
    "format_record", "write_diagnostics", "read_diagnostics", "dump_field", "load_field",
    "write_plotdata", "build_model", "execute",
]
