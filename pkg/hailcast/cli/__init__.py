"""
Command line module.

``hailcast`` entry point, command implementations and PGM rendering.
"""

from hailcast.cli.main import build_parser, main, resolve_settings
from hailcast.cli.render import encode_pgm, render_pgm, render_strip

__all__ = [
    "build_parser",
    "encode_pgm",
    "main",
    "render_pgm",
    "render_strip",
    "resolve_settings",
]
