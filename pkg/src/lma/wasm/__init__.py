"""Wasm binary toolchain: parser, validator, rewriter, and interpreter.

Covers the MVP instruction set plus sign-extension, saturating truncation,
and bulk memory.  SIMD, threads, exceptions, and GC binaries are rejected.
"""

from .instrument import (  # noqa: F401
    AlreadyInstrumented,
    InstrumentationPolicy,
    InstrumentationReport,
    MalformedModule,
    MultiMemory,
    instrument,
)
