"""Linear-memory attestation toolkit for WebAssembly.

Pipeline: instrument a Wasm binary with snapshot hooks, run it under the
attester to capture RLE-compressed linear-memory snapshots, classify each
snapshot with a small CNN over the memory-as-image representation, and
aggregate per-snapshot labels into an execution verdict.
"""

__version__ = "0.1.0"
