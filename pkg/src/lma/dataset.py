"""Labeled snapshot dataset generation.

Benign snapshots come from attested runs over a corpus of inputs; corrupted
counterparts are produced by applying a seeded synthetic corruption to each
decoded memory and re-framing the records.  The injector stands in for a
fuzz-and-sanitizer labeling oracle at desk scale: smears model buffer
overflows, scrambles model pointer corruption, scattered bit flips model
external tampering.

Everything is driven by an in-repo splitmix64 PRNG so regeneration from
(module, corpus, seed) is bit-identical regardless of library versions.
Set SOURCE_DATE_EPOCH to pin the manifest timestamp for reproducible runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from . import codec
from .attester import AttesterConfig, CollectSink, run_attested

_M64 = (1 << 64) - 1


class DatasetError(Exception):
    pass


class EmptyCorpus(DatasetError):
    pass


class Prng:
    """splitmix64: tiny, stable, and version-proof."""

    def __init__(self, seed: int):
        self.state = seed & _M64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n


def _hash_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---- corruption specs ------------------------------------------------------

@dataclass(frozen=True)
class OverflowSmear:
    offset: int
    length: int
    fill_byte: int

    mode = "overflow_smear"


@dataclass(frozen=True)
class RandomFlips:
    count: int
    seed: int

    mode = "random_flips"


@dataclass(frozen=True)
class PointerScramble:
    count: int
    seed: int
    alignment: int = 4

    mode = "pointer_scramble"


CorruptionSpec = Union[OverflowSmear, RandomFlips, PointerScramble]


def spec_to_dict(spec: CorruptionSpec) -> dict:
    out = {"mode": spec.mode}
    out.update(spec.__dict__)
    return out


def spec_from_dict(d: dict) -> CorruptionSpec:
    kind = d["mode"]
    if kind == "overflow_smear":
        return OverflowSmear(d["offset"], d["length"], d["fill_byte"])
    if kind == "random_flips":
        return RandomFlips(d["count"], d["seed"])
    if kind == "pointer_scramble":
        return PointerScramble(d["count"], d["seed"], d.get("alignment", 4))
    raise DatasetError("unknown corruption mode %r" % kind)


def apply_corruption(spec: CorruptionSpec, memory: bytes) -> bytes:
    buf = bytearray(memory)
    if isinstance(spec, OverflowSmear):
        if spec.offset < 0 or spec.offset + spec.length > len(buf):
            raise DatasetError("smear region out of bounds")
        buf[spec.offset : spec.offset + spec.length] = bytes([spec.fill_byte]) * spec.length
    elif isinstance(spec, RandomFlips):
        if spec.count < 1 or spec.count > len(buf):
            raise DatasetError("flip count out of range")
        rng = Prng(spec.seed)
        seen = set()
        while len(seen) < spec.count:
            seen.add(rng.below(len(buf)))
        for pos in sorted(seen):
            buf[pos] ^= 1 << rng.below(8)
    elif isinstance(spec, PointerScramble):
        words = len(buf) // spec.alignment
        if spec.count < 1 or spec.count > words:
            raise DatasetError("scramble count out of range")
        rng = Prng(spec.seed)
        seen = set()
        while len(seen) < spec.count:
            seen.add(rng.below(words) * spec.alignment)
        for pos in sorted(seen):
            for k in range(spec.alignment):
                # force at least one changed bit per word
                buf[pos + k] ^= (rng.next() & 0xFF) | (1 if k == 0 else 0)
    else:
        raise DatasetError("unknown corruption spec %r" % (spec,))
    return bytes(buf)


def draw_spec(rng: Prng, mem_len: int) -> CorruptionSpec:
    """Corruption draw used for dataset variants; sizes chosen to survive the
    image downsampling (artifacts span multiple sampled raster cells)."""
    mode = rng.below(3)
    if mode == 0:
        length = 2048 + rng.below(6144)
        length = min(length, max(1, mem_len))
        offset = rng.below(max(1, mem_len - length + 1))
        return OverflowSmear(offset, length, 0x20 + rng.below(0xD0))
    if mode == 1:
        return RandomFlips(256 + rng.below(768), rng.next())
    return PointerScramble(48 + rng.below(208), rng.next(), 4)


# ---- corpus mutation -------------------------------------------------------

def _mutate_once(data: bytes, rng: Prng) -> bytes:
    buf = bytearray(data)
    choice = rng.below(4)
    if choice == 0:  # bit flips
        for _ in range(1 + rng.below(8)):
            pos = rng.below(len(buf))
            buf[pos] ^= 1 << rng.below(8)
    elif choice == 1:  # byte overwrites
        for _ in range(1 + rng.below(8)):
            buf[rng.below(len(buf))] = rng.below(256)
    elif choice == 2:  # truncate, keep at least one byte
        if len(buf) > 1:
            keep = 1 + rng.below(len(buf) - 1) if len(buf) > 2 else 1
            del buf[keep:]
        else:
            buf[0] ^= 0xFF
    else:  # duplicate a slice, capped at twice the original length
        room = 2 * len(data) - len(buf)
        if room > 0:
            n = 1 + rng.below(min(room, len(buf)))
            start = rng.below(len(buf) - n + 1)
            insert_at = rng.below(len(buf) + 1)
            buf[insert_at:insert_at] = buf[start : start + n]
        else:
            buf[rng.below(len(buf))] = rng.below(256)
    return bytes(buf)


def mutate_corpus(corpus_dir, rounds: int, seed: int, out_dir=None) -> list:
    """Write rounds * |corpus| mutated inputs; returns the new paths."""
    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir) if out_dir is not None else corpus_dir
    sources = sorted(p for p in corpus_dir.iterdir() if p.is_file())
    if not sources:
        raise EmptyCorpus("no inputs in %s" % corpus_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []
    for r in range(rounds):
        for src in sources:
            rng = Prng(_hash_seed("mutate", seed, r, src.name))
            mutated = _mutate_once(src.read_bytes(), rng)
            dest = out_dir / ("%s_m%d%s" % (src.stem, r, src.suffix or ".bin"))
            dest.write_bytes(mutated)
            created.append(dest)
    return created


# ---- dataset generation ------------------------------------------------------

def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch is not None else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _split_of(base_input: str, seed: int, fractions: tuple) -> str:
    u = _hash_seed("split", seed, base_input) / float(1 << 64)
    train, val, _test = fractions
    if u < train:
        return "train"
    if u < train + val:
        return "val"
    return "test"


def _session_id(*parts) -> bytes:
    return hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()[:16]


def generate(
    module_path,
    corpus_dir,
    out_dir,
    n_corrupt_per_benign: int = 1,
    seed: int = 0,
    split_fractions: tuple = (0.6, 0.2, 0.2),
    fuel: Optional[int] = 50_000_000,
) -> dict:
    """Attest every corpus input, inject corrupted twins, write the manifest."""
    module_path = Path(module_path)
    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir)
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise DatasetError("split fractions must sum to 1")
    inputs = sorted(p for p in corpus_dir.iterdir() if p.is_file())
    if not inputs:
        raise EmptyCorpus("no inputs in %s" % corpus_dir)
    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    module_name = module_path.stem

    entries = []
    skipped = []
    for input_path in inputs:
        input_id = input_path.stem
        stdin = input_path.read_bytes()
        sink = CollectSink()
        summary = run_attested(
            AttesterConfig(
                module_path=str(module_path),
                session_id=_session_id("benign", module_name, input_id, seed),
                stdin=stdin,
                fuel=fuel,
            ),
            sink=sink,
        )
        if summary.trap is not None or not sink.frames:
            skipped.append({"input_id": input_id, "trap": summary.trap,
                            "snapshots": len(sink.frames)})
            continue
        split = _split_of(input_id, seed, split_fractions)
        benign_file = "snapshots/%s.lmas" % input_id
        (out_dir / benign_file).write_bytes(b"".join(sink.frames))
        records = sink.records
        for idx in range(len(records)):
            entries.append({
                "snapshot_file": benign_file,
                "record_index": idx,
                "label": "Benign",
                "source_program": module_name,
                "input_id": input_id,
                "base_input": input_id,
                "corruption": None,
                "split": split,
            })

        for v in range(n_corrupt_per_benign):
            rng = Prng(_hash_seed("corrupt", seed, input_id, v))
            memories = [r.decode_memory() for r in records]
            min_len = min(len(m) for m in memories)  # memory.grow mid-run
            spec = None
            for _attempt in range(16):
                candidate = draw_spec(rng, min_len)
                if all(apply_corruption(candidate, m) != m for m in memories):
                    spec = candidate
                    break
            if spec is None:
                raise DatasetError("could not draw an effective corruption for %s" % input_id)
            variant_id = "%s#c%d" % (input_id, v)
            session = _session_id("corrupt", module_name, input_id, seed, v)
            frames = []
            for r, memory in zip(records, memories):
                mutated = apply_corruption(spec, memory)
                frames.append(codec.frame_record(codec.SnapshotRecord(
                    session_id=session,
                    seq_no=r.seq_no,
                    reason_code=r.reason_code,
                    mem_size_bytes=len(mutated),
                    payload=codec.rle_encode(mutated),
                )))
            variant_file = "snapshots/%s.c%d.lmas" % (input_id, v)
            (out_dir / variant_file).write_bytes(b"".join(frames))
            for idx in range(len(frames)):
                entries.append({
                    "snapshot_file": variant_file,
                    "record_index": idx,
                    "label": "Corrupted",
                    "source_program": module_name,
                    "input_id": variant_id,
                    "base_input": input_id,
                    "corruption": spec_to_dict(spec),
                    "split": split,
                })

    manifest = {
        "module": module_path.name,
        "seed": seed,
        "created": _timestamp(),
        "split_fractions": {"train": split_fractions[0], "val": split_fractions[1],
                            "test": split_fractions[2]},
        "entries": entries,
        "skipped": skipped,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
