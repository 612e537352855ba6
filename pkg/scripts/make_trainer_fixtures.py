#!/usr/bin/env python3
"""Produce the trainer's cross-component test fixtures with the toolkit side.

Writes into trainer/test/fixtures/:
  sample.lmas         an attested run of the structured workload
  sample_render.pgm   `lma render` of record 2 (transform conformance target)
  random.lmaw         a random-weights model in the shared format
  oracle_images.bin   100 concatenated 128x128 uint8 rasters
  primary_logits.json engine logits for random.lmaw over those images

The trainer's suite checks its independent implementations against these
bytes; the toolkit's acceptance suite checks the reverse direction against
trainer-produced goldens.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from lma.attester import AttesterConfig, run_attested  # noqa: E402
from lma.codec import read_records  # noqa: E402
from lma.engine import forward_logits  # noqa: E402
from lma.image import render_pgm  # noqa: E402
from lma.model import random_small_resnet, save_model  # noqa: E402
from lma.wasm.instrument import InstrumentationPolicy, instrument  # noqa: E402

OUT = ROOT / "trainer" / "test" / "fixtures"
SIDE = 128


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)

    raw = (ROOT / "fixtures" / "modules" / "framepack.wasm").read_bytes()
    instrumented, _ = instrument(raw, InstrumentationPolicy.IMPORT_FUNCTION)
    module = OUT / "framepack.lma.wasm"
    module.write_bytes(instrumented)
    stream = OUT / "sample.lmas"
    run_attested(AttesterConfig(
        module_path=str(module),
        sink="file:%s" % stream,
        session_id=bytes.fromhex("00112233445566778899aabbccddeeff"),
        stdin=b"\x02\x05\x31\x47",
    ))
    module.unlink()

    record = read_records(stream)[2]
    (OUT / "sample_render.pgm").write_bytes(render_pgm(record.decode_memory(), SIDE))

    graph = random_small_resnet(seed=424242)
    (OUT / "random.lmaw").write_bytes(save_model(graph))

    rng = np.random.default_rng(0x0BAC1E5)
    images = rng.integers(0, 256, (100, SIDE, SIDE), dtype=np.uint8)
    (OUT / "oracle_images.bin").write_bytes(images.tobytes())
    logits = [
        forward_logits(graph, images[i].astype(np.float32) / np.float32(255)).tolist()
        for i in range(images.shape[0])
    ]
    (OUT / "primary_logits.json").write_text(json.dumps(logits) + "\n")
    print(json.dumps({"fixtures": sorted(p.name for p in OUT.iterdir())}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
