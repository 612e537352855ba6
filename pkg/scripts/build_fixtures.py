#!/usr/bin/env python3
"""Assemble fixtures/wat/**/*.wat into fixtures/modules/ with wabt.

Requires node plus a globally installed wabt (`npm install -g wabt`).
control.wat is built with debug names so the corpus exercises name-section
handling.  Binaries are committed, so this only needs to run after editing
a .wat source.
"""

import json
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
WAT = ROOT / "fixtures" / "wat"
OUT = ROOT / "fixtures" / "modules"

NODE_SNIPPET = """
const path = require('path');
const root = require('child_process').execSync('npm root -g').toString().trim();
const wabt = require(path.join(root, 'wabt'));
const fs = require('fs');
const [src, dest, debugNames] = process.argv.slice(1).filter(a => a !== '--');
wabt().then(w => {
  const mod = w.parseWat(src, fs.readFileSync(src, 'utf8'),
    {bulk_memory: true, sign_extension: true, sat_float_to_int: true, multi_value: true});
  mod.resolveNames();
  mod.validate();
  const bin = mod.toBinary({write_debug_names: debugNames === '1'});
  fs.writeFileSync(dest, Buffer.from(bin.buffer));
  console.log(dest, bin.buffer.length);
});
"""


def build(src: Path, dest: Path, debug_names: bool = False) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    subprocess.run(
        ["node", "-e", NODE_SNIPPET, "--", str(src), str(dest),
         "1" if debug_names else "0"],
        check=True,
    )


def main() -> int:
    built = []
    for src in sorted(WAT.rglob("*.wat")):
        rel = src.relative_to(WAT).with_suffix(".wasm")
        dest = OUT / rel
        build(src, dest, debug_names=(src.stem == "control"))
        built.append(str(rel))
    print(json.dumps({"built": built}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
