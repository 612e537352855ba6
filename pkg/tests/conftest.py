import base64
import functools
import shutil
import subprocess
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
MODULES = ROOT / "fixtures" / "modules"
CORPUS = sorted((MODULES / "corpus").glob("*.wasm"))
KERNELS = sorted((MODULES / "kernels").glob("*.wasm"))
FRAMEPACK = MODULES / "framepack.wasm"
GOLDEN = ROOT / "fixtures" / "golden"

_NODE = shutil.which("node")

_WAT_SNIPPET = """
const path = require('path');
const root = require('child_process').execSync('npm root -g').toString().trim();
const wabt = require(path.join(root, 'wabt'));
const fs = require('fs');
wabt().then(w => {
  const src = fs.readFileSync(0, 'utf8');
  const mod = w.parseWat('test.wat', src,
    {bulk_memory: true, sign_extension: true, sat_float_to_int: true, multi_value: true});
  mod.resolveNames();
  mod.validate();
  process.stdout.write(Buffer.from(mod.toBinary({}).buffer).toString('base64'));
});
"""


@functools.lru_cache(maxsize=None)
def _wabt_available() -> bool:
    if _NODE is None:
        return False
    probe = subprocess.run(
        ["node", "-e", "require(require('child_process').execSync('npm root -g')"
                       ".toString().trim() + '/wabt')"],
        capture_output=True,
    )
    return probe.returncode == 0


@functools.lru_cache(maxsize=None)
def wat2wasm(source: str) -> bytes:
    result = subprocess.run(
        ["node", "-e", _WAT_SNIPPET], input=source.encode(),
        capture_output=True, check=True,
    )
    return base64.b64decode(result.stdout)


def require_wat():
    if not _wabt_available():
        pytest.skip("needs node with a global wabt install (npm install -g wabt)")


def v8_validates(module_bytes: bytes) -> bool:
    """Independent validation oracle: V8's WebAssembly.validate."""
    if _NODE is None:
        pytest.skip("needs node for the independent validation oracle")
    result = subprocess.run(
        ["node", "-e",
         "const b=Buffer.from(process.argv[1],'base64');"
         "process.exit(WebAssembly.validate(b)?0:1)",
         base64.b64encode(module_bytes).decode()],
        capture_output=True,
    )
    return result.returncode == 0


@pytest.fixture(scope="session")
def corpus_modules():
    assert len(CORPUS) >= 10, "fixture corpus must hold at least 10 modules"
    return {p.stem: p.read_bytes() for p in CORPUS}


@pytest.fixture(scope="session")
def kernel_paths():
    assert len(KERNELS) >= 5
    return KERNELS


@pytest.fixture(scope="session")
def framepack_path():
    return FRAMEPACK


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN


# ---- acceptance reporting ---------------------------------------------------
# every test in test_acceptance.py is one criterion; print one line each

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE_RESULTS[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line("%s  %s" % (status.ljust(7), name))
