"""``lma`` command line: instrument / attest / verify / classify / render /
dataset / mutate / bench / eval.

Exit codes: 0 benign or success, 2 malicious verdict, 3 invalid session,
1 operational error.

Every subcommand accepts ``--config FILE`` holding flat ``key = value``
lines (``#`` comments allowed); keys are the long option names with dashes
replaced by underscores.  Explicit command-line flags win over config values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from . import codec, dataset, evaluate
from . import verifier as verifier_mod
from .attester import AttesterConfig, AttesterError, run_attested
from .engine import infer
from .image import DEFAULT_SIDE, render_pgm, to_image
from .model import ModelError
from .verdict import VerdictConfig
from .wasm.instrument import InstrumentationPolicy, InstrumentError, instrument


def load_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError("%s:%d: expected key = value" % (path, lineno))
        values[key.strip().replace("-", "_")] = _coerce(value.strip())
    return values


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _verdict_flags(sub):
    sub.add_argument("--window", type=int, default=8)
    sub.add_argument("--threshold", type=int, default=5)
    sub.add_argument("--min-snapshots", type=int, default=1)
    sub.add_argument("--side", type=int, default=DEFAULT_SIDE)


def _vconfig(args) -> VerdictConfig:
    return VerdictConfig(
        window=args.window, threshold=args.threshold, min_snapshots=args.min_snapshots
    )


def cmd_instrument(args) -> int:
    module_bytes = Path(args.in_path).read_bytes()
    out_bytes, report = instrument(
        module_bytes,
        InstrumentationPolicy(args.policy),
        instrument_bulk_stores=args.instrument_bulk,
    )
    Path(args.out_path).write_bytes(out_bytes)
    if args.report:
        Path(args.report).write_text(report.to_json())
    print(report.to_json(), end="")
    return 0


def cmd_attest(args) -> int:
    stdin = Path(args.stdin).read_bytes() if args.stdin else b""
    session_id = bytes.fromhex(args.session_id) if args.session_id else None
    guest_args = list(args.guest_args)
    if guest_args and guest_args[0] == "--":
        guest_args = guest_args[1:]
    summary = run_attested(AttesterConfig(
        module_path=args.module,
        sink=args.sink,
        session_id=session_id,
        max_snapshots=args.max_snapshots,
        stdin=stdin,
        argv=tuple(guest_args),
        entry=args.entry,
        fuel=args.fuel,
    ))
    print(summary.to_json(), end="")
    return 0


def cmd_verify(args) -> int:
    graph = verifier_mod.load_graph(args.model)
    config = _vconfig(args)

    def on_verdict(session_id: bytes, trigger_seq: int) -> None:
        print(json.dumps({
            "event": "malicious",
            "session_id": session_id.hex(),
            "trigger_seq": trigger_seq,
        }), flush=True)

    kind, _, rest = args.source.partition(":")
    if kind == "file" and rest:
        report = verifier_mod.verify_file(
            rest, graph, config, args.side, on_verdict, args.timings
        )
    elif kind == "listen" and rest.isdigit():
        report = verifier_mod.verify_listen(
            int(rest), graph, config, args.side, sessions=args.sessions,
            on_verdict=on_verdict, collect_timings=args.timings,
        )
    else:
        raise verifier_mod.SourceUnavailable("unrecognized source %r" % args.source)

    if args.report:
        verifier_mod.write_report(report, args.report)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    verdicts = [s["verdict"] for s in report["sessions"]]
    if "Malicious" in verdicts:
        return 2
    if "Invalid" in verdicts:
        return 3
    return 0


def cmd_classify(args) -> int:
    graph = verifier_mod.load_graph(args.model)
    records = codec.read_records(args.snapshot)
    if args.index is not None:
        records = [records[args.index]]
    for record in records:
        result = infer(graph, to_image(record.decode_memory(), args.side))
        print(json.dumps({
            "seq": record.seq_no,
            "score": float(result.score),
            "label": result.label.value,
        }))
    return 0


def cmd_render(args) -> int:
    records = codec.read_records(args.snapshot)
    record = records[args.index]
    Path(args.out).write_bytes(render_pgm(record.decode_memory(), args.side))
    return 0


def cmd_dataset(args) -> int:
    fractions = tuple(float(x) for x in args.split_fractions.split(","))
    if len(fractions) != 3:
        raise ValueError("--split-fractions needs train,val,test")
    manifest = dataset.generate(
        args.module, args.corpus, args.out,
        n_corrupt_per_benign=args.corrupt_ratio,
        seed=args.seed,
        split_fractions=fractions,
        fuel=args.fuel,
    )
    print(json.dumps({
        "entries": len(manifest["entries"]),
        "skipped": len(manifest["skipped"]),
        "manifest": str(Path(args.out) / "manifest.json"),
    }, indent=2))
    return 0


def cmd_mutate(args) -> int:
    created = dataset.mutate_corpus(args.corpus, args.rounds, args.seed, args.out)
    print(json.dumps({"created": len(created)}))
    return 0


def cmd_bench(args) -> int:
    modules = sorted(Path(args.modules).glob("*.wasm"))
    if not modules:
        raise ValueError("no .wasm modules in %s" % args.modules)
    graph = verifier_mod.load_graph(args.model) if args.model else None
    stdin = Path(args.stdin).read_bytes() if args.stdin else b""
    report = bench_mod.run_ablation(
        modules,
        [p.strip() for p in args.policies.split(",") if p.strip()],
        args.reps,
        graph=graph,
        side=args.side,
        stdin=stdin,
    )
    if args.report:
        bench_mod.write_report(report, args.report)
    print(json.dumps(
        {"geo_mean": report["geo_mean"], "avg_attestations": report["avg_attestations"]},
        indent=2, sort_keys=True,
    ))
    return 0


def cmd_eval(args) -> int:
    graph = verifier_mod.load_graph(args.model)
    manifest = dataset.load_manifest(args.manifest)
    metrics = evaluate.evaluate(
        manifest, Path(args.manifest).parent, graph,
        config=_vconfig(args), side=args.side, split=args.split,
    )
    if not args.executions:
        metrics = {k: v for k, v in metrics.items() if k != "executions"}
    out = json.dumps(metrics, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(out + "\n")
    print(out)
    return 0


def build_parser() -> tuple:
    parser = argparse.ArgumentParser(
        prog="lma", description="linear-memory attestation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    registry = {}

    def command(name: str, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", help="flat key = value settings file")
        p.set_defaults(func=fn)
        registry[name] = p
        return p

    p = command("instrument", cmd_instrument, help="inject snapshot hooks")
    p.add_argument("--policy", required=True, choices=["import", "local", "memory"])
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--report")
    p.add_argument("--instrument-bulk", action="store_true",
                   help="also hook memory.fill/copy/grow under the memory policy")

    p = command("attest", cmd_attest, help="run an instrumented module, emit snapshots")
    p.add_argument("--module", required=True)
    p.add_argument("--sink", required=True, help="file:PATH | tcp:HOST:PORT | null")
    p.add_argument("--max-snapshots", type=int, default=0)
    p.add_argument("--session-id", help="32 hex chars; default random")
    p.add_argument("--stdin", help="file fed to the guest's stdin")
    p.add_argument("--entry", default="_start")
    p.add_argument("--fuel", type=int, default=None)
    p.add_argument("guest_args", nargs=argparse.REMAINDER)

    p = command("verify", cmd_verify, help="classify snapshot streams, emit verdicts")
    p.add_argument("--source", required=True, help="file:PATH | listen:PORT")
    p.add_argument("--model", required=True)
    p.add_argument("--sessions", type=int, default=1,
                   help="connections to accept in listen mode")
    p.add_argument("--timings", action="store_true",
                   help="include per-stage timings (non-deterministic) in the report")
    p.add_argument("--report")
    _verdict_flags(p)

    p = command("classify", cmd_classify, help="per-snapshot classification")
    p.add_argument("--model", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--index", type=int)
    p.add_argument("--side", type=int, default=DEFAULT_SIDE)

    p = command("render", cmd_render, help="render one snapshot to a PGM image")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--side", type=int, default=DEFAULT_SIDE)

    p = command("dataset", cmd_dataset, help="generate a labeled snapshot dataset")
    p.add_argument("--module", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-ratio", type=int, default=1,
                   help="corrupted variants per benign execution")
    p.add_argument("--split-fractions", default="0.6,0.2,0.2")
    p.add_argument("--fuel", type=int, default=50_000_000)

    p = command("mutate", cmd_mutate, help="grow a corpus by byte-level mutation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = command("bench", cmd_bench, help="overhead ablation across policies")
    p.add_argument("--modules", required=True, help="directory of .wasm kernels")
    p.add_argument("--policies", default="import,local,memory")
    p.add_argument("--reps", type=int, default=25)
    p.add_argument("--model", help="weight file for inline verification")
    p.add_argument("--side", type=int, default=DEFAULT_SIDE)
    p.add_argument("--stdin", help="file fed to each kernel's stdin")
    p.add_argument("--report")

    p = command("eval", cmd_eval, help="metrics for a model over a dataset split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--executions", action="store_true",
                   help="include the per-execution table in the output")
    p.add_argument("--report")
    _verdict_flags(p)

    return parser, registry


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    probe, _ = parser.parse_known_args(argv)
    config_path = getattr(probe, "config", None)
    if config_path:
        registry[probe.command].set_defaults(**load_config_file(config_path))
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        InstrumentError, AttesterError, codec.CodecError, ModelError,
        verifier_mod.VerifierError, dataset.DatasetError, evaluate.EmptySplit,
        bench_mod.BaselineFailure, OSError, ValueError,
    ) as exc:
        print("lma: error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
