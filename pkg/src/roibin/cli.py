"""Command-line front end.

Settings resolve strictly as: flags > config file > environment > defaults.
The config file is INI-style key=value sections mirroring the pipeline
configuration; environment overrides use the ``ROIBIN_`` prefix, e.g.
``ROIBIN_THREADS_BIN=4`` or ``ROIBIN_CODEC_ABS_ERROR=45``.

Exit codes: 0 success, 2 usage errors, 3 data errors, 4 I/O errors.
stdout carries data and tables; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import time

import numpy as np

from . import bench as bench_mod
from . import metrics as metrics_mod
from . import tuner as tuner_mod
from .binning import BinSpec
from .codec import CodecId, ErrorBound
from .errors import RoibinError
from .frames import Calibration, Dims4, calibrate, identity_batch, ingest_raw
from .peakfind import PeakFinderParams, PeakList, find_peaks, nhr_ratio, non_hit_rejection
from .pipeline import (
    CompressedContainer,
    RoibinConfig,
    ThreadAlloc,
    compress,
    decompress,
    decompress_event,
)
from .roi import RoiSpec

ENV_PREFIX = "ROIBIN_"

_DEFAULTS = {
    "roi.window": "17",
    "roi.fill": "0.0",
    "roi.parallel_threshold": "65536",
    "bin.factor_rows": "2",
    "bin.factor_cols": "2",
    "codec.background": "pq",
    "codec.abs_error": "90.0",
    "codec.rel_error": "",
    "codec.pq_dims": "3",
    "codec.roi": "deflate:1",
    "pipeline.chunk_events": "16",
    "threads.roi": "1",
    "threads.bin": "1",
    "threads.codec": "1",
    "threads.roi_codec": "1",
    "threads.tasks": "1",
    "peakfind.window": "7",
    "peakfind.max_threshold": "300",
    "peakfind.member_floor": "0",
    "peakfind.total_floor": "600",
    "peakfind.snr_floor": "10",
    "peakfind.min_pixels": "2",
    "peakfind.max_pixels": "30",
    "nhr.min_peaks": "10",
}


def _env_overrides(environ=None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for key in _DEFAULTS:
        env_key = ENV_PREFIX + key.replace(".", "_").upper()
        if env_key in environ:
            out[key] = environ[env_key]
    return out


def _config_file_overrides(path: str) -> dict[str, str]:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise RoibinError(f"config file {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            dotted = f"{section}.{key}"
            if dotted not in _DEFAULTS:
                raise RoibinError(f"unknown config key [{section}] {key}")
            out[dotted] = value
    return out


def _effective(args, flag_map: dict[str, object]) -> dict[str, str]:
    eff = dict(_DEFAULTS)
    eff.update(_env_overrides())
    if getattr(args, "config", None):
        eff.update(_config_file_overrides(args.config))
    for key, value in flag_map.items():
        if value is not None:
            eff[key] = str(value)
    return eff


def _parse_codec(text: str, eff: dict[str, str], parser) -> CodecId:
    text = text.strip().lower()
    if text == "raw":
        return CodecId.raw()
    if text == "deflate" or text.startswith("deflate:"):
        level = int(text.split(":", 1)[1]) if ":" in text else 6
        return CodecId.deflate(level)
    if text == "pq":
        rel = eff["codec.rel_error"].strip()
        if rel:
            bound = ErrorBound.relative(float(rel))
        else:
            bound = ErrorBound.absolute(float(eff["codec.abs_error"]))
        return CodecId.pq(bound, dims_mode=int(eff["codec.pq_dims"]))
    parser.error(f"unknown codec {text!r}; expected pq, raw, or deflate[:LEVEL]")


def _build_roibin_config(eff: dict[str, str], parser) -> RoibinConfig:
    threads = ThreadAlloc(
        roi=int(eff["threads.roi"]),
        bin=int(eff["threads.bin"]),
        codec=int(eff["threads.codec"]),
        roi_codec=int(eff["threads.roi_codec"]),
        tasks=int(eff["threads.tasks"]),
    )
    roi = RoiSpec(
        window=int(eff["roi.window"]),
        fill=float(eff["roi.fill"]),
        parallel_threshold=int(eff["roi.parallel_threshold"]),
        threads=threads.roi,
    )
    spec = BinSpec(
        factor_rows=int(eff["bin.factor_rows"]),
        factor_cols=int(eff["bin.factor_cols"]),
        threads=threads.bin,
    )
    background = _parse_codec(eff["codec.background"], eff, parser)
    roi_codec = _parse_codec(eff["codec.roi"], eff, parser)
    if not roi_codec.lossless:
        parser.error("the ROI codec must be lossless (raw or deflate)")
    return RoibinConfig(
        roi=roi, bin=spec, background=background, roi_codec=roi_codec,
        chunk_events=int(eff["pipeline.chunk_events"]), threads=threads,
    )


def _peak_params(eff: dict[str, str]) -> PeakFinderParams:
    return PeakFinderParams(
        window=int(eff["peakfind.window"]),
        max_threshold=float(eff["peakfind.max_threshold"]),
        member_floor=float(eff["peakfind.member_floor"]),
        total_floor=float(eff["peakfind.total_floor"]),
        snr_floor=float(eff["peakfind.snr_floor"]),
        min_pixels=int(eff["peakfind.min_pixels"]),
        max_pixels=int(eff["peakfind.max_pixels"]),
    )


def _parse_dims(text: str, parser) -> Dims4:
    parts = text.split(",")
    if len(parts) != 4:
        parser.error("--dims must be E,P,R,C")
    return Dims4(*(int(p) for p in parts))


def _parse_bin(text: str, parser) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        parser.error("--bin must be FRxFC, e.g. 2x2")
    return int(parts[0]), int(parts[1])


def _load_batch(args, parser):
    """Load input as (batch, peaks_or_None). Accepts .rbsz for recompression."""
    if args.input.endswith(".rbsz"):
        container = CompressedContainer.load(args.input)
        batch = decompress(container)
        peaks = container.peak_anchors
        return batch, peaks
    if args.dims is None:
        parser.error("--dims E,P,R,C is required for raw input")
    dims = _parse_dims(args.dims, parser)
    with open(args.input, "rb") as fh:
        data = fh.read()
    if args.format == "f32":
        values = np.frombuffer(data, dtype="<f4")
        batch = identity_batch(values, dims)
    else:
        raw = ingest_raw(data, dims)
        if args.pedestal or args.gain:
            if not (args.pedestal and args.gain):
                parser.error("--pedestal and --gain must be given together")
            shape = dims.frame_shape
            n = shape[0] * shape[1] * shape[2]
            with open(args.pedestal, "rb") as fh:
                ped = np.frombuffer(fh.read(), dtype="<f4")
            with open(args.gain, "rb") as fh:
                gain = np.frombuffer(fh.read(), dtype="<f4")
            if ped.size != n or gain.size != n:
                raise RoibinError(
                    f"calibration files must hold {n} float32 values each"
                )
            cal = Calibration(pedestal=ped.reshape(shape), gain=gain.reshape(shape))
        else:
            shape = dims.frame_shape
            cal = Calibration(
                pedestal=np.zeros(shape, dtype=np.float32),
                gain=np.ones(shape, dtype=np.float32),
            )
        batch = calibrate(raw, cal)
    return batch, None


def _write_report(args, payload: dict) -> None:
    from .pipeline import VERSION

    payload = {"format_version": VERSION, **payload}
    text = json.dumps(payload, indent=2, default=_json_default) + "\n"
    if getattr(args, "report", None):
        with open(args.report, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json_default(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    raise TypeError(f"not JSON serializable: {type(value)}")


def cmd_compress(args, parser) -> int:
    flag_map = {
        "roi.window": args.roi_window,
        "codec.background": args.codec,
        "codec.abs_error": args.abs_error,
        "codec.rel_error": args.rel_error,
        "codec.pq_dims": args.pq_dims,
        "codec.roi": args.roi_codec,
        "pipeline.chunk_events": args.chunk,
        "threads.roi": args.threads_roi,
        "threads.bin": args.threads_bin,
        "threads.codec": args.threads_codec,
        "threads.roi_codec": args.threads_roi_codec,
        "threads.tasks": args.threads_tasks,
    }
    if args.bin is not None:
        fr, fc = _parse_bin(args.bin, parser)
        flag_map["bin.factor_rows"] = fr
        flag_map["bin.factor_cols"] = fc
    if args.abs_error is not None and args.rel_error is not None:
        parser.error("--abs-error and --rel-error are mutually exclusive")
    if args.abs_error is not None:
        flag_map["codec.rel_error"] = ""
    eff = _effective(args, flag_map)
    if args.tune_cache and os.path.exists(args.tune_cache):
        doc = tuner_mod.load_tuning(args.tune_cache)
        if doc.get("host") == tuner_mod.host_descriptor():
            for name, value in doc.get("winner", {}).items():
                key = f"threads.{name}"
                if key in _DEFAULTS and flag_map.get(key) is None:
                    eff[key] = str(value)
            print(f"using tuned allocation from {args.tune_cache}", file=sys.stderr)
        else:
            print(f"ignoring {args.tune_cache}: host mismatch", file=sys.stderr)
    cfg = _build_roibin_config(eff, parser)

    batch, peaks = _load_batch(args, parser)
    if args.peaks:
        with open(args.peaks) as fh:
            peaks = PeakList.from_csv(fh.read(), n_events=batch.dims.events)
    elif peaks is None:
        peaks = find_peaks(batch, _peak_params(eff))
    nhr_info = None
    if args.nhr is not None and args.nhr < 0:  # bare --nhr: configured default
        args.nhr = int(eff["nhr.min_peaks"])
    if args.nhr is not None:
        if not isinstance(peaks, PeakList):
            anchors = np.asarray(peaks)
            rows = [(int(a[0]), int(a[1]), int(a[2]), int(a[3]), 0.0, 0, 0.0)
                    for a in anchors]
            peaks = PeakList.from_rows(rows, batch.dims.events)
        total = batch.dims.events
        batch, peaks, kept_map = non_hit_rejection(batch, peaks, args.nhr)
        nhr_info = {
            "min_peaks": args.nhr,
            "total_events": total,
            "kept_events": batch.dims.events,
            "nhr_ratio": (nhr_ratio(total, batch.dims.events)
                          if batch.dims.events else None),
            "kept_event_map": kept_map,
        }

    container, report = compress(batch, peaks, cfg)
    container.save(args.out)
    payload = {
        "input": args.input,
        "output": args.out,
        "effective_config": eff,
        "report": report.to_dict(),
    }
    if nhr_info is not None:
        payload["nhr"] = nhr_info
    _write_report(args, payload)
    return 0


def cmd_decompress(args, parser) -> int:
    container = CompressedContainer.load(args.input)
    t0 = time.perf_counter()
    threads = ThreadAlloc(tasks=args.threads_tasks or 1)
    if args.event is not None:
        batch = decompress_event(container, args.event, threads=threads)
    else:
        batch = decompress(container, threads=threads)
    seconds = time.perf_counter() - t0
    with open(args.out, "wb") as fh:
        fh.write(batch.values.astype("<f4").tobytes())
    payload = {
        "input": args.input,
        "output": args.out,
        "dims": list(batch.dims.shape),
        "event": args.event,
        "seconds": seconds,
    }
    _write_report(args, payload)
    return 0


def cmd_tune(args, parser) -> int:
    space = tuner_mod.TuneSpace.default(max_tasks=args.max_tasks,
                                        max_threads=args.max_threads)
    if args.cache and os.path.exists(args.cache) and not args.force:
        doc = tuner_mod.load_tuning(args.cache)
        same_space = [tuple(d) for d in doc.get("space", [])] == list(space.dims)
        if doc.get("host") == tuner_mod.host_descriptor() and same_space:
            print(f"reusing cached tuning from {args.cache}", file=sys.stderr)
            sys.stdout.write(json.dumps(doc["winner"], indent=2) + "\n")
            return 0
    if args.input:
        batch, peaks = _load_batch(args, parser)
        if peaks is None:
            eff = _effective(args, {})
            peaks = find_peaks(batch, _peak_params(eff))
    else:
        params = bench_mod.SynthParams(
            dims=Dims4(args.events, 1, args.rows, args.cols),
            n_peaks=(1, 2), min_separation=16, seed=args.seed,
        )
        batch, peaks = bench_mod.generate(params)
    eff = _effective(args, {})
    base = _build_roibin_config(eff, parser)

    def objective(assignment: dict[str, int]) -> float:
        threads = ThreadAlloc(**assignment)
        cfg = RoibinConfig(
            roi=RoiSpec(base.roi.window, base.roi.fill,
                        base.roi.parallel_threshold, threads.roi),
            bin=BinSpec(base.bin.factor_rows, base.bin.factor_cols, threads.bin),
            background=base.background, roi_codec=base.roi_codec,
            chunk_events=base.chunk_events, threads=threads,
        )
        t0 = time.perf_counter()
        compress(batch, peaks, cfg, measure_errors=False)
        return time.perf_counter() - t0

    budget = (tuner_mod.TuneBudget(max_evals=args.budget) if args.budget
              else tuner_mod.TuneBudget.for_space(space))
    result = tuner_mod.tune(space, objective, budget=budget, seed=args.seed)
    if args.cache:
        tuner_mod.save_tuning(args.cache, result)
        print(f"wrote tuning cache {args.cache}", file=sys.stderr)
    sys.stdout.write(json.dumps(result.assignment, indent=2) + "\n")
    return 0


def cmd_grid(args, parser) -> int:
    params = bench_mod.SynthParams(
        dims=Dims4(args.events, 1, args.rows, args.cols),
        n_peaks=(args.min_peaks, args.max_peaks),
        seed=args.seed,
        background_mean=args.background_mean,
        structure_amplitude=args.structure_amplitude,
    )
    batch, peaks = bench_mod.generate(params)
    eff = _effective(args, {})
    base = _build_roibin_config(eff, parser)
    rows = bench_mod.run_grid(bench_mod.GridSearchPlan(), batch, peaks, base)
    sys.stdout.write(bench_mod.grid_csv(rows))
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(bench_mod.grid_json(rows))
    return 0


def cmd_bench(args, parser) -> int:
    params = bench_mod.SynthParams(
        dims=Dims4(args.events, 1, args.rows, args.cols),
        n_peaks=(args.min_peaks, args.max_peaks),
        seed=args.seed,
        background_mean=args.background_mean,
        structure_amplitude=args.structure_amplitude,
    )
    batch, peaks = bench_mod.generate(params)
    eff = _effective(args, {})
    base = _build_roibin_config(eff, parser)
    cfgs = {
        "roibin-pq": base,
        "roibin-deflate9": RoibinConfig(
            roi=base.roi, bin=base.bin, background=CodecId.deflate(9),
            roi_codec=base.roi_codec, chunk_events=base.chunk_events,
            threads=base.threads,
        ),
        "deflate9-whole-frame": RoibinConfig(
            roi=base.roi, bin=BinSpec(1, 1, threads=base.threads.bin),
            background=CodecId.deflate(9), roi_codec=base.roi_codec,
            chunk_events=base.chunk_events, threads=base.threads,
        ),
    }
    report = bench_mod.run_throughput(cfgs, batch, peaks, reps=args.reps)
    sys.stdout.write(report.to_csv())
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(report.to_json())
    return 0


def cmd_metrics(args, parser) -> int:
    i1 = metrics_mod.read_intensity_csv(args.i1)
    i2 = metrics_mod.read_intensity_csv(args.i2)
    k = args.k
    values = {
        "n": int(i1.size),
        "rsplit": metrics_mod.rsplit(i1, i2, k=k),
        "cc_half": metrics_mod.cc_half(i1, i2),
        "r_factor": metrics_mod.r_factor(i1, i2),
        "psnr_db": metrics_mod.psnr(i1, i2),
        "mpe_percent": metrics_mod.mpe(i1, i2, floor=args.floor),
    }
    max_abs, idx = metrics_mod.max_errors(i1, i2)
    values["max_abs_error"] = max_abs
    values["max_abs_error_index"] = idx
    if args.table:
        sys.stdout.write(metrics_mod.report_table(values))
    else:
        sys.stdout.write(metrics_mod.report_json(values))
    return 0


def cmd_synth(args, parser) -> int:
    dims = Dims4(args.events, args.panels, args.rows, args.cols)
    params = bench_mod.SynthParams(
        dims=dims,
        n_peaks=(args.min_peaks, args.max_peaks),
        seed=args.seed,
        background_mean=args.background_mean,
        structure_amplitude=args.structure_amplitude,
    )
    batch, peaks = bench_mod.generate(params)
    with open(args.out, "wb") as fh:
        fh.write(batch.values.astype("<f4").tobytes())
    if args.peaks_out:
        with open(args.peaks_out, "w") as fh:
            fh.write(peaks.to_csv())
    print(
        f"wrote {args.out} ({batch.values.size} float32 values, dims "
        f"{','.join(str(s) for s in dims.shape)}, {len(peaks)} planted peaks)",
        file=sys.stderr,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roibin",
        description="ROI-preserving compression toolkit for detector data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="INI-style config file")

    def add_thread_flags(p):
        p.add_argument("--threads-roi", type=int)
        p.add_argument("--threads-bin", type=int)
        p.add_argument("--threads-codec", type=int)
        p.add_argument("--threads-roi-codec", dest="threads_roi_codec", type=int)
        p.add_argument("--threads-tasks", type=int)

    p = sub.add_parser("compress", help="compress a raw or .rbsz input")
    add_common(p)
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output .rbsz path")
    p.add_argument("--dims", help="E,P,R,C extents of the raw input")
    p.add_argument("--format", choices=("u16", "f32"), default="u16",
                   help="raw input sample type (default little-endian uint16)")
    p.add_argument("--pedestal", help="float32 pedestal map file")
    p.add_argument("--gain", help="float32 gain map file")
    p.add_argument("--peaks", help="peak CSV (event,panel,row,col,total,npix,snr)")
    p.add_argument("--nhr", type=int, nargs="?", const=-1,
                   help="drop events with fewer peaks than this "
                        "(bare flag uses the configured threshold, default 10)")
    p.add_argument("--bin", help="bin factors FRxFC, e.g. 2x2")
    p.add_argument("--abs-error", type=float, help="absolute bound (ADU)")
    p.add_argument("--rel-error", type=float, help="value-range-relative bound")
    p.add_argument("--pq-dims", type=int, choices=(1, 2, 3))
    p.add_argument("--chunk", type=int, help="events per chunk")
    p.add_argument("--roi-window", type=int)
    p.add_argument("--codec", help="background codec: pq | raw | deflate[:L]")
    p.add_argument("--roi-codec", help="ROI codec: raw | deflate[:L]")
    p.add_argument("--tune-cache", help="JSON tuning cache to read thread counts from")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    add_thread_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decompress an .rbsz container")
    add_common(p)
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output float32 path")
    p.add_argument("--event", type=int, help="extract a single event")
    p.add_argument("--threads-tasks", type=int)
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("tune", help="search thread allocations on a sample")
    add_common(p)
    p.add_argument("--input", help="sample raw file (else synthetic data)")
    p.add_argument("--dims", help="E,P,R,C for --input")
    p.add_argument("--format", choices=("u16", "f32"), default="u16")
    p.add_argument("--pedestal")
    p.add_argument("--gain")
    p.add_argument("--events", type=int, default=8)
    p.add_argument("--rows", type=int, default=128)
    p.add_argument("--cols", type=int, default=128)
    p.add_argument("--max-tasks", type=int, default=40)
    p.add_argument("--max-threads", type=int, default=8)
    p.add_argument("--budget", type=int, help="override the sqrt(n) budget")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache", help="JSON cache path to reuse/update")
    p.add_argument("--force", action="store_true", help="re-measure even if cached")
    p.set_defaults(func=cmd_tune)

    def add_synth_flags(p, events=64):
        p.add_argument("--events", type=int, default=events)
        p.add_argument("--rows", type=int, default=512)
        p.add_argument("--cols", type=int, default=512)
        p.add_argument("--min-peaks", type=int, default=4)
        p.add_argument("--max-peaks", type=int, default=16)
        p.add_argument("--background-mean", type=float, default=20.0)
        p.add_argument("--structure-amplitude", type=float, default=0.0,
                       help="event-invariant detector texture, ADU")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("grid", help="grid search over binning/tolerance/dims")
    add_common(p)
    add_synth_flags(p)
    p.add_argument("--json", help="also write JSON rows here")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("bench", help="throughput and scaling measurements")
    add_common(p)
    add_synth_flags(p, events=32)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--json", help="also write the JSON report here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("metrics", help="quality metrics over two intensity CSVs")
    add_common(p)
    p.add_argument("i1")
    p.add_argument("i2")
    p.add_argument("--k", type=float, help="explicit scale factor (default: fit)")
    p.add_argument("--floor", type=float, default=1e-6)
    p.add_argument("--table", action="store_true", help="text table instead of JSON")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="write a synthetic calibrated f32 stream")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--peaks-out", help="write the planted peak CSV here")
    p.add_argument("--panels", type=int, default=1)
    add_synth_flags(p, events=16)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, parser)
    except SystemExit as exc:  # parser.error inside a command
        return int(exc.code or 0)
    except OSError as exc:
        print(f"roibin: i/o error: {exc}", file=sys.stderr)
        return 4
    except RoibinError as exc:
        print(f"roibin: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
