"""Command-line interface: ``isaclab {gen,check,simulate,bench-overhead,search}``.

Exit codes: 0 success or pass, 1 semantic failure (check failed, target
missed), 2 usage error, internal error or checker/oracle disagreement.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .checker import (SearchConstraints, check, collision_oracle, oracle_y_max,
                      search_patterns)
from .eap import (EQUAL_TOL, SidePeak, Window, extract_peaks, predict_side_peaks,
                  unambiguous_regions)
from .patterns import (CombPattern, IrregularPattern, OfdmNumerology, PatternError,
                       SequenceSpec, SynthesizedPattern, dump_pattern, load_pattern,
                       make_scheme, overhead, pattern_to_dict, realize_grid, to_irregular)
from .sensing import (DelayDopplerGrid, build_dictionary, delay_sum_af, iaa_2d, music_2d,
                      periodogram, periodogram_2dfft, snapshot_pattern)
from .waveform import (Target, apply_channel_freq, apply_channel_time, extended_gi_front_end,
                       load_scene, model_error, modulate, scene_to_dict)

log = logging.getLogger("isaclab")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def bundled_patterns() -> list[Path]:
    root = resources.files("isaclab") / "data"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def _dump(obj, fh=None) -> None:
    fh = fh or sys.stdout
    fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _default_n(pattern, doc: dict) -> int:
    """Bandwidth used to expand a pattern when the file does not pin one."""
    n = doc.get("N")
    if isinstance(n, list):
        n = max(n)
    if n:
        return int(n)
    if isinstance(pattern, IrregularPattern):
        return max(d for _, ds in pattern.symbols for d in ds) + 1
    comb = pattern.comb if isinstance(pattern, SynthesizedPattern) else pattern
    top = 0
    if isinstance(pattern, SynthesizedPattern):
        top = pattern.C_1 + (pattern.U_F - 1) * pattern.S_F + 1
    return max(4 * comb.S_sub, top)


# --- gen ----------------------------------------------------------------

def cmd_gen(args) -> int:
    pat = make_scheme(args.scheme, args.s_sub, args.s_sym, args.m, args.p, args.f0)
    extra = {}
    if args.expand:
        extra["irregular"] = pattern_to_dict(to_irregular(pat, args.expand))
        extra["N"] = args.expand
    text = dump_pattern(pat, scheme=args.scheme.upper(), **extra)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


# --- check --------------------------------------------------------------

def cmd_check(args) -> int:
    pat, doc = load_pattern(args.pattern)
    res = check(pat)
    out = {"pattern": doc.get("name", str(args.pattern)), "check": res.to_dict()}
    code = EXIT_OK if res.passed else EXIT_FAIL
    if args.oracle:
        N = args.n or _default_n(pat, doc)
        cols = collision_oracle(to_irregular(pat, N), y_max=oracle_y_max(pat))
        agree = res.passed == (not cols)
        out["oracle"] = cols.to_dict()
        out["oracle"]["N"] = N
        out["agree"] = agree
        if not agree:
            code = EXIT_ERROR
    _dump(out)
    return code


# --- bench-overhead -----------------------------------------------------

def overhead_rows(paths: Sequence[Path], n_override: int | None = None,
                  table_only: bool = False) -> list[dict]:
    rows = []
    for path in paths:
        pat, doc = load_pattern(path)
        if table_only and not doc.get("overhead_table"):
            continue
        ns = [n_override] if n_override else doc.get("N") or [_default_n(pat, doc)]
        ns = ns if isinstance(ns, list) else [ns]
        for N in ns:
            flag = ""
            if isinstance(pat, IrregularPattern):
                irr = pat
                top = max(d for _, ds in irr.symbols for d in ds)
                if top >= N:
                    flag = f"offset {top} >= N"
            else:
                irr = to_irregular(pat, N)
            rows.append({"pattern": doc.get("name", Path(path).stem), "N": N,
                         "res": irr.n_res, "span": irr.span,
                         "overhead_pct": round(100 * overhead(irr, N), 4), "note": flag})
    return rows


def cmd_bench_overhead(args) -> int:
    paths = [Path(p) for p in args.patterns] or bundled_patterns()
    rows = overhead_rows(paths, args.n, table_only=not args.patterns and not args.all)
    if args.json:
        _dump(rows)
        return EXIT_OK
    print(f"{'pattern':<28}{'N':>5}{'REs':>6}{'span':>6}{'overhead %':>12}  note")
    for r in rows:
        print(f"{r['pattern']:<28}{r['N']:>5}{r['res']:>6}{r['span']:>6}"
              f"{r['overhead_pct']:>12.2f}  {r['note']}")
    return EXIT_OK


# --- search -------------------------------------------------------------

def _range(text: str) -> tuple[int, int]:
    a, _, b = text.partition(":")
    return int(a), int(b or a)


def cmd_search(args) -> int:
    c = SearchConstraints(family=args.family, S_sub=_range(args.s_sub), S_sym=_range(args.s_sym),
                          M=_range(args.m), max_symbols=args.max_symbols, max_res=args.max_res,
                          max_offset=args.max_offset, N=args.n, U=_range(args.u),
                          U_F=_range(args.u_f), S_PT=_range(args.s_pt), S_F=_range(args.s_f),
                          limit=args.limit)
    hits = search_patterns(c)
    _dump([{"res": h.n_res, "span": h.span, "pattern": pattern_to_dict(h.pattern)} for h in hits])
    return EXIT_OK


# --- simulate -----------------------------------------------------------

def parse_numerology(text: str | None) -> OfdmNumerology:
    if not text:
        return OfdmNumerology()
    parts = [p for p in text.replace(";", ",").split(",") if p]
    N = int(parts[0])
    Ncp = int(parts[1]) if len(parts) > 1 else N // 16
    scs = float(parts[2]) if len(parts) > 2 else 15e3
    return OfdmNumerology(N, Ncp, scs)


def _symbol_step(irr: IrregularPattern) -> int:
    g = 0
    for s, _ in irr.symbols[1:]:
        g = np.gcd(g, s - irr.symbols[0][0])
    return int(g) or 1


def _fmt(x: float) -> float:
    # fixed precision keeps reports stable against last-bit noise
    return float(f"{x:.10g}")


def _peak_dict(p: SidePeak) -> dict:
    return {"tau_s": _fmt(p.tau), "doppler_hz": _fmt(p.doppler), "level": _fmt(p.level)}


def simulate(pattern, targets: Sequence[Target], num: OfdmNumerology, algo: str,
             gi_l: int = 0, snr_db: float | None = None, seed: int = 0,
             tau_step: float | None = None, f_step: float | None = None,
             threshold_db: float = -13.0, workers: int = 1, iterations: int = 15,
             snapshots: int = 8, backend: str = "time") -> tuple[dict, object, object]:
    """Run one scene; returns ``(report, spectrum, snapshot)``."""
    irr = to_irregular(pattern, num.N)
    grid_rs = realize_grid(pattern, num, SequenceSpec("zc"))
    step = _symbol_step(irr)
    period = 1.0 / (step * num.T)
    seeds = np.random.SeedSequence(seed).spawn(2 + snapshots)
    report: dict = {"algorithm": algo, "gi_l": gi_l, "seed": seed,
                    "numerology": num.to_dict(), "pattern": pattern_to_dict(pattern),
                    "overhead": _fmt(overhead(irr, num.N))}

    def receive(tg, rng, snr):
        if backend == "freq":
            return apply_channel_freq(grid_rs, tg, snr, rng)
        rx = apply_channel_time(modulate(grid_rs), tg, snr, rng)
        return extended_gi_front_end(rx, grid_rs, gi_l)

    if algo == "delay-sum":
        sig = modulate(grid_rs)
        grid = DelayDopplerGrid.uniform(tau_step or num.T_s / num.N, num.T_s,
                                        f_step or period / (4 * irr.G), -period / 2, period / 2)
        spec = delay_sum_af(sig, grid)
        peaks = extract_peaks(spec, threshold_db, num.T_s, period)
        report["side_peaks"] = [_peak_dict(p) for p in peaks]
        if isinstance(pattern, CombPattern):
            win = Window(num.T_s, -period / 2, period / 2)
            report["predicted"] = [_peak_dict(p) for p in
                                   predict_side_peaks(pattern, "delay_sum", num, win)]
        return report, spec, None

    snap = receive(targets, np.random.default_rng(seeds[0]), snr_db)
    if targets:
        clean = receive(targets, None, None)
        report["model_error"] = _fmt(model_error(clean, apply_channel_freq(grid_rs, targets)))
    n_res = irr.n_res
    if algo == "fft2d":
        if tau_step is None and f_step is None:
            try:
                spec = periodogram_2dfft(snap, 4, 4)
            except PatternError:
                spec = periodogram(snap, DelayDopplerGrid.default(num, irr.G, step))
        else:
            spec = periodogram(snap, DelayDopplerGrid.default(num, irr.G, step, tau_step, f_step))
        reference = float(n_res) ** 2
    elif algo in ("iaa", "music"):
        grid = DelayDopplerGrid.default(num, irr.G, step, tau_step, f_step)
        D = build_dictionary(snapshot_pattern(snap), num, grid)
        if algo == "iaa":
            spec, info = iaa_2d(snap, D, iterations, workers=workers, return_info=True)
            report["iaa_max_rel_change"] = _fmt(info.max_rel_change)
            reference = 1.0
        else:
            snaps = []
            for k in range(snapshots):
                r = np.random.default_rng(seeds[2 + k])
                # fluctuating amplitudes decorrelate the targets across snapshots
                tg = [Target(t.tau, t.doppler, t.alpha * np.exp(2j * np.pi * r.random()))
                      for t in targets]
                snaps.append(receive(tg, r, snr_db))
            H = len(targets)
            spec = music_2d(snaps, D, H, loading=1e-9, workers=workers)
            reference = None
    else:
        raise PatternError(f"unknown algorithm {algo!r}")

    if not targets and reference is None:
        reference = float(spec.values.max())
    peaks = extract_peaks(spec, threshold_db, num.T_s, period, include_mainlobe=True,
                          reference=reference if not targets or algo != "music" else None)
    g = spec.grid
    dt = g.taus[1] - g.taus[0]
    dfb = g.freqs[1] - g.freqs[0]

    def near(p: SidePeak, t: Target) -> bool:
        et = abs(((p.tau - t.tau) + num.T_s / 2) % num.T_s - num.T_s / 2)
        ef = abs(((p.doppler - t.doppler) + period / 2) % period - period / 2)
        return et <= dt * (1 + 1e-9) and ef <= dfb * (1 + 1e-9)

    mains, missed = [], []
    for t in targets:
        cands = [p for p in peaks if near(p, t)]
        if cands:
            best = max(cands, key=lambda p: p.level)
            mains.append({"target": {"tau_s": _fmt(t.tau), "doppler_hz": _fmt(t.doppler)},
                          "peak": _peak_dict(best)})
        else:
            missed.append({"tau_s": _fmt(t.tau), "doppler_hz": _fmt(t.doppler)})
    side = [p for p in peaks if not any(near(p, t) for t in targets)]
    floor = min((m["peak"]["level"] for m in mains), default=np.inf)
    equal = [p for p in side if p.level >= floor * (1 - EQUAL_TOL)]
    report.update({
        "mainlobes": mains,
        "missed_targets": missed,
        "side_peaks": [_peak_dict(p) for p in side],
        "equal_level_side_peaks": [_peak_dict(p) for p in equal],
        "grid": {"tau_step_s": _fmt(dt), "f_step_hz": _fmt(dfb), "shape": list(g.shape)},
    })
    if isinstance(pattern, CombPattern):
        win = Window(num.T_s, -period / 2, period / 2)
        kind = "super_res" if algo in ("iaa", "music") else "fft2d"
        pred = predict_side_peaks(pattern, kind, num, win)
        report["regions"] = [{"tau_max_s": _fmt(a), "f_max_hz": _fmt(b)}
                             for a, b in unambiguous_regions(pred, win)]
    return report, spec, snap


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "log.txt", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("isaclab").addHandler(handler)
    logging.getLogger("isaclab").setLevel(logging.DEBUG)
    try:
        pat, doc = load_pattern(args.pattern)
        num = parse_numerology(args.numerology)
        if args.scene:
            targets, snr = load_scene(args.scene)
        else:
            targets, snr = [], None
        if args.snr_db is not None:
            snr = args.snr_db
        config = {"pattern": str(args.pattern), "pattern_doc": doc, "numerology": num.to_dict(),
                  "scene": scene_to_dict(targets, snr), "algo": args.algo, "gi_l": args.gi_l,
                  "grid_tau_step": args.grid_tau_step, "grid_f_step": args.grid_f_step,
                  "seed": args.seed, "threshold_db": args.threshold_db,
                  "iterations": args.iterations, "snapshots": args.snapshots,
                  "backend": args.backend, "version": __version__}
        (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
        t0 = time.perf_counter()
        report, spec, snap = simulate(pat, targets, num, args.algo, args.gi_l, snr, args.seed,
                                      args.grid_tau_step, args.grid_f_step, args.threshold_db,
                                      args.workers, args.iterations, args.snapshots, args.backend)
        log.info("simulation finished in %.2f s with %d workers",
                 time.perf_counter() - t0, args.workers)
        spec.write(out / "spectrum.csv", out / "spectrum.json")
        if snap is not None:
            np.save(out / "snapshot.npy", snap.data)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        log.info("missed targets: %d, equal-level side peaks: %d",
                 len(report.get("missed_targets", [])),
                 len(report.get("equal_level_side_peaks", [])))
    finally:
        logging.getLogger("isaclab").removeHandler(handler)
        handler.close()
    _dump({"out": str(out), "missed_targets": report.get("missed_targets", []),
           "equal_level_side_peaks": len(report.get("equal_level_side_peaks", []))})
    return EXIT_FAIL if report.get("missed_targets") else EXIT_OK


# --- parser -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isaclab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a staggered comb pattern")
    g.add_argument("--scheme", required=True, choices=list("ABCDEabcde"))
    g.add_argument("--s-sub", type=int, required=True, help="comb size")
    g.add_argument("--s-sym", type=int, default=1, help="symbol spacing of RS symbols")
    g.add_argument("--m", type=int, help="number of RS symbols (scheme default if omitted)")
    g.add_argument("--p", type=int, default=1, help="stagger slope for scheme D, coprime to S_sub")
    g.add_argument("--f0", type=int, default=0, help="offset of the first RS symbol")
    g.add_argument("--expand", type=int, metavar="N", help="also emit the irregular form for N subcarriers")
    g.add_argument("--out", help="write JSON here instead of stdout")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("check", help="run the anti-condition checker")
    c.add_argument("pattern", nargs="?")
    c.add_argument("--pattern", dest="pattern_opt")
    c.add_argument("--oracle", action="store_true", help="cross-check against the collision oracle")
    c.add_argument("--n", type=int, help="subcarriers used to expand combs for the oracle")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="simulate a scene and write a run directory")
    s.add_argument("--pattern", required=True)
    s.add_argument("--scene", help="JSON target list; omitted means an empty scene")
    s.add_argument("--numerology", help="N[,N_cp[,scs_hz]]")
    s.add_argument("--algo", default="fft2d", choices=["delay-sum", "fft2d", "iaa", "music"])
    s.add_argument("--gi-l", type=int, default=0, help="guard-interval extension in comb periods")
    s.add_argument("--grid-tau-step", type=float, help="delay grid step in seconds")
    s.add_argument("--grid-f-step", type=float, help="Doppler grid step in Hz")
    s.add_argument("--snr-db", type=float, help="overrides the scene SNR")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold-db", type=float, default=-13.0, help="peak threshold")
    s.add_argument("--iterations", type=int, default=15, help="IAA iterations")
    s.add_argument("--snapshots", type=int, default=8, help="MUSIC snapshots")
    s.add_argument("--backend", choices=["time", "freq"], default="time",
                   help="sample-level channel or ideal post-FFT model")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=int(os.environ.get("ISACLAB_WORKERS", "1")))
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench-overhead", help="tabulate RS overhead")
    b.add_argument("patterns", nargs="*")
    b.add_argument("--n", type=int, help="override the subcarrier count of every pattern")
    b.add_argument("--all", action="store_true", help="include every bundled pattern")
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench_overhead)

    q = sub.add_parser("search", help="enumerate passing patterns")
    q.add_argument("--family", choices=["comb", "synth", "irregular"], default="comb")
    q.add_argument("--s-sub", default="4", help="range a:b, or a single value")
    q.add_argument("--s-sym", default="1")
    q.add_argument("--m", default="1:4")
    q.add_argument("--max-symbols", type=int, default=8)
    q.add_argument("--max-res", type=int)
    q.add_argument("--max-offset", type=int, default=8)
    q.add_argument("--n", type=int, default=60, help="subcarriers for expansion")
    q.add_argument("--u", default="1:3")
    q.add_argument("--u-f", default="1:2")
    q.add_argument("--s-pt", default="1:3")
    q.add_argument("--s-f", default="1:3")
    q.add_argument("--limit", type=int)
    q.set_defaults(func=cmd_search)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "cmd", None) == "check":
        args.pattern = args.pattern or args.pattern_opt
        if not args.pattern:
            ap.error("check needs a pattern file")
    try:
        return args.func(args)
    except (PatternError, ValueError, OSError) as exc:
        print(f"isaclab {args.cmd}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
