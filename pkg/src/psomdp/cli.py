"""psomdp command line: solve, bounds, bench, counterexample, render.

Exit codes: 0 ok, 1 bad input, 2 solve failure, 3 property not exhibited.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name, set_threads
from .bnb import BnbConfig, solve_bnb
from .bounds import (
    CheckinSet,
    SuffixSpec,
    lower_bound_suffix,
    omniscient_values,
    upper_bound_divisor,
    upper_bound_general,
)
from .domains import (
    ACTION_NAMES,
    GridSpec,
    build_counterexample,
    builtin,
    load_gridspec,
    resolve_model,
)
from .errors import (
    CapacityExceeded,
    InternalEmptyFrontier,
    NoActionsAvailable,
    NonComposableB,
    NonConvergence,
    NopUnavailable,
    NotADivisor,
    ParseError,
    PsoMdpError,
    TooLarge,
    ValidationError,
)
from .model import DEFAULT_BUDGET_BYTES
from .solver import SolverConfig, solve_composite

EXIT_OK, EXIT_INPUT, EXIT_SOLVE, EXIT_PROPERTY = 0, 1, 2, 3
WITNESS_MARGIN = 1e-6
ARROWS = {0: "↑", 1: "↓", 2: "←", 3: "→", 4: "·"}

_INPUT_ERRORS = (ValidationError, NonComposableB, NotADivisor, NopUnavailable)
_SOLVE_ERRORS = (NonConvergence, CapacityExceeded, TooLarge, NoActionsAvailable,
                 InternalEmptyFrontier)


class CliError(Exception):
    def __init__(self, msg, code=EXIT_INPUT):
        super().__init__(msg)
        self.code = code


def _threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("PSOMDP_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"PSOMDP_THREADS must be an integer, got {env!r}") from None
    return None


def _solver_config(args):
    return SolverConfig(tolerance=args.tolerance, threads=_threads(args),
                        max_iterations=getattr(args, "max_iterations", 100_000))


def _budget(args):
    mb = getattr(args, "budget_mb", None)
    return DEFAULT_BUDGET_BYTES if mb is None else int(mb * 2**20)


def _load(args):
    model, spec = resolve_model(args.model, args.k, args.gamma)
    return model, spec


def _meta(model, method, args, **extra):
    meta = {
        "model_hash": model.model_hash(),
        "model": getattr(args, "model", None),
        "k": model.checkin_period,
        "gamma": model.discount,
        "method": method,
        "tolerance": getattr(args, "tolerance", None),
        "version": __version__,
        "backend": backend_name(),
        "threads": _threads(args),
    }
    meta.update(extra)
    return meta


def _run_method(model, method, config, budget, suffix=None):
    if method == "naive":
        sol = solve_composite(model, config, budget_bytes=budget)
        sol.stats["method"] = "naive"
        sol.stats["pruned_fraction"] = 0.0
        sol.stats["total_seconds"] = sol.stats["formulate_seconds"] + sol.stats["solve_seconds"]
        return sol
    sol, _ = solve_bnb(model, BnbConfig(solver=config, budget_bytes=budget, suffix=suffix))
    return sol


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _write_csv(path, header, rows, meta=None):
    if path in (None, "-"):
        w = csv.writer(sys.stdout, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)
        return
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    if meta is not None:
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


# ------------------------------------------------------------------ solve


def cmd_solve(args) -> int:
    model, _ = _load(args)
    config = _solver_config(args)
    suffix = SuffixSpec.parse(args.suffix) if args.suffix else None
    t0 = time.perf_counter()
    sol = _run_method(model, args.method, config, _budget(args), suffix)
    wall = time.perf_counter() - t0
    A = model.num_actions
    out = {
        "values": sol.values.tolist(),
        "policy": sol.policy_actions(A),
        "stats": {k: v for k, v in sol.stats.items() if np.isscalar(v) or v is None},
        "meta": _meta(model, args.method, args),
    }
    if args.include_q:
        out["q"] = [[[seq.decode(A), v] for seq, v in sol.q.items(s)]
                    for s in range(model.num_states)]
    if args.out:
        Path(args.out).write_text(json.dumps(out, allow_nan=False), encoding="utf-8")
    start = int(model.meta.get("start_state", 0))
    names = [ACTION_NAMES[a] if A <= len(ACTION_NAMES) else str(a)
             for a in sol.policy[start].decode(A)]
    print(f"method={args.method} k={model.checkin_period} gamma={model.discount} "
          f"states={model.num_states} backend={backend_name()}")
    print(f"U(start=s{start}) = {sol.values[start]:.10f}  first sequence: {' '.join(names)}")
    print(f"time: total {wall:.4f}s  formulate {sol.stats.get('formulate_seconds', 0.0):.4f}s  "
          f"solve {sol.stats.get('solve_seconds', 0.0):.4f}s  "
          f"pruned_fraction {sol.stats.get('pruned_fraction', 0.0):.4f}")
    return EXIT_OK


# ----------------------------------------------------------------- bounds


def _parse_int_list(text, what):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"{what} must be a comma-separated list of integers, got {text!r}") from None


def cmd_bounds(args) -> int:
    model, _ = _load(args)
    config = _solver_config(args)
    A, k = model.num_actions, model.checkin_period
    rows = []

    omni = omniscient_values(model, config)
    rows += [(s, "omniscient", "", repr(float(v))) for s, v in enumerate(omni)]

    upper = None
    if args.upper_B is not None:
        cs = CheckinSet(frozenset(_parse_int_list(args.upper_B, "--upper-B")), k)
        upper = upper_bound_general(model, cs, config).start
    elif args.upper_ell is not None:
        upper = upper_bound_divisor(model, args.upper_ell, config)
    if upper is not None:
        for s in range(model.num_states):
            rows += [(s, "upper_prefix", json.dumps(seq.decode(A)), repr(v))
                     for seq, v in upper.items(s)]

    if args.lower_tau is not None:
        suffix = SuffixSpec.parse(args.lower_suffix) if args.lower_suffix else None
        q_lb, u_lb = lower_bound_suffix(model, args.lower_tau, suffix, config)
        for s in range(model.num_states):
            rows += [(s, "lower_prefix", json.dumps(seq.decode(A)), repr(v))
                     for seq, v in q_lb.items(s)]
        rows += [(s, "lower_state", "", repr(float(v))) for s, v in enumerate(u_lb)]

    rows.sort(key=lambda r: r[0])
    meta = _meta(model, "bounds", args, upper_B=args.upper_B, upper_ell=args.upper_ell,
                 lower_tau=args.lower_tau, lower_suffix=args.lower_suffix)
    _write_csv(args.out, ["state", "kind", "key", "value"], rows, meta)
    return EXIT_OK


# ------------------------------------------------------------------ bench

BENCH_HEADER = ["k", "method", "repeat", "formulate_seconds", "solve_seconds", "total_seconds",
                "pruned_fraction", "value_checksum", "status"]


def value_checksum(values) -> str:
    return f"{round(float(np.sum(values)), 6):.6f}"


def cmd_bench(args) -> int:
    base, _ = _load(args)
    config = _solver_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in ("naive", "bnb"):
            raise CliError(f"unknown method {m!r}")
    rows = []
    for k in _parse_int_list(args.k_list, "--k-list"):
        model = base.replace(checkin_period=k)
        for rep in range(args.repeats):
            for method in methods:
                t0 = time.perf_counter()
                try:
                    sol = _run_method(model, method, config, _budget(args))
                except (PsoMdpError, MemoryError) as exc:
                    total = time.perf_counter() - t0
                    rows.append([k, method, rep, "", "", f"{total:.6f}", "", "",
                                 type(exc).__name__])
                    print(f"k={k} {method} repeat={rep}: {exc}", file=sys.stderr)
                    continue
                total = time.perf_counter() - t0
                st = sol.stats
                rows.append([k, method, rep, f"{st['formulate_seconds']:.6f}",
                             f"{st['solve_seconds']:.6f}", f"{total:.6f}",
                             f"{st.get('pruned_fraction', 0.0):.6f}",
                             value_checksum(sol.values), "ok"])
                print(f"k={k} {method:5s} repeat={rep} total={total:.4f}s "
                      f"pruned={st.get('pruned_fraction', 0.0):.3f} "
                      f"checksum={value_checksum(sol.values)}", file=sys.stderr)
    _write_csv(args.out, BENCH_HEADER, rows,
               _meta(base, "bench", args, k_list=args.k_list, repeats=args.repeats,
                     methods=methods))
    return EXIT_OK


# --------------------------------------------------------- counterexample


def counterexample_report(gamma: float, config: SolverConfig | None = None) -> dict:
    """Solve the counterexample corridor at k=2 and k=3 and collect per-cell deltas."""
    m2 = build_counterexample("k2", gamma)
    m3 = build_counterexample("k3", gamma)
    u2 = solve_composite(m2, config).values
    u3 = solve_composite(m3, config).values
    spec = GridSpec.from_dict(m2.meta["grid"])
    cells = spec.free_cells()
    delta = (u3 - u2)[: len(cells)]
    order = np.argsort(-delta, kind="stable")
    witnesses = [{"cell": list(cells[i]), "state": int(i), "u_k2": float(u2[i]),
                  "u_k3": float(u3[i]), "delta": float(delta[i])}
                 for i in order if delta[i] > WITNESS_MARGIN]
    return {
        "gamma": gamma,
        "layout_hash": m2.model_hash(include_params=False),
        "layout_hash_k3": m3.model_hash(include_params=False),
        "hash_k2": m2.model_hash(),
        "hash_k3": m3.model_hash(),
        "spec": spec.to_dict(),
        "cells": [list(c) for c in cells],
        "u_k2": u2.tolist(),
        "u_k3": u3.tolist(),
        "delta": delta.tolist(),
        "witnesses": witnesses,
    }


def cmd_counterexample(args) -> int:
    gamma = builtin("counterexample").gamma if args.gamma is None else args.gamma
    rep = counterexample_report(gamma, _solver_config(args))
    spec = GridSpec.from_dict(rep["spec"])
    same = rep["layout_hash"] == rep["layout_hash_k3"]
    print(f"counterexample corridor {spec.width}x{spec.height}, gamma={gamma}, "
          f"lateral slip {spec.slip_lateral} per side")
    print(f"layout hash k2={rep['layout_hash']} k3={rep['layout_hash_k3']} "
          f"({'identical' if same else 'DIFFERENT'}); full hashes {rep['hash_k2']} {rep['hash_k3']}")
    print("U*(k=3) - U*(k=2) per cell (x1e4, '#' obstacle):")
    index = {tuple(c): i for i, c in enumerate(rep["cells"])}
    for r in range(spec.height):
        line = []
        for c in range(spec.width):
            i = index.get((r, c))
            line.append("     #" if i is None else f"{rep['delta'][i] * 1e4:6.1f}")
        print(" ".join(line))
    if args.out:
        Path(args.out).write_text(json.dumps({**rep, "version": __version__}, indent=1),
                                  encoding="utf-8")
    if not rep["witnesses"]:
        print(f"no cell with U*(k=3) > U*(k=2) + {WITNESS_MARGIN:g}")
        return EXIT_PROPERTY
    w = rep["witnesses"][0]
    far = max(rep["witnesses"], key=lambda x: (spec.width - x["cell"][1], x["delta"]))
    print(f"witness: cell {tuple(w['cell'])} delta {w['delta']:.6g} "
          f"(U k=2 {w['u_k2']:.8f}, U k=3 {w['u_k3']:.8f}); "
          f"{len(rep['witnesses'])} cells in total")
    print(f"farthest from the goal: cell {tuple(far['cell'])} delta {far['delta']:.6g}")
    return EXIT_OK


# ----------------------------------------------------------------- render


def _load_solution(path):
    try:
        sol = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"ParseError: no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"ParseError: {path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(sol, dict) or "values" not in sol or "policy" not in sol:
        raise ParseError("ParseError: solution JSON needs 'values' and 'policy'")
    return sol


def render_grid(spec: GridSpec, values, policy, fmt: str, show_values=False):
    cells = spec.free_cells()
    # one value per free cell plus the sink
    if len(values) != len(cells) + 1 or len(policy) != len(values):
        raise CliError(f"solution has {len(values)} states, grid implies {len(cells) + 1}")
    index = spec.cell_index()
    terminals = {(r, c) for r, c, _ in spec.terminals}

    if fmt == "csv":
        rows = []
        for r in range(spec.height):
            for c in range(spec.width):
                i = index.get((r, c))
                if i is None:
                    rows.append([r, c, "", ""])
                else:
                    rows.append([r, c, repr(float(values[i])), policy[i][0] if policy[i] else ""])
        return rows

    if fmt == "ascii":
        lines = []
        for r in range(spec.height):
            out = []
            for c in range(spec.width):
                i = index.get((r, c))
                if i is None:
                    g = "#"
                elif (r, c) in terminals:
                    g = "$"
                else:
                    g = ARROWS.get(policy[i][0], "?") if policy[i] else "?"
                if show_values:
                    g = f"{g}{'' if i is None else f'{values[i]:.3f}':>6}"
                out.append(g)
            lines.append((" " if show_values else "").join(out))
        return "\n".join(lines) + "\n"

    if fmt == "ppm":
        free = np.array([values[index[c]] for c in cells], dtype=float)
        lo, hi = float(free.min()), float(free.max())
        img = np.zeros((spec.height, spec.width, 3), dtype=np.uint8)
        for r in range(spec.height):
            for c in range(spec.width):
                i = index.get((r, c))
                if i is None:
                    img[r, c] = (128, 0, 128)
                else:
                    level = 0.0 if hi == lo else (values[i] - lo) / (hi - lo)
                    img[r, c] = int(round(255 * level))
        return img, lo, hi
    raise CliError(f"unknown format {fmt!r}")


def cmd_render(args) -> int:
    sol = _load_solution(args.solution)
    spec = load_gridspec(args.grid)
    result = render_grid(spec, sol["values"], sol["policy"], args.format, args.values)
    if args.format == "csv":
        _write_csv(args.out, ["row", "col", "value", "first_action"], result)
    elif args.format == "ascii":
        _write_text(args.out, result)
    else:
        img, lo, hi = result
        if not args.out or args.out == "-":
            raise CliError("ppm output needs --out")
        scale = max(1, args.scale)
        img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
        h, w = img.shape[:2]
        with open(args.out, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            f.write(img.tobytes())
        Path(str(args.out) + ".txt").write_text(
            f"min {lo!r}\nmax {hi!r}\nscale {scale}\nsolution {args.solution}\n"
            f"model_hash {sol.get('meta', {}).get('model_hash', '')}\n", encoding="utf-8")
    return EXIT_OK


# ------------------------------------------------------------------- main


def _add_model_args(p, default_model=None):
    p.add_argument("--model", required=default_model is None, default=default_model,
                   help="model JSON, grid spec JSON or builtin:NAME")
    p.add_argument("--k", type=int, default=None, help="check-in period (overrides the file)")
    p.add_argument("--gamma", type=float, default=None, help="discount (overrides the file)")


def _add_solver_args(p):
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--max-iterations", type=int, default=100_000)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $PSOMDP_THREADS, else all)")
    p.add_argument("--budget-mb", type=float, default=None,
                   help="memory budget for composed models, in MiB (default 2048)")


def build_parser():
    ap = argparse.ArgumentParser(prog="psomdp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"psomdp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a model exactly")
    _add_model_args(p)
    _add_solver_args(p)
    p.add_argument("--method", choices=("naive", "bnb"), default="bnb")
    p.add_argument("--out", help="solution JSON path")
    p.add_argument("--include-q", action="store_true", help="store all Q-values")
    p.add_argument("--suffix", help="lower-bound suffix for bnb: nop, action:<i>, seq:<a,b,..>")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bounds", help="upper/lower bound tables as CSV")
    _add_model_args(p)
    _add_solver_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--upper-B", dest="upper_B", help="check-in strides, e.g. '2,4'")
    g.add_argument("--upper-ell", type=int, help="divisor stride")
    p.add_argument("--lower-tau", type=int)
    p.add_argument("--lower-suffix", help="nop, action:<i> or seq:<a,b,..>")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("bench", help="naive vs branch-and-bound timings")
    _add_model_args(p)
    _add_solver_args(p)
    p.add_argument("--k-list", default="4,5,6")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--methods", default="naive,bnb")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("counterexample", help="more frequent check-ins can lower values")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", help="write the full report as JSON")
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("render", help="draw a solution on its grid")
    p.add_argument("--solution", required=True)
    p.add_argument("--grid", required=True, help="grid spec JSON")
    p.add_argument("--format", choices=("ascii", "ppm", "csv"), default="ascii")
    p.add_argument("--values", action="store_true", help="ascii: print values next to arrows")
    p.add_argument("--scale", type=int, default=16, help="ppm: pixels per cell")
    p.add_argument("--out", help="output path (default stdout; required for ppm)")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if hasattr(args, "threads"):
            set_threads(_threads(args))
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _SOLVE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
