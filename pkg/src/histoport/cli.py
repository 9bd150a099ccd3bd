"""``histoport`` command line: gen-data, train, eval, check, bench, viz-eoh.

Exit codes: 0 success, 1 invariant failure, 2 I/O error, 3 config mismatch,
4 checksum failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .groups import AliasingError
from .io import (
    ChecksumError,
    ConfigMismatch,
    FormatError,
    load_checkpoint,
    read_dataset,
    save_checkpoint,
    write_dataset,
)
from .kitting import generate_episode, render_observation
from .policy import PolicyBundle, PolicyConfig, extract_crop
from .training import METRIC_COLUMNS, TrainConfig, evaluate, kitting_config, make_dataset, train

EXIT_OK, EXIT_INVARIANT, EXIT_IO, EXIT_CONFIG, EXIT_CHECKSUM = 0, 1, 2, 3, 4

log = logging.getLogger("histoport")


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def load_config(path: str | None, seed: int | None = None) -> TrainConfig:
    """Flat JSON config; unknown keys and invalid values are config errors."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise CliError(EXIT_IO, f"config file {path} not found") from e
        except json.JSONDecodeError as e:
            raise CliError(EXIT_CONFIG, f"config is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise CliError(EXIT_CONFIG, "config must be a JSON object")
    if seed is not None:
        doc["seed"] = seed
    try:
        return TrainConfig.from_flat(doc)
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(EXIT_CONFIG, f"bad config: {e}") from e


def _load_bundle(path, expect: PolicyConfig | None = None) -> tuple[PolicyBundle, dict]:
    try:
        return load_checkpoint(path, expect)
    except FileNotFoundError as e:
        raise CliError(EXIT_IO, str(e)) from e
    except ChecksumError as e:
        raise CliError(EXIT_CHECKSUM, str(e)) from e
    except FormatError as e:
        raise CliError(EXIT_IO, str(e)) from e
    except ConfigMismatch as e:
        raise CliError(EXIT_CONFIG, str(e)) from e


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot create {out}: {e}") from e
    return out


# -- commands --

def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.seed)
    seed = cfg.seed
    demos = make_dataset(args.episodes, seed, kitting_config(cfg.policy))
    write_dataset(_out_dir(args.out), demos)
    print(f"wrote {len(demos)} episodes (seeds {seed}..{seed + len(demos) - 1}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    try:
        dataset = read_dataset(args.data)
    except FileNotFoundError as e:
        raise CliError(EXIT_IO, str(e)) from e
    except FormatError as e:
        raise CliError(EXIT_IO, str(e)) from e
    out = _out_dir(args.out)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()

        def on_row(row):
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in METRIC_COLUMNS})
            if row["eval_success_rate"] is not None:
                fh.flush()
                log.info("iteration %d: success %.1f", row["iteration"], row["eval_success_rate"])

        try:
            res = train(cfg, dataset, log=on_row)
        except ValueError as e:
            raise CliError(EXIT_CONFIG, str(e)) from e
    save_checkpoint(out / "checkpoint", res.bundle, extra={
        "train": cfg.to_flat(), "best_success": res.best_success, "best_iteration": res.best_iteration,
    })
    print(f"best success {res.best_success:.1f} at iteration {res.best_iteration}; checkpoint in {out / 'checkpoint'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    expect = load_config(args.config, args.seed).policy if args.config else None
    bundle, _ = _load_bundle(args.checkpoint, expect)
    seed = args.seed if args.seed is not None else 0
    rep = evaluate(bundle, args.episodes, seed, kitting_config(bundle.cfg))
    print(f"success rate: {rep.success_rate:.1f} / 100 over {rep.episodes} episodes")
    print(f"mean translation error: {rep.mean_translation_error:.3f} px")
    print(f"mean rotation error: {rep.mean_rotation_error:.4f} rad")
    print(f"inference time: {1000 * rep.seconds_per_inference:.1f} ms")
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rep.as_row()))
    writer.writeheader()
    writer.writerow(rep.as_row())
    print(buf.getvalue(), end="")
    if args.out:
        (_out_dir(args.out) / "eval.csv").write_text(buf.getvalue())
    return EXIT_OK


def cmd_check(args) -> int:
    from .invariants import run_checks

    return EXIT_OK if run_checks() else EXIT_INVARIANT


def bench_rows(ns, repeats: int, m: int = 12, seed: int = 0) -> list[dict]:
    """Parameter count, median pick-and-place inference time and tensor bytes for each ``N``."""
    rows = []
    sc = generate_episode(seed)
    obs = render_observation(sc)
    for n in ns:
        cfg = PolicyConfig(n=n, m=m, seed=seed)
        try:
            cfg.validate()
        except ValueError as e:
            raise CliError(EXIT_CONFIG, f"N={n}: {e}") from e
        b = PolicyBundle(cfg)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            b.act(obs)
            times.append(time.perf_counter() - t0)
        with T.count_bytes() as counter:
            pick = b.pick_position(obs)
            u, v = divmod(int(np.argmax(pick)), pick.shape[1])
            b.pick_angle(extract_crop(obs, u, v, cfg.crop_pick))
            b.place_distribution(obs, extract_crop(obs, u, v, cfg.crop_place))
        rows.append({"N": n, "params": sum(b.parameter_counts().values()),
                     "median_ms": 1000 * float(np.median(times)), "tensor_bytes": counter[0]})
    return rows


def cmd_bench(args) -> int:
    ns = [int(x) for x in args.n.split(",")]
    rows = bench_rows(ns, args.repeats, args.m, args.seed or 0)
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["N", "params", "median_ms", "tensor_bytes"], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({**r, "median_ms": f"{r['median_ms']:.2f}"})
    print(buf.getvalue(), end="")
    if args.out:
        (_out_dir(args.out) / "bench.csv").write_text(buf.getvalue())
    times = [r["median_ms"] for r in rows]
    grows = all(a <= b for a, b in zip(times, times[1:]))
    print(f"inference time monotone in N: {'yes' if grows else 'no'}")
    if len({r["params"] for r in rows}) != 1:
        print("FAIL parameter counts differ across N", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"parameter count identical across N: {rows[0]['params']}")
    return EXIT_OK


def cmd_viz_eoh(args) -> int:
    from .viz import eoh_arrows_svg, eoh_heatmap

    expect = load_config(args.config).policy if args.config else None
    bundle, _ = _load_bundle(args.checkpoint, expect)
    cfg = bundle.cfg
    if cfg.descriptor != "eoh":
        raise CliError(EXIT_CONFIG, "checkpoint uses invariant descriptors; there is no EOH map to draw")
    seed = args.seed if args.seed is not None else 0
    sc = generate_episode(seed, kitting_config(cfg))
    obs = render_observation(sc, cfg.channels)
    with T.no_grad():
        eoh = bundle.scene_descriptors(T.Tensor(obs)).data
    out = _out_dir(args.out)
    eoh_heatmap(out / "eoh_max.ppm", eoh)
    (out / "eoh_arrows.svg").write_text(eoh_arrows_svg(eoh, args.stride))
    print(f"wrote {out / 'eoh_max.ppm'} ({eoh.shape[1]}x{eoh.shape[2]}) and {out / 'eoh_arrows.svg'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="histoport", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="flat JSON config (TrainConfig and PolicyConfig fields)")
        sp.add_argument("--seed", type=int, help="u64 seed")
        if out:
            sp.add_argument("--out", help="output directory")
        return sp

    g = common(sub.add_parser("gen-data", help="write oracle demonstrations"))
    g.add_argument("--episodes", type=int, default=10)
    g.set_defaults(fn=cmd_gen_data, need_out=True)

    t = common(sub.add_parser("train", help="behavior cloning on a dataset directory"))
    t.add_argument("--data", required=True)
    t.set_defaults(fn=cmd_train, need_out=True)

    e = common(sub.add_parser("eval", help="evaluate a checkpoint on held-out episodes"))
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=50)
    e.set_defaults(fn=cmd_eval)

    c = common(sub.add_parser("check", help="run the invariant suite"), out=False)
    c.set_defaults(fn=cmd_check)

    b = common(sub.add_parser("bench", help="parameter count and inference time across N"))
    b.add_argument("--n", default="36,72,120,180", help="comma-separated N values")
    b.add_argument("--m", type=int, default=12)
    b.add_argument("--repeats", type=int, default=3)
    b.set_defaults(fn=cmd_bench)

    v = common(sub.add_parser("viz-eoh", help="draw the scene encoder's EOH map"))
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--stride", type=int, default=8)
    v.set_defaults(fn=cmd_viz_eoh, need_out=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "need_out", False) and not args.out:
        print("error: --out is required", file=sys.stderr)
        return EXIT_IO
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except AliasingError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())


__all__ = ["main", "build_parser", "load_config", "bench_rows", "EXIT_OK", "EXIT_INVARIANT", "EXIT_IO",
           "EXIT_CONFIG", "EXIT_CHECKSUM"]
