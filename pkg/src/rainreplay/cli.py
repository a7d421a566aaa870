"""Command-line front end.

Subcommands: gen (materialize datasets), run (execute a method and write
CSVs), similarity (print the per-stage similarity chain), cost (symbolic cost
simulation), compare (merge run outputs into one comparison CSV).

Config files are plain key=value lines with '#' comments; unknown keys are
rejected. Exit codes: 0 success, 2 malformed or unknown config key, 3 missing
file, 4 unknown method, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import costs, memgen, pipeline, synthdata
from .synthdata import DatasetSpec, RainParams, make_stream

VERSION = "0.1.0"

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_BAD_KEY = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_METHOD = 4

METHODS = ("clgid", "clgid-fast", "sf", "individual")

_GLOBAL_KEYS = {"image_size", "pair_count", "seed", "datasets"}
_DATASET_KEYS = {
    "angle_mean", "angle_std", "length_mean", "length_std", "width",
    "density", "intensity_mean", "intensity_std",
    "pair_count", "image_size", "seed",
}
_RAIN_DEFAULTS = {
    "angle_std": 4.0, "length_mean": 12.0, "length_std": 3.0,
    "width": 1.0, "density": 20.0, "intensity_mean": 0.5, "intensity_std": 0.1,
}
_CONSTANT_KEYS = {
    "p_g", "e_g", "b_g", "f_g_train", "t_g_train", "f_r", "t_r",
    "p_d", "e_d", "b_d", "f_d_train", "t_d_train",
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_GENERIC):
        super().__init__(message)
        self.code = code


def parse_kv_file(path, allowed_check=None):
    """Parse a key=value file with '#' comments; preserves order."""
    if not os.path.exists(path):
        raise CliError(f"missing file: {path}", EXIT_MISSING_FILE)
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(
                    f"{path}:{lineno}: malformed line {raw.strip()!r}", EXIT_BAD_KEY)
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if allowed_check is not None and not allowed_check(key):
                raise CliError(f"{path}:{lineno}: unknown key {key!r}", EXIT_BAD_KEY)
            out[key] = val
    return out


def _spec_key_ok(key, ids):
    if key in _GLOBAL_KEYS:
        return True
    head, _, field = key.partition(".")
    return bool(field) and head in ids and field in _DATASET_KEYS


def parse_stream_spec(path):
    """Two-pass parse: dataset ids first, then full key validation."""
    raw = parse_kv_file(path)
    if "datasets" not in raw:
        raise CliError(f"{path}: missing required key 'datasets'", EXIT_BAD_KEY)
    ids = [d.strip() for d in raw["datasets"].split(",") if d.strip()]
    if not ids:
        raise CliError(f"{path}: 'datasets' lists no ids", EXIT_BAD_KEY)
    for key in raw:
        if not _spec_key_ok(key, set(ids)):
            raise CliError(f"{path}: unknown key {key!r}", EXIT_BAD_KEY)

    g_seed = int(raw.get("seed", 0))
    g_size = int(raw.get("image_size", 64))
    g_pairs = int(raw.get("pair_count", 10))

    def dval(ds_id, field, default):
        return raw.get(f"{ds_id}.{field}", default)

    specs = []
    for idx, ds_id in enumerate(ids):
        if f"{ds_id}.angle_mean" not in raw:
            raise CliError(
                f"{path}: dataset {ds_id!r} missing required key "
                f"'{ds_id}.angle_mean'", EXIT_BAD_KEY)
        rain = RainParams(
            angle_mean=float(raw[f"{ds_id}.angle_mean"]),
            **{k: float(dval(ds_id, k, v)) for k, v in _RAIN_DEFAULTS.items()},
        )
        specs.append(DatasetSpec(
            id=ds_id,
            pair_count=int(dval(ds_id, "pair_count", g_pairs)),
            image_size=int(dval(ds_id, "image_size", g_size)),
            seed=int(dval(ds_id, "seed",
                          pipeline.derive_seed(g_seed, "dataset", idx))),
            rain=rain,
        ))
    return make_stream(specs), g_seed, raw


def build_stage_config(args, seed):
    cfg = pipeline.StageConfig(
        iterations=args.iterations,
        batch_size=args.batch_size,
        lam=args.lam,
        threshold=args.threshold,
        floor=args.floor,
        seed=seed,
    )
    if args.method == "clgid":
        cfg = replace(cfg, replay=not args.no_replay, speedup=False,
                      selective=not args.no_selective, reuse=not args.no_reuse)
    elif args.method == "clgid-fast":
        cfg = replace(cfg, replay=not args.no_replay,
                      speedup=not args.no_speedup,
                      selective=not args.no_selective, reuse=not args.no_reuse)
    elif args.method == "sf":
        cfg = replace(cfg, replay=False, lam=0.0, speedup=False,
                      selective=False, reuse=False)
    # individual handled by its own driver
    if args.no_distill:
        cfg = replace(cfg, lam=0.0)
    return cfg


def write_manifest(out_dir, args, seed, spec_raw):
    lines = [f"version={VERSION}", f"method={args.method}", f"seed={seed}",
             f"iterations={args.iterations}", f"batch_size={args.batch_size}",
             f"lambda={args.lam}", f"threshold={args.threshold}",
             f"floor={args.floor}",
             f"no_speedup={int(args.no_speedup)}",
             f"no_reuse={int(args.no_reuse)}",
             f"no_selective={int(args.no_selective)}",
             f"no_replay={int(args.no_replay)}",
             f"no_distill={int(args.no_distill)}"]
    lines += [f"spec.{k}={v}" for k, v in spec_raw.items()]
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest_args(path, args):
    raw = parse_kv_file(path)
    spec_lines = []
    for k, v in raw.items():
        if k.startswith("spec."):
            spec_lines.append(f"{k[5:]}={v}")
    spec_path = os.path.join(os.path.dirname(path) or ".", "_manifest_spec.txt")
    with open(spec_path, "w") as fh:
        fh.write("\n".join(spec_lines) + "\n")
    args.config = spec_path
    args.method = raw["method"]
    args.seed = int(raw["seed"])
    args.iterations = int(raw["iterations"])
    args.batch_size = int(raw["batch_size"])
    args.lam = float(raw["lambda"])
    args.threshold = float(raw["threshold"])
    args.floor = float(raw["floor"])
    args.no_speedup = bool(int(raw["no_speedup"]))
    args.no_reuse = bool(int(raw["no_reuse"]))
    args.no_selective = bool(int(raw["no_selective"]))
    args.no_replay = bool(int(raw["no_replay"]))
    args.no_distill = bool(int(raw["no_distill"]))
    return args


def cmd_gen(args):
    stream, _, _ = parse_stream_spec(args.config)
    os.makedirs(args.out, exist_ok=True)
    for spec in stream:
        ds = synthdata.make_dataset(spec)
        synthdata.export_dataset(ds, args.out)
        print(f"wrote {len(ds)} pairs for {spec.id} to {args.out}/{spec.id}")
    return EXIT_OK


def cmd_run(args):
    if args.manifest:
        args = load_manifest_args(args.manifest, args)
    if args.method not in METHODS:
        raise CliError(
            f"unknown method {args.method!r}; expected one of {METHODS}",
            EXIT_BAD_METHOD)
    stream, spec_seed, spec_raw = parse_stream_spec(args.config)
    seed = args.seed if args.seed is not None else spec_seed
    cfg = build_stage_config(args, seed)
    if args.method == "individual":
        report = pipeline.baseline_individual(stream, cfg)
    elif args.method == "sf":
        report = pipeline.baseline_sf(stream, cfg)
    else:
        report = pipeline.run_stream(stream, cfg, method=args.method)
    os.makedirs(args.out, exist_ok=True)
    pipeline.write_reports(report, cfg, args.out, stream[0].image_size)
    write_manifest(args.out, args, seed, spec_raw)
    print(f"{args.method}: final avg memory PSNR "
          f"{report.avg_memory_psnr():.2f} dB; reports in {args.out}")
    return EXIT_OK


def cmd_similarity(args):
    stream, spec_seed, _ = parse_stream_spec(args.config)
    seed = args.seed if args.seed is not None else spec_seed
    gens = []
    for n, spec in enumerate(stream, start=1):
        ds = synthdata.make_dataset(spec)
        if n == 1:
            print(f"stage 1 ({spec.id}): bootstrap, S_hat=1")
        else:
            replay = memgen.build_replay_dataset(
                gens, ds, pipeline.derive_seed(seed, "replay", n))
            sim = pipeline.similarity(ds.rainy_images, replay, n - 1)
            per = ", ".join(
                "s_%d=%.4f" % (i + 1, s) for i, s in enumerate(sim.per_generator)
                if s is not None)
            print(f"stage {n} ({spec.id}): {per}; S=%.4f S_hat=%.4f"
                  % (sim.s_min, sim.s_hat))
        gens.append(memgen.fit_generator(ds))
    return EXIT_OK


def cmd_cost(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    naive = costs.replay_cost_naive(sizes)
    closed = costs.replay_cost_reuse_closed(sizes)
    counted = costs.replay_cost_reuse_counted(sizes)
    print(f"replay calls: naive={naive} closed={closed:.1f} counted={counted}")
    if len(set(sizes)) == 1 and len(sizes) >= 4:
        ok, worst, _ = costs.verify_log_bound(sizes[0], max_stages=len(sizes))
        print(f"harmonic bound check up to N={len(sizes)}: "
              f"{'pass' if ok else 'FAIL'} (worst ratio {worst:.3f})")
    if args.constants:
        kv = parse_kv_file(args.constants,
                           allowed_check=lambda k: k in _CONSTANT_KEYS)
        missing = _CONSTANT_KEYS - set(kv)
        if missing:
            raise CliError(
                f"{args.constants}: missing constants {sorted(missing)}",
                EXIT_BAD_KEY)
        cc = costs.CostConstants(**{k: float(v) for k, v in kv.items()})
        rep = costs.appendix_costs(cc, sizes)
        print(f"FLOPs_GAN={rep.flops_gan:.6g} T_GAN={rep.t_gan:.6g}")
        print(f"FLOPs_Replay={rep.flops_replay:.6g} T_Replay={rep.t_replay:.6g}")
        print(f"FLOPs_Dnet={rep.flops_dnet:.6g} T_Dnet={rep.t_dnet:.6g}")
        print(f"P_GAN={rep.p_gan:.6g} P_Dnet={rep.p_dnet:.6g}")
    return EXIT_OK


def cmd_compare(args):
    rows = []
    for d in args.dirs:
        mem_path = os.path.join(d, "memory.csv")
        gen_path = os.path.join(d, "generalization.csv")
        man_path = os.path.join(d, "manifest.txt")
        for p in (mem_path, gen_path, man_path):
            if not os.path.exists(p):
                raise CliError(f"missing file: {p}", EXIT_MISSING_FILE)
        method = parse_kv_file(man_path).get("method", os.path.basename(d))
        with open(mem_path) as fh:
            mem = list(csv.DictReader(fh))
        last_stage = max(int(r["stage"]) for r in mem)
        finals = {int(r["dataset"]): (float(r["psnr"]), float(r["ssim"]))
                  for r in mem if int(r["stage"]) == last_stage}
        with open(gen_path) as fh:
            gen = list(csv.DictReader(fh))
        hold = gen[-1]
        rows.append((method, finals, float(hold["psnr"]), float(hold["ssim"])))

    n_datasets = max(max(f) for _, f, _, _ in rows)
    out = args.out or "comparison.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["method"]
        for d in range(1, n_datasets + 1):
            header += [f"d{d}_psnr", f"d{d}_ssim"]
        header += ["avg_memory_psnr", "avg_memory_ssim",
                   "holdout_psnr", "holdout_ssim"]
        w.writerow(header)
        for method, finals, hp, hs in rows:
            row = [method]
            ps, ss = [], []
            for d in range(1, n_datasets + 1):
                if d in finals:
                    row += ["%.10g" % finals[d][0], "%.10g" % finals[d][1]]
                    ps.append(finals[d][0])
                    ss.append(finals[d][1])
                else:
                    row += ["", ""]
            row += ["%.10g" % np.mean(ps), "%.10g" % np.mean(ss),
                    "%.10g" % hp, "%.10g" % hs]
            w.writerow(row)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="rainreplay", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="stream spec file (key=value)")
        sp.add_argument("--seed", type=int, default=None)

    g = sub.add_parser("gen", help="materialize datasets to PPM")
    add_common(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="execute a method and write reports")
    add_common(r)
    r.add_argument("--out", required=True)
    r.add_argument("--method", default="clgid")
    r.add_argument("--manifest", help="rerun from a previously written manifest")
    r.add_argument("--iterations", type=int, default=2000)
    r.add_argument("--batch-size", type=int, default=4)
    r.add_argument("--lambda", dest="lam", type=float, default=1.0)
    r.add_argument("--threshold", type=float, default=0.4)
    r.add_argument("--floor", type=float, default=0.05)
    r.add_argument("--no-speedup", action="store_true")
    r.add_argument("--no-reuse", action="store_true")
    r.add_argument("--no-selective", action="store_true")
    r.add_argument("--no-replay", action="store_true")
    r.add_argument("--no-distill", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("similarity", help="print the per-stage similarity chain")
    add_common(s)
    s.set_defaults(func=cmd_similarity)

    c = sub.add_parser("cost", help="symbolic cost simulation")
    c.add_argument("--sizes", required=True, help="comma-separated M_1..M_N")
    c.add_argument("--constants", help="cost-constants file (key=value)")
    c.set_defaults(func=cmd_cost)

    m = sub.add_parser("compare", help="merge run outputs into one CSV")
    m.add_argument("dirs", nargs="+")
    m.add_argument("--out")
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "config", None) is None and args.command in (
                "gen", "run", "similarity") and not getattr(args, "manifest", None):
            raise CliError("--config is required", EXIT_BAD_KEY)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERIC


if __name__ == "__main__":
    sys.exit(main())
