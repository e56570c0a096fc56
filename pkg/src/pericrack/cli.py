"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cnn, config as cfgmod, corpus, neural_process as npm
from .data.dataset import TEST, Dataset, read_idx, shuffle_split, write_idx
from .data.raster import read_pgm, write_pgm
from .errors import DivergenceError, PericrackError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _config(args) -> cfgmod.RunConfig:
    return cfgmod.load(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _modes(spec: str) -> list[int]:
    if spec == "all":
        return list(range(1, 13))
    try:
        modes = [int(m) for m in spec.split(",")]
    except ValueError:
        raise UsageError(f"--mode must be 'all' or integers in 1..12, got {spec!r}") from None
    bad = [m for m in modes if not 1 <= m <= 12]
    if bad:
        raise UsageError(f"--mode values must lie in 1..12, got {bad}")
    return modes


def cmd_simulate(args) -> int:
    cfg = _config(args)
    modes = _modes(args.mode)
    model = cfg.material_model(args.model)
    runs = args.runs if args.runs is not None else cfg.scenario.runs_per_mode
    if runs < 1 or args.jobs < 1:
        raise UsageError("--runs and --jobs must be positive")
    records = corpus.simulate_many(modes, runs, cfg.disk_spec(), cfg.simulation_config(), model, jobs=args.jobs,
                                   final_only=args.final_only)
    path = corpus.write_runs(records, args.out)
    cfgmod.save(cfg, Path(args.out) / "config.ini")
    damaged = sum(float(r.frames[-1].damage.max()) > 0 for r in records)
    print(f"wrote {len(records)} runs ({damaged} with damage) to {path}")
    return EXIT_OK


def split_report(dataset: Dataset) -> dict:
    counts = dataset.counts()
    return {"totals": {k: sum(v.values()) for k, v in counts.items()}, "per_mode": counts}


def cmd_dataset(args) -> int:
    cfg = _config(args)
    if args.size not in (28, 64):
        raise UsageError("--size must be 64 or 28")
    frames, labels = corpus.final_frames(args.inp)
    ds = corpus.images_from_frames(frames, labels, args.size, cfg.scenario.disk_radius)
    d = cfg.dataset
    ds = shuffle_split(ds.quantized(), d.train_frac, d.val_frac_of_train, d.test_frac, d.seed)
    out = Path(args.out)
    write_idx(ds, out)
    report = split_report(ds)
    _write_json(out / "split_report.json", report)
    for k in range(min(args.previews, len(ds))):
        write_pgm(out / f"preview_{k:03d}_mode{ds.labels[k]:02d}.pgm", ds.images[k])
    print(json.dumps(report["totals"]))
    return EXIT_OK


def _load_idx(directory, size):
    ds = read_idx(directory)
    if ds.images.shape[1:] != (size, size):
        raise UsageError(f"{directory} holds {ds.images.shape[1]}x{ds.images.shape[2]} images; need {size}x{size}")
    return ds


def cmd_train_cnn(args) -> int:
    cfg = _config(args)
    ds = _load_idx(args.data, cfg.cnn_arch().input_size)
    model = cnn.build_network(cfg.cnn_arch(), seed=cfg.cnn.seed)
    model, curves = cnn.train(model, ds, cfg.cnn_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cnn.save_model(model, out / "cnn.ckpt")
    curves.to_csv(out / "cnn_curves.csv")
    test = ds.subset(TEST)
    rate = cnn.evaluate(model, test) if len(test) else None
    _write_json(out / "run.json", {"command": "train-cnn", "data": str(args.data), "success_rate": rate,
                                   "config": cfgmod.serialize(cfg)})
    print(f"success rate {rate:.2f}%" if rate is not None else "no test split; success rate not computed")
    return EXIT_OK


def np_split(ds: Dataset, n_images: int) -> tuple[np.ndarray, np.ndarray]:
    """Training images (first ``n_images`` non-test items) and held-out test images."""
    train = ds.images[ds.split != TEST][:n_images]
    return train, ds.images[ds.split == TEST]


def cmd_train_np(args) -> int:
    cfg = _config(args)
    ds = _load_idx(args.data, cfg.np_arch().image_size)
    train, heldout = np_split(ds, cfg.np.n_images)
    model = npm.build_np(cfg.np_arch(), seed=cfg.np.seed)
    model, curves = npm.train_np(model, train, cfg.np_config(), heldout=heldout if len(heldout) else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    npm.save_model(model, out / "np.ckpt")
    curves.to_csv(out / "np_curves.csv")
    _write_json(out / "run.json", {"command": "train-np", "data": str(args.data), "final_elbo": curves.elbo[-1],
                                   "final_mean_variance": curves.mean_variance[-1],
                                   "initial_mean_variance": curves.mean_variance[0],
                                   "config": cfgmod.serialize(cfg)})
    print(f"final elbo {curves.elbo[-1]:.4f} mean variance {curves.mean_variance[-1]:.6f} "
          f"(initial {curves.mean_variance[0]:.6f})")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args)
    model = cnn.load_model(args.checkpoint, cfg.cnn_arch())
    image = read_pgm(args.image)
    mode, probs = cnn.predict_mode(model, image)
    print(f"mode {mode}")
    print(" ".join(f"{p:.6f}" for p in probs))
    return EXIT_OK


def cmd_variance_map(args) -> int:
    cfg = _config(args)
    model = npm.load_model(args.checkpoint, cfg.np_arch())
    image = read_pgm(args.image)
    n = model.arch.image_size
    if image.shape != (n, n):
        raise UsageError(f"{args.image} is {image.shape[1]}x{image.shape[0]}; need {n}x{n}")
    try:
        sizes = [int(s) for s in args.contexts.split(",")]
    except ValueError:
        raise UsageError(f"--contexts must be comma-separated integers, got {args.contexts!r}") from None
    if any(not 0 <= s <= n * n for s in sizes):
        raise UsageError(f"context sizes must lie in 0..{n * n}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points = npm.image_points(image)
    rows = []
    for n_c in sizes:
        idx = npm.sample_context(1, n * n, n_c, np.random.default_rng([args.seed, n_c]))[0]
        mean, var = npm.predict_image(model, points[idx], args.samples, seed=args.seed)
        write_pgm(out / f"mean_{n_c}.pgm", mean)
        write_pgm(out / f"variance_{n_c}.pgm", var, scale=0.25)
        rows.append((n_c, float(np.mean((mean - image) ** 2)), float(var.mean()), float(var.max())))
    with open(out / "sweep.csv", "w") as fh:
        fh.write("n_c,mse,mean_variance,max_variance\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]!r},{r[2]!r},{r[3]!r}\n")
    for r in rows:
        print(f"n_c={r[0]:4d} mse={r[1]:.6f} mean_var={r[2]:.6f} max_var={r[3]:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pericrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run impact simulations and write dumps plus a manifest")
    s.add_argument("config", nargs="?")
    s.add_argument("--mode", default="1", help="mode id, comma list or 'all'")
    s.add_argument("--model", choices=("pmb", "lps", "ves"), default=None)
    s.add_argument("--runs", type=int, default=None, help="runs per mode (default from config)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--final-only", action="store_true", help="store only the last frame of each run")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("dataset", help="rasterize final frames into split IDX archives")
    d.add_argument("config", nargs="?")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--size", type=int, default=64)
    d.add_argument("--previews", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dataset)

    for name, func in (("train-cnn", cmd_train_cnn), ("train-np", cmd_train_np)):
        t = sub.add_parser(name)
        t.add_argument("config", nargs="?")
        t.add_argument("--data", required=True)
        t.add_argument("--out", required=True)
        t.set_defaults(func=func)

    q = sub.add_parser("predict", help="classify one 64x64 PGM image")
    q.add_argument("checkpoint")
    q.add_argument("image")
    q.add_argument("--config")
    q.set_defaults(func=cmd_predict)

    v = sub.add_parser("variance-map", help="NP mean/variance maps and context sweep for one 28x28 PGM")
    v.add_argument("checkpoint")
    v.add_argument("image")
    v.add_argument("--config")
    v.add_argument("--contexts", default="10,100,300,784")
    v.add_argument("--samples", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_variance_map)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, PericrackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
