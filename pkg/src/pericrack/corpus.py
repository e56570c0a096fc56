"""Batch simulation over the mode grid and conversion of final frames to labelled images."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.dataset import Dataset, label_of
from .data.dump import load_dump, save_dump
from .data.raster import rasterize
from .errors import InputError
from .peri.materials import MaterialModel
from .scenario import DiskSpec, DumpFrame, ModeSpec, SimulationConfig, get_mode, run_scenario, sample_hit_point

MANIFEST = "manifest.jsonl"


def run_seed(base: int, mode_id: int, run: int) -> int:
    """Independent hit-point seed for each (mode, run) pair."""
    return int(np.random.SeedSequence([base, mode_id, run]).generate_state(1)[0])


@dataclass
class RunRecord:
    mode: int
    run: int
    seed: int
    hit_point: tuple
    frames: list

    def manifest_entry(self, paths) -> dict:
        return {"mode": self.mode, "run": self.run, "seed": self.seed, "hit_point": list(self.hit_point),
                "frames": [str(p) for p in paths]}


def simulate_run(mode: ModeSpec, run: int, disk: DiskSpec, config: SimulationConfig,
                 model: MaterialModel) -> RunRecord:
    seed = run_seed(config.seed, mode.mode_id, run)
    hit = sample_hit_point(disk, seed, config.hit_radius_fraction)
    frames = run_scenario(mode, disk, config, model, hit_point=hit)
    return RunRecord(mode.mode_id, run, seed, hit, frames)


def _job(args):
    mode_id, run, disk, config, model, final_only = args
    rec = simulate_run(get_mode(mode_id), run, disk, config, model)
    if final_only:
        rec.frames = rec.frames[-1:]
    return rec


def simulate_many(mode_ids, runs_per_mode: int, disk: DiskSpec, config: SimulationConfig, model: MaterialModel,
                  jobs: int = 1, final_only: bool = False, progress=None) -> list[RunRecord]:
    """All runs in (mode, run) order; ``jobs > 1`` uses worker processes."""
    tasks = [(m, r, disk, config, model, final_only) for m in mode_ids for r in range(runs_per_mode)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_job, tasks))
    else:
        records = []
        for t in tasks:
            records.append(_job(t))
            if progress is not None:
                progress(len(records), len(tasks))
    return records


def write_runs(records: list[RunRecord], out_dir) -> Path:
    """Dump files per run plus a JSON-lines manifest; paths are relative to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in records:
        rel = Path(f"mode{rec.mode:02d}_run{rec.run:04d}.dump")
        save_dump(out_dir / rel, rec.frames)
        lines.append(json.dumps(rec.manifest_entry([rel])))
    path = out_dir / MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(directory) -> list[dict]:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise InputError(f"no {MANIFEST} in {directory}")
    entries = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    if not entries:
        raise InputError(f"{path} lists no runs")
    return entries


def final_frames(directory) -> tuple[list[DumpFrame], np.ndarray]:
    """Last frame of every run in the manifest and its mode label."""
    directory = Path(directory)
    frames, labels = [], []
    for entry in read_manifest(directory):
        frames.append(load_dump(directory / entry["frames"][-1])[-1])
        labels.append(entry["mode"])
    return frames, np.asarray(labels)


def images_from_frames(frames, labels, size: int, disk_radius: float) -> Dataset:
    images = np.array([rasterize(f, size, size, disk_radius) for f in frames])
    return Dataset(images, labels)


def dataset_from_records(records: list[RunRecord], size: int, disk_radius: float) -> Dataset:
    return images_from_frames([r.frames[-1] for r in records], [label_of(get_mode(r.mode)) for r in records],
                              size, disk_radius)
