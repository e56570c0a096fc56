"""Dump persistence, rasterisation, dataset splitting and IDX archives."""
from .dataset import (IDX_FILES, TEST, TRAIN, VALIDATION, Dataset, label_of, read_idx, shuffle_split,
                      write_idx)
from .dump import load_dump, parse_dump, parse_dump_file, save_dump, write_dump
from .raster import rasterize, read_pgm, to_bytes, write_pgm

__all__ = [
    "IDX_FILES", "TEST", "TRAIN", "VALIDATION", "Dataset", "label_of", "read_idx", "shuffle_split",
    "write_idx", "load_dump", "parse_dump", "parse_dump_file", "save_dump", "write_dump", "rasterize",
    "read_pgm", "to_bytes", "write_pgm",
]
