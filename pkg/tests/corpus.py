"""Seed fixtures and byte-level mutations for parser fuzzing."""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np

from vq3dloc.errors import ParseError, SchemaError
from vq3dloc.io.colmap import parse_sparse_model
from vq3dloc.io.config import config_from_json
from vq3dloc.io.scan import load_scan, write_xyz
from vq3dloc.io.schemas import (
    anchors_from_json,
    points_from_json,
    pose_table_from_json,
    predictions_from_json,
    predictions_to_json,
    queries_from_json,
    read_json,
    registration_from_json,
    validate,
    write_json,
)
from vq3dloc.pipeline import predict_queries
from vq3dloc.synth import SynthConfig, generate, write_scene

JSON_READERS = {
    "anchors.json": anchors_from_json,
    "queries.json": queries_from_json,
    "gt_poses.json": pose_table_from_json,
    "generators.json": registration_from_json,
    "object_points.json": points_from_json,
    "predictions.json": predictions_from_json,
    "scene.json": lambda d, strict=True: validate(d, "scene", strict),
    "config.json": config_from_json,
}

JUNK = [b"", b"nan", b"-", b"1e999", b"abc", b"{", b"null", b"-0", b"\xff\xfe", b"9" * 40, b'"x"', b"[]"]


def build_seed_corpus(directory: Path) -> list[Path]:
    """Write a small synthetic scene plus extra documents; return the seed files."""
    cfg = SynthConfig(
        rng_seed=3, num_videos=1, frames_per_video=6, num_queries=2, scan_vertices=40, model_points=12
    )
    scene = generate(cfg)
    paths = write_scene(scene, directory)
    write_xyz(scene.scan, directory / "scan0.xyz")
    preds = predict_queries(scene.queries, scene.ground_truth, {scene.scan.scan_id: scene.scan})
    write_json(predictions_to_json(preds), directory / "predictions.json")
    write_json(
        {"schema_version": 1, "kind": "config", "robust_align": {"inlier_threshold": 0.2},
         "metrics": {"delta": 0.1}, "synth": {"noise": {"anchor_dropout": 0.3}}},
        directory / "config.json",
    )
    files = list(paths.values())
    files += [directory / "scan0.xyz", directory / "predictions.json", directory / "config.json"]
    for model in sorted((directory / "models").iterdir()):
        files += [model / "cameras.txt", model / "images.txt", model / "points3D.txt"]
    return files


def mutate(data: bytes, rng: np.random.Generator) -> bytes:
    """Apply one random corruption: byte flip, truncation, line edit or token swap."""
    op = int(rng.integers(6))
    if not data:
        return bytes(rng.integers(0, 256, size=8, dtype=np.uint8))
    if op == 0:
        buf = bytearray(data)
        for _ in range(int(rng.integers(1, 4))):
            buf[int(rng.integers(len(buf)))] = int(rng.integers(256))
        return bytes(buf)
    if op == 1:
        return data[: int(rng.integers(len(data)))]
    lines = data.split(b"\n")
    i = int(rng.integers(len(lines)))
    if op == 2:
        del lines[i]
    elif op == 3:
        lines.insert(i, lines[i])
    elif op == 4:
        tokens = lines[i].split(b" ")
        j = int(rng.integers(len(tokens)))
        tokens[j] = JUNK[int(rng.integers(len(JUNK)))]
        lines[i] = b" ".join(tokens)
    else:
        pos = int(rng.integers(len(data)))
        junk = JUNK[int(rng.integers(len(JUNK)))]
        return data[:pos] + junk + data[pos:]
    return b"\n".join(lines)


def parse_any(path: Path) -> None:
    """Dispatch ``path`` to the parser for its file type."""
    name = path.name
    if name in ("cameras.txt", "images.txt", "points3D.txt"):
        parse_sparse_model(path.parent)
    elif path.suffix in (".ply", ".xyz"):
        load_scan(path)
    else:
        JSON_READERS[name](read_json(path), strict=True)


def fuzz_one(seed_file: Path, work: Path, rng: np.random.Generator) -> Exception | None:
    """Mutate one copy of ``seed_file`` inside ``work`` and parse it.

    Returns the typed error raised (or None when the mutant still parses).
    Anything other than a located ``ParseError``/``SchemaError`` propagates
    as an ``AssertionError``.
    """
    if work.exists():
        shutil.rmtree(work)
    work.mkdir(parents=True)
    if seed_file.name in ("cameras.txt", "images.txt", "points3D.txt"):
        # a model is a directory: mutate one file, keep the other two intact
        shutil.copytree(seed_file.parent, work, dirs_exist_ok=True)
    target = work / seed_file.name
    data = mutate(seed_file.read_bytes(), rng)
    target.write_bytes(data)
    try:
        parse_any(target)
    except (ParseError, SchemaError) as exc:
        assert exc.path, f"{type(exc).__name__} without location: {exc}"
        return exc
    except Exception as exc:  # noqa: BLE001
        raise AssertionError(f"untyped {type(exc).__name__} on mutated {seed_file.name}: {exc}") from exc
    return None
