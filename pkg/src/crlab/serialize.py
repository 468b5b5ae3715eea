"""JSON persistence for families, domains, model weights and benchmarks.

Matrices are written as row-major nested arrays.  Floats are emitted with
Python's shortest round-trip representation (up to 17 significant digits),
so reading a file back reconstructs every value bit-exactly and regenerating
with the same seed produces byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .cld import Benchmark, DomainSpec, FamilySpec, check_support_condition
from .network import LayerParams, ModelParams
from .validation import ConfigError

FAMILY_FILE = "family.json"
DOMAIN_FILES = {"source": "source.json", "validation": "validation.json", "target": "target.json"}
MANIFEST_FILE = "manifest.json"


def family_to_dict(family: FamilySpec) -> dict:
    return {
        "num_causal": family.num_causal,
        "num_style": family.num_style,
        "num_classes": family.num_classes,
        "label_table": family.label_table.tolist(),
        "causal_embed": family.causal_embed.tolist(),
        "style_embed": family.style_embed.tolist(),
        "noise_sigma": family.noise_sigma,
        "obs_dim": family.obs_dim,
    }


def family_from_dict(raw: dict) -> FamilySpec:
    try:
        return FamilySpec(
            num_causal=int(raw["num_causal"]),
            num_style=int(raw["num_style"]),
            num_classes=int(raw["num_classes"]),
            label_table=np.array(raw["label_table"], dtype=np.float64),
            causal_embed=np.array(raw["causal_embed"], dtype=np.float64),
            style_embed=np.array(raw["style_embed"], dtype=np.float64),
            noise_sigma=float(raw["noise_sigma"]),
            obs_dim=int(raw["obs_dim"]),
        )
    except KeyError as exc:
        raise ConfigError(f"family record is missing key {exc}") from exc


def domain_to_dict(domain: DomainSpec) -> dict:
    return {"joint_table": domain.joint_table.tolist()}


def domain_from_dict(raw: dict) -> DomainSpec:
    try:
        return DomainSpec(joint_table=np.array(raw["joint_table"], dtype=np.float64))
    except KeyError as exc:
        raise ConfigError(f"domain record is missing key {exc}") from exc


def params_to_dict(params: ModelParams) -> dict:
    return {
        "activation": params.activation,
        "extractor_layers": [
            {"weights": w.tolist(), "bias": b.tolist()} for w, b in params.layers
        ],
        "head_weights": params.head.tolist(),
    }


def params_from_dict(raw: dict) -> ModelParams:
    try:
        layers = tuple(
            LayerParams(
                np.array(layer["weights"], dtype=np.float64),
                np.array(layer["bias"], dtype=np.float64),
            )
            for layer in raw["extractor_layers"]
        )
        return ModelParams(
            layers=layers,
            head=np.array(raw["head_weights"], dtype=np.float64),
            activation=raw["activation"],
        )
    except KeyError as exc:
        raise ConfigError(f"params record is missing key {exc}") from exc


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def guarded_write_text(path: Path, text: str, force: bool = False) -> None:
    """Write atomically; refuse to replace a file whose content differs.

    Re-running an identical job is a no-op; anything else needs ``force``.
    """
    path = Path(path)
    if path.exists():
        if path.read_text() == text:
            return
        if not force:
            raise RuntimeError(
                f"{path} already exists with different content; pass --force to overwrite"
            )
    atomic_write_text(path, text)


def benchmark_id(benchmark: Benchmark) -> str:
    payload = {
        "family": family_to_dict(benchmark.family),
        "source": domain_to_dict(benchmark.source),
        "validation": domain_to_dict(benchmark.validation),
        "target": domain_to_dict(benchmark.target),
    }
    return content_hash(payload)


def save_benchmark(
    benchmark: Benchmark,
    out_dir,
    seed: int,
    generator_config: dict | None = None,
    force: bool = False,
) -> dict:
    """Write family, domain and manifest files; returns the manifest dict."""
    out = Path(out_dir)
    manifest = {
        "benchmark_id": benchmark_id(benchmark),
        "seed": seed,
        "support_ok": check_support_condition(benchmark.source, benchmark.target),
        "generator_config": generator_config or {},
    }
    guarded_write_text(out / FAMILY_FILE, json_text(family_to_dict(benchmark.family)), force)
    for name, filename in DOMAIN_FILES.items():
        domain = getattr(benchmark, name)
        guarded_write_text(out / filename, json_text(domain_to_dict(domain)), force)
    guarded_write_text(out / MANIFEST_FILE, json_text(manifest), force)
    return manifest


def load_benchmark(bench_dir) -> tuple[Benchmark, dict]:
    bench = Path(bench_dir)
    if not (bench / MANIFEST_FILE).exists():
        raise ConfigError(f"{bench} does not contain a benchmark (missing {MANIFEST_FILE})")
    try:
        family = family_from_dict(json.loads((bench / FAMILY_FILE).read_text()))
        domains = {
            name: domain_from_dict(json.loads((bench / filename).read_text()))
            for name, filename in DOMAIN_FILES.items()
        }
        manifest = json.loads((bench / MANIFEST_FILE).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"benchmark directory {bench} is incomplete: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"benchmark directory {bench} holds invalid JSON: {exc}") from exc
    return Benchmark(family=family, **domains), manifest


__all__ = [
    "DOMAIN_FILES",
    "FAMILY_FILE",
    "MANIFEST_FILE",
    "atomic_write_text",
    "benchmark_id",
    "canonical_json",
    "content_hash",
    "domain_from_dict",
    "domain_to_dict",
    "family_from_dict",
    "family_to_dict",
    "guarded_write_text",
    "json_text",
    "load_benchmark",
    "params_from_dict",
    "params_to_dict",
    "save_benchmark",
]
