"""Versioned, hash-checked JSON store for horseshoes and densities.

Floats are written with ``repr`` precision so a roundtrip is exact.  Each
file carries the format version, the parameters it is keyed by and a
SHA-256 of its data block.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import horseshoe as hs
from .analytic_map import ConjugatedMap, MapSpec, PolynomialMap
from .errors import ArtifactError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

_TYPES = {t.__name__: t for t in (hs.Horseshoe, hs.GapTree, hs.HyperbolicityFit, hs.DecayFit,
                                  hs.MixingVerdict, hs.PeriodicCandidate, hs.RejectedOrbit)}


def map_from_fingerprint(fp: dict) -> MapSpec:
    if fp["class"] == "polynomial":
        return PolynomialMap(fp["coeffs"], family=fp.get("family", "polynomial"), mu=fp.get("mu"), c=fp.get("c"))
    if fp["class"] == "conjugated":
        return ConjugatedMap(map_from_fingerprint(fp["base"]), fp["v"], fp["kappa"])
    raise ArtifactError("cache-format", f"unknown map class {fp['class']!r}")


def encode(obj: Any) -> Any:
    """JSON-ready form of dataclasses, arrays, tuples, maps and int-keyed dicts."""
    if isinstance(obj, MapSpec):
        return {"__map__": obj.fingerprint()}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        name = type(obj).__name__
        if name not in _TYPES:
            raise ArtifactError("cache-format", f"type {name} is not serializable")
        return {"__type__": name, "fields": {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}}
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"__nd__": [encode(complex(v)) for v in obj.ravel()], "dtype": "complex", "shape": list(obj.shape)}
        return {"__nd__": obj.ravel().tolist(), "dtype": str(obj.dtype), "shape": list(obj.shape)}
    if isinstance(obj, tuple):
        return {"__tuple__": [encode(v) for v in obj]}
    if isinstance(obj, list):
        return [encode(v) for v in obj]
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj):
            return {k: encode(v) for k, v in obj.items()}
        return {"__items__": [[encode(k), encode(v)] for k, v in obj.items()]}
    if isinstance(obj, complex):
        return {"__complex__": [obj.real, obj.imag]}
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def decode(obj: Any) -> Any:
    if isinstance(obj, list):
        return [decode(v) for v in obj]
    if not isinstance(obj, dict):
        return obj
    if "__map__" in obj:
        return map_from_fingerprint(obj["__map__"])
    if "__type__" in obj:
        cls = _TYPES[obj["__type__"]]
        return cls(**{k: decode(v) for k, v in obj["fields"].items()})
    if "__nd__" in obj:
        if obj["dtype"] == "complex":
            vals = np.array([decode(v) for v in obj["__nd__"]], dtype=complex)
        else:
            vals = np.array(obj["__nd__"], dtype=obj["dtype"])
        return vals.reshape(obj["shape"])
    if "__tuple__" in obj:
        return tuple(decode(v) for v in obj["__tuple__"])
    if "__items__" in obj:
        return {decode(k): decode(v) for k, v in obj["__items__"]}
    if "__complex__" in obj:
        return complex(*obj["__complex__"])
    return {k: decode(v) for k, v in obj.items()}


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def cache_key(kind: str, params: dict) -> str:
    return hashlib.sha256(_canonical({"kind": kind, "version": FORMAT_VERSION,
                                      "params": encode(params)}).encode()).hexdigest()[:24]


class CacheStore:
    def __init__(self, root: str | Path, enabled: bool = True):
        self.root = Path(root)
        self.enabled = enabled
        self.hits = 0
        self.misses = 0

    def path(self, kind: str, params: dict) -> Path:
        return self.root / f"{kind}-{cache_key(kind, params)}.json"

    def save(self, kind: str, params: dict, obj: Any) -> Path:
        data = encode(obj)
        text = _canonical(data)
        payload = {"version": FORMAT_VERSION, "kind": kind, "params": encode(params),
                   "sha256": hashlib.sha256(text.encode()).hexdigest(), "data": data}
        p = self.path(kind, params)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(_canonical(payload))
        return p

    def load(self, kind: str, params: dict) -> Any:
        p = self.path(kind, params)
        return load_file(p)

    def get_or_compute(self, kind: str, params: dict, compute: Callable[[], Any]) -> Any:
        if self.enabled:
            p = self.path(kind, params)
            if p.exists():
                try:
                    obj = load_file(p)
                    self.hits += 1
                    return obj
                except ArtifactError as err:
                    log.warning("cache entry %s unusable (%s); recomputing", p.name, err.code)
        self.misses += 1
        obj = compute()
        if self.enabled:
            self.save(kind, params, obj)
        return obj


def load_file(p: Path) -> Any:
    try:
        payload = json.loads(Path(p).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ArtifactError("hash-mismatch", f"unreadable cache file {p}: {err}") from err
    if payload.get("version") != FORMAT_VERSION:
        raise ArtifactError("version-mismatch", f"cache version {payload.get('version')} != {FORMAT_VERSION}")
    text = _canonical(payload["data"])
    if hashlib.sha256(text.encode()).hexdigest() != payload.get("sha256"):
        raise ArtifactError("hash-mismatch", f"cache file {p} failed its checksum")
    return decode(payload["data"])


def roundtrip(obj: Any) -> Any:
    """Encode and decode through JSON text, as the store does."""
    return decode(json.loads(_canonical(encode(obj))))
