"""Posterior checkpoints: a JSON header followed by a little-endian f64 payload.

Layout::

    b"BCPT"                 4-byte magic
    uint32 LE               header length in bytes
    header                  UTF-8 JSON: format version, network spec, kind,
                            array names and shapes in payload order, seed
    payload                 concatenated arrays, float64 little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from bayes_conformal.inference.posteriors import (
    Ensemble,
    LaplaceLastLayer,
    MeanField,
    Point,
    PosteriorApproximation,
    SampleChain,
)
from bayes_conformal.nn_core import NetworkSpec

MAGIC = b"BCPT"
FORMAT_VERSION = 1


def _arrays(post: PosteriorApproximation) -> list[tuple[str, np.ndarray]]:
    if isinstance(post, Point):
        return [("weights", post.weights)]
    if isinstance(post, Ensemble):
        return [(f"member_{i}", m) for i, m in enumerate(post.members)]
    if isinstance(post, MeanField):
        return [("means", post.means), ("log_sigmas", post.log_sigmas)]
    if isinstance(post, SampleChain):
        return [(f"sample_{i}", s) for i, s in enumerate(post.samples)]
    if isinstance(post, LaplaceLastLayer):
        return [
            ("map_weights", post.map_weights),
            ("last_layer_mean", post.last_layer_mean),
            ("last_layer_cov", post.last_layer_cov),
        ]
    raise TypeError(f"cannot serialize {type(post).__name__}")


def dumps_posterior(post: PosteriorApproximation, spec: NetworkSpec, seed: Optional[int] = None) -> bytes:
    arrays = [(name, np.asarray(a, dtype=np.float64)) for name, a in _arrays(post)]
    header = {
        "format_version": FORMAT_VERSION,
        "spec": spec.to_dict(),
        "kind": post.kind,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "seed": seed,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(a.astype("<f8").tobytes(order="C") for _, a in arrays)
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def loads_posterior(blob: bytes) -> tuple[PosteriorApproximation, NetworkSpec, dict]:
    if blob[:4] != MAGIC:
        raise ValueError("not a posterior checkpoint (bad magic)")
    (head_len,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + head_len].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    offset = 8 + head_len
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise ValueError("checkpoint payload is truncated")
        arrays[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise ValueError("trailing bytes after checkpoint payload")

    kind = header["kind"]
    names = [e["name"] for e in header["arrays"]]
    if kind == "point":
        post = Point(arrays["weights"])
    elif kind == "ensemble":
        post = Ensemble([arrays[n] for n in names])
    elif kind == "mean_field":
        post = MeanField(arrays["means"], arrays["log_sigmas"])
    elif kind == "sample_chain":
        post = SampleChain([arrays[n] for n in names])
    elif kind == "laplace_last_layer":
        post = LaplaceLastLayer(arrays["map_weights"], arrays["last_layer_mean"], arrays["last_layer_cov"])
    else:
        raise ValueError(f"unknown posterior kind {kind!r}")
    return post, NetworkSpec.from_dict(header["spec"]), header


def save_posterior(path, post: PosteriorApproximation, spec: NetworkSpec, seed: Optional[int] = None) -> None:
    Path(path).write_bytes(dumps_posterior(post, spec, seed))


def load_posterior(path) -> tuple[PosteriorApproximation, NetworkSpec, dict]:
    return loads_posterior(Path(path).read_bytes())
