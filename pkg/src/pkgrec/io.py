"""File formats: triplet/vocab/interaction TSVs, feature binaries, checkpoints.

Feature binary (magic MPKGF1): one ASCII header line ``MPKGF1 <rows> <cols>``
followed by row-major little-endian float32. Checkpoint (magic MPKGC1): the
magic line, an 8-byte little-endian JSON-header length, the JSON header
(tensor names/shapes/offsets, config, optimizer + RNG state, metadata), then
one contiguous little-endian float64 payload.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"MPKGF1"
CHECKPOINT_MAGIC = b"MPKGC1"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """A data file is malformed (bad magic, bad geometry, truncated payload)."""


class CheckpointError(ValueError):
    """A checkpoint cannot be used: wrong magic/version or inconsistent contents."""


# ---------------------------------------------------------------- TSV formats


def save_triplets(path, triplets) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in triplets:
            f.write(f"{h}\t{r}\t{t}\n")


def load_triplets(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            out.append(tuple(parts))
    return out


def save_vocab(path, item_keys) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, key in enumerate(item_keys):
            f.write(f"{key}\t{i}\n")


def load_vocab(path) -> list:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'key<TAB>index'")
            pairs.append((parts[0], int(parts[1])))
    indices = sorted(i for _, i in pairs)
    if indices != list(range(len(pairs))):
        raise FormatError(f"{path}: indices are not a permutation of 0..{len(pairs) - 1}")
    keys = [None] * len(pairs)
    for key, i in pairs:
        keys[i] = key
    return keys


def save_interactions(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for u, i, t in rows:
            f.write(f"{u}\t{i}\t{t}\n")


def load_interactions(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 'user<TAB>item<TAB>ts'")
            try:
                ts = int(parts[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: timestamp {parts[2]!r} is not an integer")
            out.append((parts[0], parts[1], ts))
    return out


# ------------------------------------------------------------ feature binary


def save_features(path, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise FormatError(f"feature array must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC + f" {arr.shape[0]} {arr.shape[1]}\n".encode("ascii"))
        f.write(arr.astype("<f4").tobytes(order="C"))


def load_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline()
        parts = header.split()
        if len(parts) != 3 or parts[0] != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad feature header {header[:40]!r}")
        try:
            rows, cols = int(parts[1]), int(parts[2])
        except ValueError:
            raise FormatError(f"{path}: non-integer dimensions in header")
        if rows < 0 or cols < 0:
            raise FormatError(f"{path}: negative dimensions in header")
        payload = f.read()
    expect = rows * cols * 4
    if len(payload) != expect:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expect} for {rows}x{cols}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    return flat.reshape(rows, cols).astype(np.float64)


# ----------------------------------------------------------------- checkpoint


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def save_checkpoint(
    path,
    kind: str,
    tensors: dict,
    config: dict,
    opt_state=None,
    rng_state=None,
    meta: dict | None = None,
) -> None:
    """Write parameters (+ optional optimizer slots) with a JSON header."""
    entries = []
    blobs = []
    offset = 0

    def put(name, arr):
        nonlocal offset
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes

    for name, arr in tensors.items():
        put(name, arr)
    opt_header = None
    if opt_state is not None:
        opt_header = {"step": opt_state.step, "slots": []}
        for name in opt_state.m:
            put(f"opt.m.{name}", opt_state.m[name])
            put(f"opt.v.{name}", opt_state.v[name])
            opt_header["slots"].append(name)
    payload = b"".join(blobs)
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "tensors": entries,
        "tensor_names": [n for n in tensors],
        "opt": opt_header,
        "rng": rng_state,
        "meta": meta or {},
        "payload_bytes": offset,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + b"\n")
        f.write(len(head).to_bytes(8, "little"))
        f.write(head)
        f.write(payload)


class Checkpoint:
    def __init__(self, kind, config, tensors, opt_step, opt_m, opt_v, rng, meta):
        self.kind = kind
        self.config = config
        self.tensors = tensors
        self.opt_step = opt_step
        self.opt_m = opt_m
        self.opt_v = opt_v
        self.rng = rng
        self.meta = meta

    def param_tensors(self) -> dict:
        return self.tensors


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC + b"\n"):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    cur = len(CHECKPOINT_MAGIC) + 1
    if len(data) < cur + 8:
        raise CheckpointError(f"{path}: truncated before header length")
    head_len = int.from_bytes(data[cur : cur + 8], "little")
    cur += 8
    if len(data) < cur + head_len:
        raise CheckpointError(f"{path}: truncated JSON header")
    try:
        header = json.loads(data[cur : cur + head_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    cur += head_len
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: version {header.get('version')} not supported (want {CHECKPOINT_VERSION})"
        )
    payload = data[cur:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"{path}: payload has {len(payload)} bytes, header promises {header['payload_bytes']}"
        )
    if config_hash(header["config"]) != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload sha256 mismatch (corrupted tensors)")

    arrays = {}
    for e in header["tensors"]:
        size = int(np.prod(e["shape"], dtype=np.int64)) * 8 if e["shape"] else 8
        raw = payload[e["offset"] : e["offset"] + size]
        if len(raw) != size:
            raise CheckpointError(f"{path}: tensor {e['name']} extends past payload")
        arrays[e["name"]] = (
            np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).copy()
        )

    tensors = {n: arrays[n] for n in header["tensor_names"]}
    opt_step, opt_m, opt_v = 0, {}, {}
    if header.get("opt"):
        opt_step = header["opt"]["step"]
        for name in header["opt"]["slots"]:
            opt_m[name] = arrays[f"opt.m.{name}"]
            opt_v[name] = arrays[f"opt.v.{name}"]
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        tensors=tensors,
        opt_step=opt_step,
        opt_m=opt_m,
        opt_v=opt_v,
        rng=header.get("rng"),
        meta=header.get("meta", {}),
    )


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
