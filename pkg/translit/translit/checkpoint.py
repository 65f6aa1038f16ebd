"""Portable checkpoint files.

Layout::

    format_version=1
    phase=...              key=value manifest lines
    ...
    tensors=N
    name shape dtype offset    one line per tensor, N lines
    <blank line>
    payload                little-endian tensors, row-major, in table order
    checksum               8-byte BLAKE2b digest of the payload
"""
import hashlib
import json
import logging
import os
from dataclasses import asdict, fields
from typing import Dict, NamedTuple

import numpy as np

from .errors import TranslitError
from .model import ModelConfig, ModelState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CHECKSUM_SIZE = 8
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(TranslitError):
    """A checkpoint file cannot be read."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class Checkpoint(NamedTuple):
    state: ModelState
    phase: str
    epoch: int
    meta: Dict[str, str]


def _checksum(payload):
    return hashlib.blake2b(payload, digest_size=CHECKSUM_SIZE).digest()


def _tensors(state):
    tensors = dict(state.params)
    tensors.update(state.buffers)
    for name, value in state.exp_avg.items():
        tensors["optim.exp_avg." + name] = value
    for name, value in state.exp_avg_sq.items():
        tensors["optim.exp_avg_sq." + name] = value
    return tensors


def save(state, path, phase="", epoch=0, meta=None):
    """
    Write a model state (parameters, buffers, optimizer moments, freeze mask,
    step counter and dropout generator state) to ``path``.

    INPUTS
    =======
    state: ModelState.
    path: output file.
    phase (optional): phase tag recorded in the manifest, e.g. "mlm" or "phase1".
    epoch (optional): epoch recorded in the manifest.
    meta (optional): extra key=value pairs; keys and values must not contain newlines.
    """
    lines = ["format_version={}".format(FORMAT_VERSION), "phase={}".format(phase),
             "epoch={}".format(epoch), "step={}".format(state.step)]
    lines += ["config.{}={}".format(key, value) for key, value in asdict(state.config).items()]
    lines.append("rng_state={}".format(json.dumps(state.rng.bit_generator.state, sort_keys=True)))
    lines.append("frozen={}".format(",".join(state.frozen_names())))
    for key, value in (meta or {}).items():
        lines.append("meta.{}={}".format(key, value))

    tensors = _tensors(state)
    lines.append("tensors={}".format(len(tensors)))
    chunks = []
    offset = 0
    for name, value in tensors.items():
        dtype = str(value.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError("Tensor {} has unsupported dtype {}.".format(name, dtype))
        data = np.ascontiguousarray(value, dtype=_DTYPES[dtype]).tobytes()
        shape = ",".join(str(n) for n in value.shape) or "-"
        lines.append("{} {} {} {}".format(name, shape, dtype, offset))
        chunks.append(data)
        offset += len(data)

    payload = b"".join(chunks)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n\n").encode("utf-8"))
        f.write(payload)
        f.write(_checksum(payload))
    logger.debug("Saved checkpoint %s (%d tensors, %d bytes)", path, len(tensors), len(payload))
    return path


def _parse_config(values):
    params = {}
    for f in fields(ModelConfig):
        key = "config." + f.name
        if key not in values:
            raise CheckpointError("Checkpoint manifest lacks {}.".format(key))
        params[f.name] = f.type(values[key])
    return ModelConfig(**params)


def load(path):
    """
    Read a checkpoint written by :func:`save`.

    RETURNS
    ========
    Checkpoint(state, phase, epoch, meta), with every tensor bit-identical to
    the saved one and the dropout generator restored.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError("Cannot read checkpoint {}: {}".format(path, e)) from e
    split = blob.find(b"\n\n")
    if split < 0:
        raise TruncatedCheckpointError("Checkpoint {} has no complete manifest.".format(path))
    lines = blob[:split].decode("utf-8").split("\n")
    body = blob[split + 2:]

    values = {}
    table = []
    for i, line in enumerate(lines):
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError("Malformed manifest line {!r} in {}.".format(line, path))
        values[key] = value
        if key == "tensors":
            table = [row.split(" ") for row in lines[i + 1:]]
            break
    version = values.get("format_version")
    if version != str(FORMAT_VERSION):
        raise CheckpointVersionError("Checkpoint {} has format version {}, expected {}.".format(
            path, version, FORMAT_VERSION))
    if len(table) != int(values.get("tensors", -1)):
        raise TruncatedCheckpointError("Checkpoint {} tensor table is incomplete.".format(path))

    sizes = []
    for name, shape, dtype, offset in table:
        shape = () if shape == "-" else tuple(int(n) for n in shape.split(","))
        sizes.append((name, shape, dtype, int(offset)))
    expected = sum(int(np.prod(shape)) * np.dtype(_DTYPES[dtype]).itemsize for _, shape, dtype, _ in sizes)
    if len(body) < expected + CHECKSUM_SIZE:
        raise TruncatedCheckpointError("Checkpoint {} payload is truncated ({} of {} bytes).".format(
            path, len(body), expected + CHECKSUM_SIZE))
    payload, checksum = body[:expected], body[expected:expected + CHECKSUM_SIZE]
    if len(body) != expected + CHECKSUM_SIZE or _checksum(payload) != checksum:
        raise CheckpointDigestError("Checkpoint {} payload does not match its checksum.".format(path))

    config = _parse_config(values)
    params, buffers, exp_avg, exp_avg_sq = {}, {}, {}, {}
    for name, shape, dtype, offset in sizes:
        count = int(np.prod(shape))
        value = np.frombuffer(payload, dtype=_DTYPES[dtype], count=count, offset=offset)
        value = value.astype(dtype).reshape(shape)
        if name.startswith("optim.exp_avg_sq."):
            exp_avg_sq[name[len("optim.exp_avg_sq."):]] = value
        elif name.startswith("optim.exp_avg."):
            exp_avg[name[len("optim.exp_avg."):]] = value
        elif name.startswith("shared.embed_positions"):
            buffers[name] = value
        else:
            params[name] = value

    frozen_names = set(filter(None, values.get("frozen", "").split(",")))
    frozen = {name: name in frozen_names for name in list(params) + list(buffers)}
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = json.loads(values["rng_state"])
    state = ModelState(config, params, buffers, frozen, rng, int(values["step"]), exp_avg, exp_avg_sq)
    meta = {key[len("meta."):]: value for key, value in values.items() if key.startswith("meta.")}
    return Checkpoint(state, values.get("phase", ""), int(values.get("epoch", 0)), meta)
