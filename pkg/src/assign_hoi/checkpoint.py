"""Parameter archives: a JSON header plus named flat float32 tensors.

Layout of the zip archive::

    header.json            format version, model kind and config, vocabulary
                           hash, tensor shapes, free-form metadata
    tensors/<name>.f32     little-endian float32, row-major

Entries carry a fixed timestamp so that equal parameters give equal bytes.
"""
from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointMismatchError, DataFormatError

FORMAT_VERSION = 1
HEADER = "header.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(model, path, vocab_hash: str, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "vocab_hash": vocab_hash,
        "tensors": {name: list(t.shape) for name, t in state.items()},
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_entry(HEADER), json.dumps(header, indent=2, sort_keys=True) + "\n")
        for name in sorted(state):
            data = state[name].detach().cpu().numpy().astype("<f4").tobytes()
            zf.writestr(_entry(f"tensors/{name}.f32"), data)
    return path


def read_header(path) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            return json.loads(zf.read(HEADER))
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from exc


def load_checkpoint(path, expected_vocab_hash: str | None = None):
    """Rebuild the model stored at ``path``; returns ``(model, header)``.

    Raises :class:`CheckpointMismatchError` when ``expected_vocab_hash`` is
    given and differs from the one recorded at save time.
    """
    from .training import build_model

    header = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"unsupported checkpoint format {header.get('format_version')!r}")
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise CheckpointMismatchError(
            f"checkpoint vocabulary {header['vocab_hash']} does not match dataset {expected_vocab_hash}"
        )
    model = build_model(header["kind"], header["config"])
    state = {}
    with zipfile.ZipFile(path) as zf:
        for name, shape in header["tensors"].items():
            raw = zf.read(f"tensors/{name}.f32")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            state[name] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    return model, header
