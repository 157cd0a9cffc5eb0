import hashlib
import io
import json
import logging
import os
import struct
from dataclasses import asdict

import numpy as np

from ..core.config import settings
from ..core.exceptions import CorruptTableError, ModelHashMismatchError, TableVersionError
from ..services.model_core import MarketModel, VolatilityChain, model_fingerprint
from ..services.policies import ObservationPolicy
from ..services.structure_tables import GridSpec, StructureTable

logger = logging.getLogger(__name__)

MAGIC = b"VOLFILTER-TABLE\n"
ARRAYS = ("q", "qbar", "p", "q_stderr", "qbar_stderr")
_LENGTH = struct.Struct("<Q")


def _encode_array(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, np.ascontiguousarray(array), allow_pickle=False)
    return buffer.getvalue()


def save_table(table: StructureTable, path: str) -> None:
    """Write a table as a versioned binary file; byte-identical for identical tables."""
    blobs = [_encode_array(getattr(table, name)) for name in ARRAYS]
    payload = b"".join(blobs)
    header = {
        "format_version": settings.TABLE_FORMAT_VERSION,
        "policy": {"kind": table.policy_kind, "params": table.policy.params()},
        "grid": asdict(table.grid),
        "model_hash": table.model_hash,
        "arrays": [[name, len(blob)] for name, blob in zip(ARRAYS, blobs)],
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    temporary = f"{path}.partial"
    try:
        with open(temporary, "wb") as handle:
            handle.write(MAGIC)
            handle.write(_LENGTH.pack(len(encoded)))
            handle.write(encoded)
            handle.write(payload)
        os.replace(temporary, path)
    except OSError as e:
        logger.error(f"Failed to write table to {path}: {e}")
        raise
    logger.info(f"Saved {table.policy_kind} table to {path}")


def _read_header(raw: bytes, path: str):
    if not raw.startswith(MAGIC):
        raise CorruptTableError(f"{path} is not a table file")
    offset = len(MAGIC)
    if len(raw) < offset + _LENGTH.size:
        raise CorruptTableError(f"{path} is truncated")
    (length,) = _LENGTH.unpack_from(raw, offset)
    offset += _LENGTH.size
    try:
        header = json.loads(raw[offset:offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptTableError(f"{path} has an unreadable header: {e}") from e
    return header, offset + length


def load_table(path: str, chain: VolatilityChain, model: MarketModel, policy: ObservationPolicy) -> StructureTable:
    """
    Read a table written by ``save_table`` and bind it to the given model.

    Raises:
        CorruptTableError: If the file is truncated or damaged
        TableVersionError: If the file format version is not supported
        ModelHashMismatchError: If the table was built for another model or policy
    """
    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except OSError as e:
        logger.error(f"Failed to read table from {path}: {e}")
        raise CorruptTableError(f"cannot read {path}: {e}") from e

    header, offset = _read_header(raw, path)
    try:
        version = header["format_version"]
        expected_hash = header["model_hash"]
        grid = GridSpec(**header["grid"])
        layout = header["arrays"]
        checksum = header["checksum"]
    except (KeyError, TypeError) as e:
        raise CorruptTableError(f"{path} header is missing {e}") from e

    if version != settings.TABLE_FORMAT_VERSION:
        raise TableVersionError(f"{path} has format version {version}, expected {settings.TABLE_FORMAT_VERSION}")

    payload = raw[offset:]
    if sum(size for _, size in layout) != len(payload) or hashlib.sha256(payload).hexdigest() != checksum:
        raise CorruptTableError(f"{path} is truncated or damaged")

    actual_hash = model_fingerprint(chain, model, policy)
    if actual_hash != expected_hash:
        raise ModelHashMismatchError(
            f"{path} was built for a different model or policy ({header['policy']['kind']})"
        )

    arrays = {}
    position = 0
    for name, size in layout:
        arrays[name] = np.load(io.BytesIO(payload[position:position + size]), allow_pickle=False)
        position += size
    missing = set(ARRAYS) - set(arrays)
    if missing:
        raise CorruptTableError(f"{path} lacks arrays {sorted(missing)}")

    logger.info(f"Loaded {policy.kind} table from {path}")
    return StructureTable(grid=grid, chain=chain, model=model, policy=policy, **{name: arrays[name] for name in ARRAYS})
