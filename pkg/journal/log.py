"""Run journal: append-only JSONL with a SHA-256 hash chain."""

import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict

GENESIS = "0" * 64
REQUIRED_FIELDS = ("ts", "event", "run_id", "data", "prev_hash", "hash")


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _chain_hash(prev_hash: str, entry: Dict[str, Any]) -> str:
    # hash = sha256(prev_hash || canonical_json(entry with hash = ""))
    body = dict(entry, hash="")
    return hashlib.sha256(prev_hash.encode() + canonical_json(body)).hexdigest()


def _last_hash(log_path: Path) -> str:
    if not log_path.exists() or log_path.stat().st_size == 0:
        return GENESIS
    with open(log_path, "rb") as f:
        f.seek(0, 2)
        size = f.tell()
        # grow the tail window until it holds a complete last line
        window = 4096
        while True:
            f.seek(max(0, size - window))
            lines = f.read().rstrip(b"\n").split(b"\n")
            if len(lines) >= 2 or window >= size:
                break
            window *= 2
    try:
        return json.loads(lines[-1].decode()).get("hash", GENESIS)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return GENESIS


def append(entry: Dict[str, Any], log_path: Path) -> Dict[str, Any]:
    """Append one record and return it as written.

    Args:
        entry: `event` name, `run_id` and a JSON-serializable `data` dict
        log_path: Journal file (parents are created)
    """
    log_path = Path(log_path)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    prev_hash = _last_hash(log_path)

    record = {
        "ts": datetime.now(timezone.utc).isoformat(),
        "event": entry.get("event", ""),
        "run_id": entry.get("run_id", ""),
        "data": entry.get("data", {}),
        "prev_hash": prev_hash,
        "hash": "",
    }
    record["hash"] = _chain_hash(prev_hash, record)

    with open(log_path, "ab") as f:
        f.write(canonical_json(record) + b"\n")
        f.flush()
        os.fsync(f.fileno())
    return record


def validate_chain(path: Path) -> bool:
    """True iff every record is well formed and links to its predecessor."""
    path = Path(path)
    if not path.exists():
        return True

    prev_hash = GENESIS
    try:
        with open(path, "rb") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line.decode())
                except (json.JSONDecodeError, UnicodeDecodeError):
                    return False
                if not all(field in entry for field in REQUIRED_FIELDS):
                    return False
                if entry["prev_hash"] != prev_hash:
                    return False
                if entry["hash"] != _chain_hash(prev_hash, entry):
                    return False
                prev_hash = entry["hash"]
    except OSError:
        return False
    return True
