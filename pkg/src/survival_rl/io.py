"""Small file helpers shared by the serializers and the CLI."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any


class SchemaError(ValueError):
    """Raised when a document does not carry the expected ``schema`` tag."""


def check_schema(doc: dict, expected: str) -> None:
    found = doc.get("schema")
    if found != expected:
        raise SchemaError(f"expected schema {expected!r}, found {found!r}")


def dumps(doc: Any) -> str:
    # sort_keys keeps output byte-stable across runs
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path: str | os.PathLike, doc: Any) -> Path:
    return atomic_write_text(path, dumps(doc))


def read_json(path: str | os.PathLike) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
