import gzip
import json
import logging
import os
from pathlib import Path
from tempfile import NamedTemporaryFile
from typing import Any, Iterable, Union

logger = logging.getLogger(__name__)


def write_atomic(path: Union[str, Path], content: Union[str, bytes], compress: bool = False):
    """Writes to a temporary file next to `path`, then renames it into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = content.encode("utf-8") if isinstance(content, str) else content
    if compress:
        # a fixed mtime keeps compressed output byte-identical across runs
        data = gzip.compress(data, mtime=0)
    with NamedTemporaryFile(
        "wb", dir=path.parent, prefix=f".{path.name}.", suffix=".tmp", delete=False
    ) as tmp:
        tmp.write(data)
        tmp_path = Path(tmp.name)
    try:
        os.replace(tmp_path, path)
    except OSError:
        tmp_path.unlink()
        raise
    logger.info(f"wrote {path}")


def write_json(path: Union[str, Path], obj: Any):
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def jsonl(objects: Iterable[Any]) -> str:
    return "".join(json.dumps(obj, sort_keys=True) + "\n" for obj in objects)


def read_text(path: Union[str, Path]) -> str:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rt") as f:
            return f.read()
    with open(path, "r") as f:
        return f.read()
