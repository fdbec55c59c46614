"""
Run outputs are collected in memory and committed together: every file goes
to a temp file in the output directory first, then all are renamed into place.
"""
import io
import os
import csv
import json
import logging
import hashlib

from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from tempfile import mkstemp
from typing import Dict, Iterable, List, Sequence

logger = logging.getLogger("artifacts")

MANIFEST = "manifest.json"


def tool_version() -> str:
    try:
        return version("cobound")
    except PackageNotFoundError:
        return "unknown"


def _csv_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return value


def dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


class ArtifactSet:
    def __init__(self):
        self.files: Dict[str, bytes] = {}
        self.manifest: Dict = {}

    def add_text(self, name, text: str):
        if name in self.files or name == MANIFEST:
            raise ValueError(f"artifact {name} already exists")
        self.files[name] = text.encode("utf-8")

    def add_json(self, name, data):
        self.add_text(name, dumps(data))

    def add_csv(self, name, rows: Iterable[Dict], fields: Sequence[str]):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({f: _csv_value(row.get(f)) for f in fields})
        self.add_text(name, buf.getvalue())

    def describe(self, **fields):
        self.manifest.update(fields)

    def _manifest_text(self) -> str:
        manifest = dict(self.manifest)
        manifest["version"] = tool_version()
        manifest["timestamp"] = datetime.now(timezone.utc).isoformat()
        manifest["artifacts"] = {
            name: hashlib.sha256(contents).hexdigest()
            for (name, contents) in sorted(self.files.items())
        }
        return dumps(manifest)

    def commit(self, out_dir) -> List[str]:
        """
        Writes every artifact plus the manifest; nothing is renamed into place
        until all temp files are written.
        """
        os.makedirs(out_dir, exist_ok=True)
        contents = dict(self.files)
        contents[MANIFEST] = self._manifest_text().encode("utf-8")

        staged = []
        try:
            for (name, data) in sorted(contents.items()):
                (fd, tmp) = mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
                staged.append((tmp, os.path.join(out_dir, name)))
                with os.fdopen(fd, "wb") as f:
                    f.write(data)
        except OSError:
            for (tmp, _target) in staged:
                if os.path.exists(tmp):
                    os.unlink(tmp)
            raise

        for (tmp, target) in staged:
            os.replace(tmp, target)

        written = [target for (_tmp, target) in staged]
        logger.info("committed %s artifacts to %s", len(written), out_dir)
        return written
