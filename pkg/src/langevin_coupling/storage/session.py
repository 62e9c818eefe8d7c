from __future__ import annotations

import json
import math
import platform
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd
import scipy

from .. import __version__
from ..errors import InputError
from ..protocol.types import RECORD_COLUMNS, RECORD_SCHEMA_VERSION, CouplingRecord

MANIFEST_SCHEMA_VERSION = 1
ESTIMATE_SCHEMA_VERSION = 1


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def versions() -> dict[str, str]:
    return {
        "langevin_coupling": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "python": platform.python_version(),
    }


def records_frame(records: Sequence[CouplingRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([r.to_row() for r in records], columns=list(RECORD_COLUMNS))
    return frame.sort_values("sample_index", kind="stable").reset_index(drop=True)


def write_records(path: Path, records: Sequence[CouplingRecord]) -> None:
    records_frame(records).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_records(path: str | Path) -> list[CouplingRecord]:
    p = Path(path)
    try:
        frame = pd.read_csv(p)
    except FileNotFoundError as exc:
        raise InputError(f"sample file not found: {p}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"{p}: not a sample CSV ({exc})") from exc
    missing = [c for c in ("sample_index", "tau_c", "censored", "steps") if c not in frame.columns]
    if missing:
        raise InputError(f"{p}: missing column(s) {', '.join(missing)}")
    frame = frame.astype(object).where(frame.notna(), None)
    return [CouplingRecord.from_row(row) for row in frame.to_dict(orient="records")]


@dataclass
class RunDirectory:
    """One self-contained output directory: manifest, sample CSVs, estimate JSONs, plot data, summary log."""

    root_dir: Path
    run_id: str
    run_dir: Path
    summary_path: Path

    _fs: Any = None

    @classmethod
    def create(cls, root_dir: str | Path, label: str) -> "RunDirectory":
        root = Path(root_dir)
        root.mkdir(parents=True, exist_ok=True)

        now = datetime.now()
        stamp = f"{label}-{now:%Y%m%d-%H%M%S}-{now.microsecond // 1000:03d}"
        rid, n = stamp, 1
        while (root / rid).exists():
            n += 1
            rid = f"{stamp}-{n}"
        rdir = root / rid
        rdir.mkdir(parents=True)

        summary = rdir / "summary.jsonl"
        inst = cls(root_dir=root, run_id=rid, run_dir=rdir, summary_path=summary)
        inst._fs = open(summary, "a", encoding="utf-8")
        return inst

    def close(self) -> None:
        if self._fs:
            self._fs.flush()
            self._fs.close()
            self._fs = None

    def __enter__(self) -> "RunDirectory":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def write_summary(self, row: dict[str, Any]) -> None:
        self._fs.write(json.dumps(_jsonable(row), ensure_ascii=False) + "\n")
        self._fs.flush()

    def write_json(self, name: str, payload: dict[str, Any]) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_jsonable(payload), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return p

    def write_manifest(
        self,
        *,
        command: str,
        config: dict[str, Any],
        seed: int,
        workers: int,
        partial: bool,
        extra: dict[str, Any] | None = None,
    ) -> Path:
        payload: dict[str, Any] = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "record_schema_version": RECORD_SCHEMA_VERSION,
            "estimate_schema_version": ESTIMATE_SCHEMA_VERSION,
            "command": command,
            "run_id": self.run_id,
            "created": datetime.now().astimezone().isoformat(timespec="seconds"),
            "versions": versions(),
            "config": config,
            "seed": seed,
            "workers": workers,
            "partial": partial,
        }
        if extra:
            payload.update(extra)
        return self.write_json("manifest.json", payload)

    def write_samples(self, name: str, records: Sequence[CouplingRecord]) -> Path:
        p = self.path(name)
        write_records(p, records)
        return p

    def write_table(self, name: str, rows: Iterable[dict[str, Any]]) -> Path:
        p = self.path(name)
        pd.DataFrame(list(rows)).to_csv(p, index=False, float_format="%.17g", lineterminator="\n")
        return p

    def write_estimate(self, name: str, payload: dict[str, Any]) -> Path:
        return self.write_json(name, {"schema_version": ESTIMATE_SCHEMA_VERSION, **payload})
