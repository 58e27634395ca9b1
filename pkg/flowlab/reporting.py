#!/usr/bin/env python3
"""
Reporting
Residual report type, shortest round-trip CSV tables, JSON summaries and the
run manifest. Every file written here carries the config hash.
"""

import csv
import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .errors import OutputError

SCHEMA_VERSION = "1.0"


class ResidualKind(Enum):
    A = "A"
    B = "B"
    R = "R"
    CONCENTRATION = "concentration"
    CHAIN_RULE = "chain_rule"
    STABILITY = "stability"


@dataclass
class ResidualReport:
    kind: ResidualKind
    params: Dict[str, Any]
    value: float
    sample_count: int
    seed: Optional[int] = None
    extra: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= 0.0:
            raise ValueError(f"residual value must be nonnegative, got {self.value}")

    @property
    def delta(self) -> float:
        return abs(float(self.params["s_prime"]) - float(self.params["s"]))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data


def format_number(value: Any) -> str:
    """Shortest decimal string that round-trips to the same double"""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def config_hash(canonical: str) -> str:
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path: Union[str, Path]) -> str:
    """sha256 of the file bytes"""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_table(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]],
                config_digest: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            handle.write(f"# config_hash={config_digest}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(list(header))
            for row in rows:
                writer.writerow([format_number(v) for v in row])
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def read_table(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_summary(path: Union[str, Path], summary: Dict[str, Any], config_digest: str) -> Path:
    """Structured text summary read back by the plot emitter"""
    path = Path(path)
    payload = {"config_hash": config_digest, "schema_version": SCHEMA_VERSION, **_jsonable(summary)}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def write_manifest(out_dir: Union[str, Path], config_digest: str, seed: int,
                   experiment: str, artifacts: Sequence[str]) -> Path:
    import matplotlib
    import scipy
    import sympy

    manifest = {
        "config_hash": config_digest,
        "seed": seed,
        "experiment": experiment,
        "artifacts": sorted(artifacts),
        "created": datetime.now(timezone.utc).isoformat(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "sympy": sympy.__version__,
            "matplotlib": matplotlib.__version__,
            "flowlab": _package_version(),
        },
    }
    path = Path(out_dir) / "manifest.json"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def _package_version() -> str:
    from . import __version__
    return __version__
