from pathlib import Path
from typing import Optional, Dict, Any, List, Sequence
import csv
import json
import logging
import math
import re
from nonlocal_ops import ScalarField

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

# marks a pre-formatted float inside the encoded text; json escapes the NUL as \u0000
_FLOAT_TOKEN = "\x00float:"
_FLOAT_PATTERN = re.compile(r'"\\u0000float:([^"]*)"')

def _format(value: Any) -> str:
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    return str(value)

def _json_float(value: float) -> Any:
    """Finite floats at 17 significant digits; non-finite ones as the strings pydantic reads back"""
    if math.isnan(value):
        return "NaN"
    if math.isinf(value):
        return "Infinity" if value > 0 else "-Infinity"
    text = FLOAT_FORMAT % value
    if not any(mark in text for mark in ".e"):
        text += ".0"
    return _FLOAT_TOKEN + text

def _fixed_precision(payload: Any) -> Any:
    if isinstance(payload, float):
        return _json_float(payload)
    if isinstance(payload, dict):
        return {key: _fixed_precision(value) for key, value in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [_fixed_precision(value) for value in payload]
    return payload

def dumps_fixed(payload: Dict[str, Any]) -> str:
    text = json.dumps(_fixed_precision(payload), sort_keys=True, indent=2, allow_nan=False)
    return _FLOAT_PATTERN.sub(r"\1", text)

class ArtifactStore:
    def __init__(self, directory: str):
        self.directory = Path(directory)
        self.written: List[str] = []

        # Ensure output directory exists
        self._ensure_directory_exists()

    def _ensure_directory_exists(self):
        """Ensure the output directory exists"""
        if not self.directory.exists():
            logger.info(f"Creating output directory: {self.directory}")
            self.directory.mkdir(parents=True, exist_ok=True)

    def _record(self, path: Path) -> str:
        self.written.append(str(path))
        return str(path)

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        """Write a JSON document with sorted keys and 17-digit floats"""
        try:
            path = self.directory / f"{name}.json"
            path.write_text(dumps_fixed(payload) + "\n")

            logger.info(f"Wrote JSON artifact: {path}")
            return self._record(path)
        except Exception as e:
            logger.error(f"Error writing JSON artifact {name}: {str(e)}")
            raise

    def read_json(self, name: str) -> Optional[Dict[str, Any]]:
        """Read a JSON artifact; None when it does not exist"""
        path = self.directory / f"{name}.json"
        if not path.exists():
            logger.warning(f"Artifact not found: {path}")
            return None
        try:
            return json.loads(path.read_text())
        except Exception as e:
            logger.error(f"Error reading JSON artifact {path}: {str(e)}")
            raise

    def write_table(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
        """Write a CSV table, floats with 17 significant digits"""
        try:
            path = self.directory / f"{name}.csv"
            with path.open("w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_format(value) for value in row])

            logger.info(f"Wrote CSV artifact: {path} ({len(rows)} rows)")
            return self._record(path)
        except Exception as e:
            logger.error(f"Error writing CSV artifact {name}: {str(e)}")
            raise

    def write_field(self, name: str, field: ScalarField) -> str:
        """Write a field as x[,y],value rows over the interior nodes"""
        header = ["x", "y"][:field.grid.dim] + ["value"]
        return self.write_table(name, header, field.to_csv_rows())

    def read_table(self, name: str) -> List[Dict[str, str]]:
        """Read a CSV artifact back as a list of rows keyed by header"""
        path = self.directory / f"{name}.csv"
        try:
            with path.open(newline="") as handle:
                return list(csv.DictReader(handle))
        except Exception as e:
            logger.error(f"Error reading CSV artifact {path}: {str(e)}")
            raise

    def write_gnuplot(self, name: str, xs: Sequence[float], ys: Sequence[float], label: str) -> str:
        """Two-column whitespace data file for gnuplot"""
        try:
            path = self.directory / f"{name}.dat"
            lines = [f"# p {label}"]
            lines += [f"{_format(float(x))} {_format(float(y))}" for x, y in zip(xs, ys)]
            path.write_text("\n".join(lines) + "\n")

            logger.info(f"Wrote gnuplot data: {path}")
            return self._record(path)
        except Exception as e:
            logger.error(f"Error writing gnuplot data {name}: {str(e)}")
            raise

    def list_artifacts(self) -> List[str]:
        """List every file in the output directory"""
        artifacts = sorted(str(path) for path in self.directory.iterdir() if path.is_file())
        logger.info(f"Found {len(artifacts)} artifacts in {self.directory}")
        return artifacts
