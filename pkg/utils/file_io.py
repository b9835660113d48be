import csv
import copy
import logging
import re
import threading
import yaml
import numpy as np
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union
from config.constants import (
    SYSTEM_CONFIG_FILE,
    CONFIG_SECTIONS,
    DEFAULT_SYSTEM_CONFIG,
    DEFAULT_YAML_COMMENTS,
    CSV_COLUMNS,
)
from utils.logging import get_logger


class ConfigLoader(yaml.SafeLoader):
    """SafeLoader that also reads exponent forms such as 3e7 and 1.0e7 as floats."""


ConfigLoader.add_implicit_resolver(
    'tag:yaml.org,2002:float',
    re.compile(r'''^(?:[-+]?[0-9][0-9_]*\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?[0-9][0-9_]*[eE][-+]?[0-9]+
    |[-+]?\.[0-9][0-9_]*(?:[eE][-+]?[0-9]+)?)$''', re.X),
    list('-+0123456789.'),
)


class ConfigError(ValueError):
    """Raised when a configuration file cannot be parsed or fails validation."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.field = field
        self.line = line
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


def _key_lines(text: str) -> Dict[str, int]:
    """Map dotted key paths of a YAML mapping document to 1-based line numbers."""
    lines: Dict[str, int] = {}
    root = yaml.compose(text, Loader=ConfigLoader)
    if not isinstance(root, yaml.MappingNode):
        return lines
    for key_node, value_node in root.value:
        lines[key_node.value] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            for sub_key, _ in value_node.value:
                lines[f"{key_node.value}.{sub_key.value}"] = sub_key.start_mark.line + 1
    return lines


def parse_system_config(text: str, source: str = "<string>") -> Dict:
    """
    Parse and structurally validate a system configuration document.

    Missing keys are filled from DEFAULT_SYSTEM_CONFIG. Value ranges are
    validated later by SystemConfig.

    Raises:
        ConfigError: On YAML syntax errors, unknown sections or keys, or non-numeric values
    """
    try:
        raw = yaml.load(text, Loader=ConfigLoader)
        key_lines = _key_lines(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        if mark is not None:
            raise ConfigError(
                f"YAML syntax error in {source} at column {mark.column + 1}: {getattr(e, 'problem', e)}",
                line=mark.line + 1,
            )
        raise ConfigError(f"YAML syntax error in {source}: {e}")

    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source} must contain a mapping of sections")

    config = copy.deepcopy(DEFAULT_SYSTEM_CONFIG)
    for section, values in raw.items():
        if section == 'seed':
            if isinstance(values, bool) or not isinstance(values, int) or values < 0:
                raise ConfigError("seed must be an unsigned integer", field='seed', line=key_lines.get('seed'))
            config['seed'] = values
            continue
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"unknown section '{section}'", field=str(section), line=key_lines.get(str(section)))
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError("section must be a mapping", field=section, line=key_lines.get(section))
        for key, value in values.items():
            dotted = f"{section}.{key}"
            if key not in CONFIG_SECTIONS[section]:
                raise ConfigError(f"unknown key '{key}'", field=dotted, line=key_lines.get(dotted))
            if not _is_number_or_list(value):
                raise ConfigError(f"expected a number, got {value!r}", field=dotted, line=key_lines.get(dotted))
            config[section][key] = value

    config['_lines'] = key_lines
    return config


def _is_number_or_list(value: Any) -> bool:
    if isinstance(value, bool):
        return False
    if isinstance(value, (int, float)):
        return True
    if isinstance(value, list) and value:
        return all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    return False


def load_system_config(yaml_file: Path = SYSTEM_CONFIG_FILE, logger: Optional[logging.Logger] = None) -> Dict:
    """Load a system configuration file merged over the defaults."""
    logger = get_logger(logger)
    yaml_file = Path(yaml_file)
    try:
        with open(yaml_file, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {yaml_file}: {e}")
    config = parse_system_config(text, source=str(yaml_file))
    logger.debug(f"Loaded system config from {yaml_file}")
    return config


def ensure_config_exists(yaml_file: Path = SYSTEM_CONFIG_FILE) -> None:
    """Create default YAML config if it doesn't exist."""
    yaml_file = Path(yaml_file)
    if not yaml_file.exists():
        yaml_file.parent.mkdir(parents=True, exist_ok=True)
        with open(yaml_file, 'w', encoding='utf-8') as f:
            f.write(DEFAULT_YAML_COMMENTS)
            yaml.safe_dump(DEFAULT_SYSTEM_CONFIG, f)


# ---------------------------------------------------------------------------
# Solution documents
# ---------------------------------------------------------------------------

def encode_complex(array: np.ndarray) -> List:
    """Nested lists with every complex entry written as a [re, im] pair."""
    array = np.asarray(array, dtype=complex)
    if array.ndim == 0:
        return [float(array.real), float(array.imag)]
    return [encode_complex(item) for item in array]


def decode_complex(data: Sequence) -> np.ndarray:
    """Inverse of encode_complex."""
    pairs = np.asarray(data, dtype=float)
    if pairs.shape[-1] != 2:
        raise ValueError(f"complex entries must be [re, im] pairs, got trailing dimension {pairs.shape[-1]}")
    return pairs[..., 0] + 1j * pairs[..., 1]


def write_yaml_document(path: Union[str, Path], payload: Dict) -> Path:
    """Write a YAML document with keys kept in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(payload, f, sort_keys=False, default_flow_style=None, width=120)
    return path


def read_yaml_document(path: Union[str, Path]) -> Dict:
    """Read a YAML document written by write_yaml_document."""
    with open(path, 'r', encoding='utf-8') as f:
        payload = yaml.load(f, Loader=ConfigLoader)
    if not isinstance(payload, dict):
        raise ValueError(f"{path} does not contain a YAML mapping")
    return payload


def write_trace_log(path: Union[str, Path], lines: Iterable[str]) -> Path:
    """Write a line-oriented trace log."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for line in lines:
            f.write(f"{line}\n")
    return path


class CsvSink:
    """Serialized CSV writer; rows from worker threads go through one lock and one file handle."""

    def __init__(self, path: Union[str, Path], logger: Optional[logging.Logger] = None,
                 columns: Sequence[str] = tuple(CSV_COLUMNS)):
        self.path = Path(path)
        self.columns = list(columns)
        self.logger = get_logger(logger)
        self._lock = threading.Lock()
        self._file = None
        self._writer = None
        self.rows_written = 0

    def __enter__(self) -> "CsvSink":
        self.open()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def open(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'w', encoding='utf-8', newline='')
        self._writer = csv.DictWriter(self._file, fieldnames=self.columns, quoting=csv.QUOTE_MINIMAL,
                                      lineterminator='\n')
        self._writer.writeheader()

    def write_row(self, row: Dict) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise ValueError(f"CSV row has columns outside the schema: {sorted(unknown)}")
        with self._lock:
            self._writer.writerow({column: _csv_cell(row.get(column)) for column in self.columns})
            self.rows_written += 1

    def write_rows(self, rows: Iterable[Dict]) -> None:
        for row in rows:
            self.write_row(row)

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self.logger.info(f"Wrote {self.rows_written} rows to {self.path}")
            self._file = None


def _csv_cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_csv_rows(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Read a CSV file written by CsvSink."""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))
