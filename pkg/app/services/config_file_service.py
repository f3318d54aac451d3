"""
Формат файла конфигурации прогона: плоские ключи через точку, значение - JSON-литерал.

    dataset = "mnist"
    subset_size = 1000
    weights.gamma = 0.1
    classifier.fc_hidden = [256]

Пустые строки и строки, начинающиеся с #, игнорируются. Строки можно писать
без кавычек; значение в кавычках всегда строка. Разбор - парсером python-dotenv,
без подстановки ${...}.
"""

import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from dotenv.parser import Binding, parse_stream
from pydantic import ValidationError

from app.core.errors import ConfigurationError
from app.schemas.run import RunConfig

logger = logging.getLogger(__name__)


def flatten(tree: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for dotted, value in flat.items():
        node = tree
        *parents, leaf = dotted.split(".")
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(
                    f"Key '{dotted}' conflicts with scalar key '{part}'"
                )
            node = child
        if isinstance(node.get(leaf), dict):
            raise ConfigurationError(f"Key '{dotted}' conflicts with a section of the same name")
        node[leaf] = value
    return tree


def decode_value(raw: Optional[str]) -> Any:
    if raw is None:
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _error_key(error: Dict[str, Any]) -> str:
    return ".".join(str(part) for part in error.get("loc", ()))


def build_config(values: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(unflatten(values))
    except ValidationError as e:
        details = "; ".join(f"{_error_key(err)}: {err['msg']}" for err in e.errors())
        raise ConfigurationError(f"Invalid run configuration: {details}") from e


def _decode_binding(binding: Binding) -> Any:
    # строка в кавычках всегда остаётся строкой, даже если похожа на JSON
    literal = binding.original.string.partition("=")[2].lstrip()
    if literal[:1] in ("'", '"'):
        return binding.value
    return decode_value(binding.value)


def parse_config(text: str) -> RunConfig:
    values: Dict[str, Any] = {}
    for binding in parse_stream(io.StringIO(text)):
        if binding.error:
            raise ConfigurationError(
                f"Malformed config line {binding.original.line}: "
                f"{binding.original.string.strip()}"
            )
        if binding.key is not None:
            values[binding.key] = _decode_binding(binding)
    return build_config(values)


def serialize_config(config: RunConfig) -> str:
    flat = flatten(config.model_dump(mode="json"))
    lines = [f"{key} = {json.dumps(flat[key], ensure_ascii=False)}" for key in sorted(flat)]
    return "\n".join(lines) + "\n"


def read_config(path: Path) -> RunConfig:
    if not path.exists():
        raise ConfigurationError(f"Config file {path} does not exist")
    logger.info(f"Reading run configuration from {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def write_config(config: RunConfig, path: Path) -> Path:
    path.write_text(serialize_config(config), encoding="utf-8")
    return path


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Применяет точечные переопределения (например, из CLI) и заново валидирует конфиг."""
    flat = flatten(config.model_dump(mode="json"))
    new_mode = overrides.get("mode")
    if new_mode is not None and str(getattr(new_mode, "value", new_mode)) != config.mode.value:
        # веса берутся из значений по умолчанию нового режима
        flat = {key: value for key, value in flat.items() if not key.startswith("weights.")}
    for key, value in overrides.items():
        if value is not None:
            flat[key] = value
    return build_config(flat)
