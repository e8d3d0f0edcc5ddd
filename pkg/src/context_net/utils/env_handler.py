import os
import re
from typing import Any, List, Optional


class EnvHandler:
    """Expand ``${VAR}`` and ``${VAR:-fallback}`` references in loaded config values.

    Only string leaves are rewritten; numbers, booleans and ``None`` pass
    through untouched so that pydantic sees the original YAML types.
    """

    ENV_VAR_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")

    @classmethod
    def substitute_env_vars(cls, config: Any) -> Any:
        """Return a copy of ``config`` with every reference expanded

        Raises:
            ValueError: If a reference without fallback names an unset variable
        """
        if isinstance(config, dict):
            return {key: cls.substitute_env_vars(value) for key, value in config.items()}
        if isinstance(config, list):
            return [cls.substitute_env_vars(value) for value in config]
        if isinstance(config, str):
            return cls.ENV_VAR_PATTERN.sub(cls._resolve, config)
        return config

    @staticmethod
    def _resolve(match: "re.Match[str]") -> str:
        name, fallback = match.group(1), match.group(2)
        value: Optional[str] = os.getenv(name)
        if value is not None:
            return value
        if fallback is not None:
            return fallback
        raise ValueError(f"Environment variable '{name}' not found")

    @classmethod
    def _references(cls, config: Any):
        if isinstance(config, str):
            yield from cls.ENV_VAR_PATTERN.finditer(config)
        elif isinstance(config, dict):
            for value in config.values():
                yield from cls._references(value)
        elif isinstance(config, list):
            for value in config:
                yield from cls._references(value)

    @classmethod
    def missing_env_vars(cls, config: Any) -> List[str]:
        """Sorted names of unset variables referenced without a fallback"""
        return sorted({
            m.group(1) for m in cls._references(config)
            if m.group(2) is None and os.getenv(m.group(1)) is None
        })

    @classmethod
    def validate_required_env_vars(cls, config: Any) -> None:
        """Raise ``ValueError`` listing every missing variable at once"""
        missing = cls.missing_env_vars(config)
        if missing:
            raise ValueError(f"Missing required environment variables: {', '.join(missing)}")
