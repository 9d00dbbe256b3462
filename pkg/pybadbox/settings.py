from pathlib import Path
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings. Every field can be overridden with a BADBOX_* environment variable."""

    model_config = SettingsConfigDict(env_prefix='BADBOX_', extra='ignore')

    log_level: str = 'INFO'
    out_dir: Path = Path('badbox-runs')
    jobs: int = Field(default=1, ge=1)
    show_progress: bool = True
    default_seed: int = 0

    @field_validator('log_level')
    @classmethod
    def upper_level(cls, value: str) -> str:
        value = value.upper()
        if value not in {'DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'}:
            raise ValueError(f"Unknown log level: {value}")
        return value
