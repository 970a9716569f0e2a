import os
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from .errors import InvalidParameter

ENV_PREFIX = "MIXTURECRAFT_"


class Settings(BaseModel):
    """Process-wide engine settings read from the environment"""

    quad_order: int = Field(default=8, ge=2, le=64)
    n_jobs: int = Field(default=1, ge=1)
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "WARNING"
    log_format: Literal["json", "console"] = "json"


def get_settings() -> Settings:
    """Build settings from MIXTURECRAFT_* variables (a local .env is honoured)."""
    load_dotenv()
    raw = {}
    for field in Settings.model_fields:
        value = os.getenv(ENV_PREFIX + field.upper())
        if value is None or value == "":
            continue
        raw[field] = value.upper() if field == "log_level" else value.lower() if field == "log_format" else value
    try:
        return Settings(**raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        name = ENV_PREFIX + str(err["loc"][0]).upper()
        raise InvalidParameter(f"{name}: {err['msg']}") from exc
