from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    OUTPUT_DIR: str = Field(
        default="results", description="Default directory for CSV artifacts"
    )
    WORKERS: int = Field(default=1, ge=1, description="Default worker pool size")
    LOG_LEVEL: str = Field(default="INFO", description="Root log level")
    DEBUG: bool = Field(default=False, description="Debug mode")
    GAMMA_MAX: float = Field(
        default=1.0,
        gt=0.0,
        description="Step-size bound used when a bare float is promoted to StepSize",
    )
    FLOAT_DIGITS: int = Field(
        default=17, ge=1, description="Significant digits for CSV float output"
    )

    model_config = {
        "env_file": ".env",
        "env_prefix": "STEPSIM_",
        "case_sensitive": True,
        "extra": "ignore",
    }


settings = Settings()
