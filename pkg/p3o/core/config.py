from pydantic import Field
from pydantic_settings import BaseSettings

class Settings(BaseSettings):
    PROJECT_NAME: str = "P3O"
    VERSION: str = "0.1.0"

    # Rollout parallelism
    P3O_NUM_THREADS: int = Field(default=1, ge=1)

    # Application
    LOG_LEVEL: str = "INFO"
    DEBUG: bool = False

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"

settings = Settings()
