import os
from functools import lru_cache
from typing import Optional

import torch
from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.abspath(os.path.join(current_dir, "..", ".."))
dotenv_path = os.path.join(project_root, ".env")

if os.path.exists(dotenv_path):
    load_dotenv(dotenv_path=dotenv_path, override=True)


class Settings(BaseSettings):
    """
    Настройки окружения.
    Читаются из переменных окружения с префиксом TLDR_ (и из .env, если он есть).
    """

    DATA_ROOT: str = "./data"

    RUNS_ROOT: str = "./runs"

    DATA_DOWNLOAD: bool = False

    DEVICE: str = "auto"

    LOG_LEVEL: str = "INFO"

    PROJECT_NAME: str = "Training-Like Data Reconstruction"

    PROJECT_VERSION: str = "0.1.0"

    DEBUG: bool = False

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="TLDR_",
        extra="ignore",
        case_sensitive=False,
    )


@lru_cache(maxsize=None)
def get_settings() -> Settings:
    return Settings()


def resolve_device(device: Optional[str] = None) -> torch.device:
    """Переводит значение DEVICE ("auto", "cpu", "cuda:0") в torch.device."""
    name = device or get_settings().DEVICE
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)
