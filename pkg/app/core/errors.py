from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from app.schemas.losses import LossBreakdown


class TLDRError(Exception):
    """Базовая ошибка приложения. exit_code используется CLI."""

    exit_code: int = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message
        self.stage: Optional[str] = None

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ConfigurationError(TLDRError):
    exit_code = 2


class ArgumentError(TLDRError, ValueError):
    exit_code = 2


class IngestionError(TLDRError):
    exit_code = 3


class TrainingError(TLDRError):
    exit_code = 4

    def __init__(
        self,
        message: str,
        epoch: Optional[int] = None,
        step: Optional[int] = None,
        breakdown: Optional["LossBreakdown"] = None,
    ):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.breakdown = breakdown


class NumericError(TLDRError):
    exit_code = 4


class CapabilityError(TLDRError):
    exit_code = 5


class StageError(TLDRError):
    """Неожиданная ошибка внутри стадии прогона."""

    exit_code = 1
