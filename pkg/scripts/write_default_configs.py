import logging
import sys
from pathlib import Path

from app.schemas.dataset import DatasetName
from app.schemas.run import RunConfig, RunMode
from app.services.config_file_service import build_config, write_config

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def write_default_configs(out_dir: Path) -> None:
    """
    Пишет конфигурации по умолчанию для каждой пары (датасет, режим)
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    for dataset in DatasetName:
        for mode in RunMode:
            config: RunConfig = build_config({"dataset": dataset.value, "mode": mode.value})
            path = out_dir / f"{dataset.value}-{mode.value}.conf"
            write_config(config, path)
            logger.info(f"Wrote {path}")


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("configs")
    write_default_configs(target)
