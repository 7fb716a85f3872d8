from typing import Any, Dict, Optional

from vertcohirf.core.logging import get_logger
from vertcohirf.schemas import ExperimentConfig
from vertcohirf.tasks.celery_app import celery_app

logger = get_logger(__name__)


@celery_app.task(bind=True, name="vertcohirf.tasks.experiment.run_repetition")
def run_repetition(
    self, config_payload: Dict[str, Any], seed: int, output_dir: Optional[str] = None
) -> Dict[str, Any]:
    """
    Run one protocol repetition

    Args:
        config_payload: ExperimentConfig as JSON-compatible dict
        seed: Repetition seed (run seed, and dataset seed unless the config fixes one)
        output_dir: Where per-seed artifacts go; None skips writing them

    Returns:
        The repetition's results.json record
    """
    from vertcohirf.services.experiment_service import ExperimentService

    config = ExperimentConfig.model_validate(config_payload)
    logger.info("Starting repetition", task_id=self.request.id, name=config.name, seed=seed)
    try:
        service = ExperimentService(config, output_dir)
        record = service.run_repetition(seed, write_artifacts=output_dir is not None)
    except Exception as e:
        logger.error("Repetition failed", name=config.name, seed=seed, error=str(e))
        raise
    logger.info("Repetition finished", seed=seed, ari=record["ari"], rounds=record["rounds"])
    return record
