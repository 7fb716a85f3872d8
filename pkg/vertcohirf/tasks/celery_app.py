from celery import Celery

from vertcohirf.core.config import settings
from vertcohirf.core.logging import setup_logging

# Setup logging for Celery workers
setup_logging()

celery_app = Celery(
    "vertcohirf",
    broker=settings.celery_broker_url,
    backend=settings.celery_result_backend,
    include=["vertcohirf.tasks.experiment"],
)

celery_app.conf.update(
    task_serializer="json",
    accept_content=["json"],
    result_serializer="json",
    timezone="UTC",
    enable_utc=True,
    task_track_started=True,
    task_always_eager=settings.celery_task_always_eager,
    task_eager_propagates=True,
    task_time_limit=settings.max_task_timeout,
    task_soft_time_limit=max(settings.max_task_timeout - 60, 1),
    worker_prefetch_multiplier=1,
    task_acks_late=True,
    result_compression="gzip",
)
