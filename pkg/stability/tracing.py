"""OpenTelemetry tracing for scenario runs."""
import logging
import time
from contextlib import contextmanager
from typing import Any, Dict, Optional

import config

logger = logging.getLogger(__name__)

_tracer = None
_tracing_enabled = False


def initialize_tracing():
    global _tracer, _tracing_enabled

    if not config.settings.tracing_enabled:
        logger.info("[TRACING] Tracing is disabled")
        return

    try:
        from opentelemetry import trace
        from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter
        from opentelemetry.sdk.resources import Resource
        from opentelemetry.sdk.trace import TracerProvider
        from opentelemetry.sdk.trace.export import BatchSpanProcessor

        endpoint = config.settings.tracing_endpoint
        logger.info(f"[TRACING] Initializing OTLP tracing with endpoint: {endpoint}")

        provider = TracerProvider(
            resource=Resource.create({"service.name": config.settings.tracing_service_name})
        )
        provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter(endpoint=endpoint, insecure=True)))
        trace.set_tracer_provider(provider)

        _tracer = trace.get_tracer(__name__)
        _tracing_enabled = True

        logger.info("[TRACING] Tracing initialized successfully")
    except ImportError as e:
        logger.warning(f"[TRACING] OpenTelemetry dependencies not installed: {e}")
        logger.warning("[TRACING] Install with: pip install opentelemetry-api opentelemetry-sdk opentelemetry-exporter-otlp-proto-grpc")
    except Exception as e:
        logger.error(f"[TRACING] Failed to initialize tracing: {e}", exc_info=True)


def get_tracer():
    if not _tracing_enabled:
        return None
    return _tracer


def is_enabled() -> bool:
    return _tracing_enabled


@contextmanager
def trace_span(span_name: str, attributes: Optional[Dict[str, Any]] = None):
    """Span around a block; yields None when tracing is off."""
    tracer = get_tracer()
    if tracer is None:
        yield None
        return

    start_time = time.time()
    with tracer.start_as_current_span(span_name) as span:
        if attributes:
            for key, value in attributes.items():
                span.set_attribute(key, str(value))
        try:
            yield span
        finally:
            span.set_attribute("run.duration_seconds", time.time() - start_time)
