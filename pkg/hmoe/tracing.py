"""OpenTelemetry-based tracing for training and CLI runs."""

import functools
import inspect
import json
import logging
import threading
import time
from contextlib import contextmanager
from typing import Any, Callable, Optional

from opentelemetry import trace
from opentelemetry.sdk.resources import SERVICE_NAME, Resource
from opentelemetry.sdk.trace import ReadableSpan, TracerProvider
from opentelemetry.trace import Status, StatusCode

from .records import TraceSpan

logger = logging.getLogger(__name__)

# Global tracer
_tracer: Optional[trace.Tracer] = None
_tracer_provider: Optional[TracerProvider] = None
_service_name: str = "hmoe"


class SpanCollector:
    """Thread-safe in-process buffer of finished spans."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._spans: list[TraceSpan] = []

    def add(self, span: TraceSpan) -> None:
        with self._lock:
            self._spans.append(span)

    def drain(self) -> list[TraceSpan]:
        with self._lock:
            spans, self._spans = self._spans, []
        return spans

    def __len__(self) -> int:
        with self._lock:
            return len(self._spans)


_collector = SpanCollector()


def get_collector() -> SpanCollector:
    return _collector


def is_tracing_enabled() -> bool:
    return _tracer is not None


def init_tracing(service_name: str = "hmoe") -> None:
    """
    Initialize OpenTelemetry tracing.

    Finished spans are converted to ``TraceSpan`` records and kept in the
    collector returned by ``get_collector()``.

    Args:
        service_name: Name of the service for resource identification
    """
    global _tracer, _tracer_provider, _service_name

    if _tracer is not None:
        logger.debug("Tracing already initialized")
        return

    try:
        resource = Resource(attributes={SERVICE_NAME: service_name})
        _tracer_provider = TracerProvider(resource=resource)
        _tracer_provider.add_span_processor(HMOESpanProcessor(_collector))
        # a private provider; the process-wide OTel provider is left alone
        _tracer = _tracer_provider.get_tracer(__name__)
        _service_name = service_name
        logger.info("✓ OpenTelemetry tracing initialized")

    except Exception as e:
        logger.error(f"Failed to initialize tracing: {e}", exc_info=True)


def shutdown_tracing() -> None:
    """Shutdown tracing and flush remaining spans."""
    global _tracer, _tracer_provider

    if _tracer_provider is not None:
        _tracer_provider.shutdown()
        _tracer_provider = None
        _tracer = None
        logger.info("✓ Tracing shutdown complete")


def observe(
    name: Optional[str] = None,
    attributes: Optional[dict[str, Any]] = None,
    capture_args: bool = False,
    capture_result: bool = False,
) -> Callable:
    """
    Decorator to trace function execution.

    Runs the function untraced while tracing is not initialized.

    Args:
        name: Span name (defaults to function name)
        attributes: Additional attributes to attach to span
        capture_args: Whether to capture function arguments
        capture_result: Whether to capture return value

    Example:
        ```python
        @observe(name="run_training", attributes={"phase": "train"})
        def run_training(config, train, val=None):
            ...
        ```
    """

    def decorator(func: Callable) -> Callable:
        span_name = name or func.__qualname__
        static_attributes = dict(attributes or {})

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            if _tracer is None:
                return func(*args, **kwargs)

            with _tracer.start_as_current_span(span_name) as span:
                start_time = time.time()
                span.set_attribute("function.name", func.__name__)
                span.set_attribute("function.module", func.__module__)
                for key, value in static_attributes.items():
                    span.set_attribute(key, value)
                if capture_args:
                    _capture_arguments(span, func, args, kwargs)

                try:
                    result = func(*args, **kwargs)
                    if capture_result and result is not None:
                        span.set_attribute("function.result", _safe_json_dumps(result))
                    span.set_status(Status(StatusCode.OK))
                    return result

                except Exception as e:
                    span.set_status(Status(StatusCode.ERROR, str(e)))
                    span.record_exception(e)
                    raise

                finally:
                    span.set_attribute("function.duration_ms", (time.time() - start_time) * 1000)

        return wrapper

    return decorator


@contextmanager
def trace_context(
    name: str,
    attributes: Optional[dict[str, Any]] = None,
):
    """
    Context manager for manual span creation.

    Example:
        ```python
        with trace_context("validation", attributes={"step": step}):
            metrics = evaluate(model, val)
        ```
    """
    if _tracer is None:
        yield None
        return

    with _tracer.start_as_current_span(name) as span:
        for key, value in (attributes or {}).items():
            span.set_attribute(key, value)

        try:
            yield span
            span.set_status(Status(StatusCode.OK))
        except Exception as e:
            span.set_status(Status(StatusCode.ERROR, str(e)))
            span.record_exception(e)
            raise


def add_span_attribute(key: str, value: Any) -> None:
    """Add attribute to the current active span, if any."""
    current_span = trace.get_current_span()
    if current_span and current_span.is_recording():
        current_span.set_attribute(key, value)
    else:
        logger.debug(f"No active span for attribute '{key}'")


def add_span_event(name: str, attributes: Optional[dict[str, Any]] = None) -> None:
    """Add event to the current active span, if any."""
    current_span = trace.get_current_span()
    if current_span and current_span.is_recording():
        current_span.add_event(name, attributes=attributes or {})
    else:
        logger.debug(f"No active span for event '{name}'")


class HMOESpanProcessor:
    """Span processor that converts finished spans and hands them to a collector."""

    def __init__(self, collector: SpanCollector):
        self.collector = collector

    def on_start(self, span: trace.Span, parent_context=None) -> None:
        pass

    def on_end(self, span: ReadableSpan) -> None:
        if span is None:
            return
        try:
            self.collector.add(convert_span(span))
            logger.debug(f"Collected trace span: {span.name}")
        except Exception as e:
            logger.error(f"Failed to collect trace span: {e}")

    def shutdown(self) -> None:
        pass

    def force_flush(self, timeout_millis: int = 30000) -> bool:
        return True


def convert_span(span: ReadableSpan) -> TraceSpan:
    """Convert an OpenTelemetry span to a ``TraceSpan`` record."""
    start_time = span.start_time / 1e9
    end_time = span.end_time / 1e9 if span.end_time else time.time()

    attributes = dict(span.attributes) if span.attributes else {}
    input_data = {}
    output_data = None
    for key, value in list(attributes.items()):
        if key.startswith("function.args."):
            input_data[key.removeprefix("function.args.")] = json.loads(value)
            del attributes[key]
        elif key == "function.result":
            output_data = json.loads(value)
            del attributes[key]

    status = "success"
    error_message = None
    if span.status is not None and span.status.status_code == StatusCode.ERROR:
        status = "error"
        error_message = span.status.description

    events = [
        {
            "name": event.name,
            "timestamp": event.timestamp / 1e9,
            "attributes": dict(event.attributes) if event.attributes else {},
        }
        for event in span.events
    ]

    return TraceSpan(
        trace_id=format(span.context.trace_id, "032x"),
        span_id=format(span.context.span_id, "016x"),
        parent_span_id=format(span.parent.span_id, "016x") if span.parent else None,
        name=span.name,
        kind=span.kind.name.lower(),
        start_time=start_time,
        end_time=end_time,
        duration_ms=(end_time - start_time) * 1000,
        status=status,
        error_message=error_message,
        input=input_data or None,
        output=output_data,
        attributes=attributes,
        events=events,
        service_name=_service_name,
    )


def _json_default(obj: Any) -> Any:
    if hasattr(obj, "to_dict") and callable(obj.to_dict):
        return obj.to_dict()
    if hasattr(obj, "tolist") and callable(obj.tolist):
        return obj.tolist()
    return str(obj)


def _safe_json_dumps(obj: Any) -> str:
    try:
        return json.dumps(obj, default=_json_default)
    except Exception:
        return json.dumps(str(obj))


def _capture_arguments(span: trace.Span, func: Callable, args: tuple, kwargs: dict) -> None:
    """Capture function arguments as span attributes."""
    try:
        bound_args = inspect.signature(func).bind_partial(*args, **kwargs)
        bound_args.apply_defaults()
        for param_name, param_value in bound_args.arguments.items():
            if param_name in ("self", "cls"):
                continue
            span.set_attribute(f"function.args.{param_name}", _safe_json_dumps(param_value))
    except Exception as e:
        logger.debug(f"Failed to capture arguments: {e}")
