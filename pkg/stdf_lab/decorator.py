import inspect
from functools import wraps
from typing import Callable

from opentelemetry import trace


def start_as_current_span(tracer: trace.Tracer, span_name: str) -> Callable:
    """Run the wrapped driver inside a span; drivers declaring `span` get the live span."""

    def decorator(func: Callable):
        wants_span = "span" in inspect.signature(func).parameters

        @wraps(func)
        def func_wrapper(*args, **kwargs):
            with tracer.start_as_current_span(span_name) as span:
                if wants_span:
                    kwargs["span"] = span
                return func(*args, **kwargs)

        return func_wrapper

    return decorator
