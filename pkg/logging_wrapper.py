import functools
import inspect
import logging
import sys
import time
from typing import Any, Callable, List, Optional, Type, get_args, get_origin

import numpy as np
from pydantic import BaseModel, ValidationError

from longformer_engine.errors import OutputValidationError
from longformer_engine.tensor import Tensor

MAX_ARG_REPR = 500
MAX_SIGNATURE = 1000


def describe_value(obj: Any) -> str:
    """Short repr for logging: arrays and tensors by shape, everything else truncated"""
    if isinstance(obj, Tensor):
        return f"Tensor{tuple(obj.shape)}[{obj.dtype}]"
    if isinstance(obj, np.ndarray):
        return f"ndarray{obj.shape}[{obj.dtype}]"
    if isinstance(obj, (bytes, bytearray)) and len(obj) > 64:
        return f"{type(obj).__name__}[{len(obj)} bytes]"
    if isinstance(obj, BaseModel):
        return f"{type(obj).__name__}({obj.model_dump_json()[:MAX_ARG_REPR]})"
    return repr(obj)[:MAX_ARG_REPR]


def _signature(args, kwargs) -> str:
    parts = [describe_value(a) for a in args]
    parts += [f"{k}={describe_value(v)}" for k, v in kwargs.items()]
    signature = ", ".join(parts)
    if len(signature) > MAX_SIGNATURE:
        signature = signature[:MAX_SIGNATURE] + "..."
    return signature


def _validate(func_name: str, logger: logging.Logger, output_model, result) -> None:
    try:
        origin = get_origin(output_model)
        if origin is list or origin is List:
            item_model = get_args(output_model)[0]
            for item in result:
                item_model.model_validate(item)
        elif issubclass(output_model, BaseModel):
            output_model.model_validate(result)
        else:
            raise ValueError("Unsupported output_model type")
    except ValidationError as ve:
        logger.error(f"{func_name}: Output validation failed: {ve}")
        raise OutputValidationError(f"{func_name}: output validation failed") from ve


def _log_timing(logger: logging.Logger, func_name: str, func_time: float, total_time: float) -> None:
    logger.info(
        f"{func_name} execution details:\n"
        f"Timing:\n"
        f"  - Core function execution: {func_time:.4f}s\n"
        f"  - Logging/validation overhead: {total_time - func_time:.4f}s\n"
        f"  - Total time: {total_time:.4f}s"
    )


def log_and_validate(
    logger: logging.Logger,
    validate_output: bool = False,
    output_model: Optional[Type[BaseModel]] = None,
):
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        async def async_wrapper(*args, **kwargs):
            wrapper_start = time.perf_counter()
            logger.info(f"{func.__name__} called with args: {_signature(args, kwargs)}")
            try:
                func_start = time.perf_counter()
                result = await func(*args, **kwargs)
                func_time = time.perf_counter() - func_start
                if validate_output and output_model:
                    _validate(func.__name__, logger, output_model, result)
                _log_timing(logger, func.__name__, func_time, time.perf_counter() - wrapper_start)
                return result
            except Exception as e:
                total_time = time.perf_counter() - wrapper_start
                logger.exception(f"{func.__name__}: Error after {total_time:.4f}s: {str(e)}")
                raise

        @functools.wraps(func)
        def sync_wrapper(*args, **kwargs):
            wrapper_start = time.perf_counter()
            logger.info(f"{func.__name__} called with args: {_signature(args, kwargs)}")
            try:
                func_start = time.perf_counter()
                result = func(*args, **kwargs)
                func_time = time.perf_counter() - func_start
                if validate_output and output_model:
                    _validate(func.__name__, logger, output_model, result)
                _log_timing(logger, func.__name__, func_time, time.perf_counter() - wrapper_start)
                return result
            except Exception as e:
                total_time = time.perf_counter() - wrapper_start
                logger.exception(f"{func.__name__}: Error after {total_time:.4f}s: {str(e)}")
                raise

        return async_wrapper if inspect.iscoroutinefunction(func) else sync_wrapper

    return decorator


def apply_decorator_to_module(logger):
    """Wrap every public function defined in a module with log_and_validate"""
    def wrapper(module):
        if isinstance(module, str):
            module_name = module
            module_obj = sys.modules[module]
        else:
            module_name = module.__name__
            module_obj = module

        for name, obj in inspect.getmembers(module_obj):
            if not inspect.isfunction(obj) or obj.__module__ != module_name or name.startswith("_"):
                continue
            if getattr(obj, "_is_decorated", False):
                continue

            validate_output = getattr(obj, "_validate_output", False)
            new_func = log_and_validate(logger, validate_output=validate_output)(obj)
            new_func._is_decorated = True
            new_func._validate_output = validate_output
            setattr(module_obj, name, new_func)

    return wrapper
