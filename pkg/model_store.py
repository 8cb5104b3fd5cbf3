# model_store.py
import asyncio
import os
import time
from pathlib import Path
from typing import Optional

from config_factory import CONF
from logging_wrapper import apply_decorator_to_module
from longformer_engine.checkpoint import load_checkpoint
from longformer_engine.errors import UsageError
from longformer_engine.model import Model

from app_logger import get_logger

logger = get_logger(__name__)


class ModelStore:
    """Process-wide cache of the checkpoint served by /generate"""
    model: Optional[Model] = None
    path: Optional[str] = CONF.checkpoint_path
    loaded_mtime: float = 0
    last_load_time: float = 0

    @classmethod
    async def load(cls, path: Optional[str] = None) -> Model:
        """
        Load a checkpoint into the cache.

        Args:
            path: Checkpoint file; the configured LF_CKPT path when omitted

        Returns:
            Model: The loaded model, switched to evaluation mode
        """
        path = path or cls.path
        if not path:
            raise UsageError("no checkpoint configured; set LF_CKPT or load one explicitly")
        model = await asyncio.to_thread(load_checkpoint, path)
        model.eval()
        cls.model = model
        cls.path = str(path)
        cls.loaded_mtime = os.path.getmtime(path)
        cls.last_load_time = time.time()
        return model

    @classmethod
    async def get_model(cls) -> Model:
        """
        Current model, loading it on first use and reloading it when the
        checkpoint file has been replaced since it was loaded.
        """
        if cls.model is None:
            return await cls.load()
        if cls.path and Path(cls.path).exists() and os.path.getmtime(cls.path) > cls.loaded_mtime:
            logger.info("Checkpoint %s changed on disk, reloading", cls.path)
            return await cls.load(cls.path)
        return cls.model

    @classmethod
    def set_model(cls, model: Model) -> None:
        """Serve an in-memory model (tests, notebooks); disables file reloads"""
        model.eval()
        cls.model = model
        cls.path = None
        cls.loaded_mtime = 0

    @classmethod
    async def close(cls) -> None:
        cls.model = None

    @classmethod
    def health_check(cls) -> bool:
        return cls.model is not None


# Apply the decorator to all functions in this module
apply_decorator_to_module(logger)(__name__)
