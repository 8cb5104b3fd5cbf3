import os
from dataclasses import dataclass
from typing import Mapping, Optional

THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _env_int(env: Mapping[str, str], key: str, default: int) -> int:
    raw = env.get(key)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"{key} must be an integer, got {raw!r}") from exc


@dataclass
class EngineConfig:
    threads: int = 1
    # None when LF_SEED is unset; config documents then keep their own seed
    seed: Optional[int] = None
    log_file: str = "longformer.log"
    checkpoint_path: Optional[str] = None
    dtype: str = "float32"

    # API endpoints
    pattern_render: str = "/pattern/render"
    pattern_receptive_field: str = "/pattern/receptive-field"
    bench_memory: str = "/bench/memory"
    generate: str = "/generate"

    # serve
    host: str = "localhost"
    port: int = 8000

    @classmethod
    def load(cls, env: Optional[Mapping[str, str]] = None) -> "EngineConfig":
        env = os.environ if env is None else env
        return cls(
            threads=max(1, _env_int(env, "LF_THREADS", 1)),
            seed=_env_int(env, "LF_SEED", 0) if env.get("LF_SEED") else None,
            log_file=env.get("LF_LOG_FILE", "longformer.log"),
            checkpoint_path=env.get("LF_CKPT") or None,
            dtype=env.get("LF_DTYPE", "float32"),
            host=env.get("LF_HOST", "localhost"),
            port=_env_int(env, "LF_PORT", 8000),
        )

    def resolve_seed(self, fallback: int) -> int:
        """LF_SEED when set, otherwise the seed of the config document"""
        return fallback if self.seed is None else self.seed


def pin_threads(threads: int) -> None:
    """Pin BLAS/OpenMP worker counts; only effective before numpy is first imported"""
    for var in THREAD_ENV_VARS:
        os.environ[var] = str(threads)


CONF = EngineConfig.load()
