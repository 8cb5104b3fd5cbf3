from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from uvicorn.middleware.proxy_headers import ProxyHeadersMiddleware
from config_factory import CONF
from model_store import ModelStore
from app_logger import get_logger

# Import routers
from routers.pattern.endpoints import pattern_router
from routers.bench.endpoints import bench_router
from routers.generate.endpoints import generate_router


logger = get_logger(__name__)


app = FastAPI(title="longformer-engine")

# Include routers
app.include_router(pattern_router)
app.include_router(bench_router)
app.include_router(generate_router)


app.add_middleware(ProxyHeadersMiddleware, trusted_hosts=["*"])

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/health")
async def health():
    return {"status": "ok", "model_loaded": ModelStore.health_check()}


@app.on_event("startup")
async def startup_event():
    # Re-establish our logging configuration after uvicorn startup
    from app_logger import setup_logging

    setup_logging(force_reset=True)
    logger.info("FastAPI startup - logging re-configured")

    if CONF.checkpoint_path:
        await ModelStore.load(CONF.checkpoint_path)
        logger.info(f"Serving checkpoint {CONF.checkpoint_path}")
    else:
        logger.info("No LF_CKPT configured; /generate is unavailable until a model is loaded")
    logger.info("FastAPI startup completed")


@app.on_event("shutdown")
async def shutdown_event():
    logger.info("FastAPI shutdown initiated")
    await ModelStore.close()
    logger.info("FastAPI shutdown completed")
