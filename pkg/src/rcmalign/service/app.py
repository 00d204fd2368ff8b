"""FastAPI wrapper: one endpoint per pipeline command."""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import CalibrationError, RcmAlignError
from . import handlers, schemas


def create_app() -> FastAPI:
    app = FastAPI(title="rcmalign", version=__version__)

    @app.exception_handler(RcmAlignError)
    async def _domain_error(request, exc: RcmAlignError):
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, CalibrationError):
            payload["details"] = exc.details
        return JSONResponse(status_code=400, content=payload)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        return handlers.simulate(req)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return handlers.train(req)

    @app.post("/estimate-force", response_model=schemas.EstimateForceResponse)
    def estimate_force(req: schemas.EstimateForceRequest):
        return handlers.estimate_force(req)

    @app.post("/calibrate-k", response_model=schemas.CalibrateKResponse)
    def calibrate_k(req: schemas.CalibrateKRequest):
        return handlers.calibrate_k(req)

    @app.post("/estimate-d", response_model=schemas.EstimateDResponse)
    def estimate_d(req: schemas.EstimateDRequest):
        return handlers.estimate_d(req)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        return handlers.sweep(req)

    @app.post("/verify", response_model=schemas.VerifyResponse)
    def verify(req: schemas.VerifyRequest):
        return handlers.verify(req)

    return app


app = create_app()
