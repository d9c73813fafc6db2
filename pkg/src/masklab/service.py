"""HTTP service exposing train / attack / diagnose / sweep over the core package."""

from __future__ import annotations

import base64
from typing import List

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import runner
from .config import parse_config_text
from .errors import (ConfigError, DataFormatError, MaskLabError, NonFiniteError,
                     TrainingDivergence)


class TrainRequest(BaseModel):
    config_text: str


class TrainResponse(BaseModel):
    checkpoint_b64: str
    trace: List[float]
    trace_csv: str
    train_accuracy: float
    test_accuracy: float


class AttackRequest(BaseModel):
    config_text: str
    checkpoint_b64: str
    threads: int = 1


class AttackReportEntry(BaseModel):
    name: str
    eps: float
    report: dict
    records_csv: str


class AttackResponse(BaseModel):
    reports: List[AttackReportEntry]


class DiagnoseRequest(BaseModel):
    config_text: str
    checkpoint_b64: str
    threads: int = 1


class DiagnoseResponse(BaseModel):
    report: dict
    summary: str


class SweepRequest(BaseModel):
    c: float = 0.01
    decimals: int = 0
    lo: float = 0.0
    hi: float = 0.3
    n: int = 256


class SweepResponse(BaseModel):
    csv: str


app = FastAPI(title="masklab", description="Adversarial-robustness evaluation lab")


@app.exception_handler(MaskLabError)
async def masklab_error_handler(_request, exc: MaskLabError):
    if isinstance(exc, (ConfigError, DataFormatError)):
        kind, status = "config", 422
    elif isinstance(exc, (TrainingDivergence, NonFiniteError)):
        kind, status = "numeric", 500
    else:
        kind, status = "internal", 500
    return JSONResponse(status_code=status, content={"kind": kind, "message": str(exc)})


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest):
    config = parse_config_text(req.config_text)
    outcome = runner.run_train(config)
    return TrainResponse(
        checkpoint_b64=base64.b64encode(outcome.checkpoint).decode("ascii"),
        trace=outcome.trace,
        trace_csv=outcome.trace_csv(),
        train_accuracy=outcome.train_accuracy,
        test_accuracy=outcome.test_accuracy,
    )


@app.post("/attack", response_model=AttackResponse)
def attack(req: AttackRequest):
    config = parse_config_text(req.config_text)
    checkpoint = base64.b64decode(req.checkpoint_b64)
    entries = runner.run_attack(config, checkpoint, threads=req.threads)
    return AttackResponse(reports=[AttackReportEntry(**e) for e in entries])


@app.post("/diagnose", response_model=DiagnoseResponse)
def diagnose(req: DiagnoseRequest):
    config = parse_config_text(req.config_text)
    checkpoint = base64.b64decode(req.checkpoint_b64)
    result = runner.run_diagnose(config, checkpoint, threads=req.threads)
    return DiagnoseResponse(report=result["report"], summary=result["summary"])


@app.post("/sweep", response_model=SweepResponse)
def sweep(req: SweepRequest):
    return SweepResponse(csv=runner.run_sweep(c=req.c, decimals=req.decimals,
                                              lo=req.lo, hi=req.hi, n=req.n))


def main():  # pragma: no cover - manual entry point
    import uvicorn

    uvicorn.run(app, host="127.0.0.1", port=8000)


if __name__ == "__main__":  # pragma: no cover
    main()
