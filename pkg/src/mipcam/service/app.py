"""FastAPI application wrapping the core pipeline.

Job endpoints (phantom, train, crossval, eval, gradcheck, report) run
synchronously in the request: this is a local, single-operator job runner.
``/localize`` is the inference endpoint a workflow integration would call.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import DatasetWriteError, GenerationError, MipcamError, NumericError, \
    StratificationError, ValidationError
from ..model import load_checkpoint, save_checkpoint
from ..nifti import load_volume, save_mask
from ..phantom import generate_dataset
from ..pipeline import (RunReport, cross_validate, evaluate, gradcheck, load_dataset, localize,
                        prepare_case, render_report, train)
from . import schemas


def _error_response(kind: str, message: str, status: int) -> JSONResponse:
    body = {"error": schemas.ErrorInfo(kind=kind, message=message).model_dump()}
    return JSONResponse(status_code=status, content=body)


def create_app() -> FastAPI:
    app = FastAPI(title="mipcam", version=__version__,
                  description="Weakly supervised PET tumor localization from two MIP views")

    @app.exception_handler(ValidationError)
    async def _config_error(request: Request, exc: ValidationError):
        return _error_response("config", str(exc), 400)

    @app.exception_handler(GenerationError)
    async def _generation_error(request: Request, exc: GenerationError):
        return _error_response("config", str(exc), 400)

    @app.exception_handler(StratificationError)
    async def _stratification_error(request: Request, exc: StratificationError):
        return _error_response("config", str(exc), 400)

    @app.exception_handler(NumericError)
    async def _numeric_error(request: Request, exc: NumericError):
        return _error_response("numeric", str(exc), 500)

    @app.exception_handler(DatasetWriteError)
    async def _io_error(request: Request, exc: DatasetWriteError):
        return _error_response("io", str(exc), 500)

    @app.exception_handler(MipcamError)
    async def _internal_error(request: Request, exc: MipcamError):
        return _error_response("internal", str(exc), 500)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/phantom", response_model=schemas.PhantomResponse)
    def phantom(req: schemas.PhantomRequest) -> schemas.PhantomResponse:
        cases = generate_dataset(req.config.to_config(), req.n_per_class, out_dir=req.out_dir)
        return schemas.PhantomResponse(
            manifest=str(Path(req.out_dir) / "manifest.json"),
            n_cases=len(cases),
            case_ids=[c.case_id for c in cases],
        )

    @app.post("/train", response_model=schemas.TrainResponse)
    def train_endpoint(req: schemas.TrainRequest) -> schemas.TrainResponse:
        cfg = req.train.to_config()
        cases, _ = load_dataset(req.manifest)
        prepared = [prepare_case(c, cfg) for c in cases]
        model, history = train(prepared, cfg, dump_dir=req.out_dir)
        out_dir = Path(req.out_dir)
        ckpt = save_checkpoint(model, out_dir / "model.ckpt",
                               meta={"train": cfg.to_dict(), "n_cases": len(prepared)})
        history_path = out_dir / "history.jsonl"
        with open(history_path, "w") as fh:
            for record in history:
                fh.write(json.dumps(record.to_record(), sort_keys=True) + "\n")
        final = history[-1].losses if history else None
        return schemas.TrainResponse(
            checkpoint=str(ckpt), history=str(history_path), steps=len(history),
            final=None if final is None else schemas.LossRecord(
                loss1=final.classification, loss2=final.distance, combined=final.combined),
        )

    @app.post("/crossval", response_model=schemas.CrossvalResponse)
    def crossval(req: schemas.CrossvalRequest) -> schemas.CrossvalResponse:
        cfg = req.train.to_config()
        cases, _ = load_dataset(req.manifest)
        report = cross_validate(cases, cfg, k=req.folds, out_dir=req.out_dir,
                                write_masks=req.write_masks)
        return schemas.CrossvalResponse(
            report=str(Path(req.out_dir) / "report.json"),
            dice_mean=report.dice_mean, dice_std=report.dice_std,
            accuracy=report.accuracy, n_cases=report.n_cases,
            folds=[schemas.FoldSummary(**fs) for fs in report.fold_summaries],
        )

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_endpoint(req: schemas.EvalRequest) -> schemas.EvalResponse:
        cfg = req.train.to_config()
        cases, _ = load_dataset(req.manifest)
        model, _meta = load_checkpoint(req.checkpoint)
        prepared = [prepare_case(c, cfg) for c in cases]
        records, predictions = evaluate(model, prepared, cfg)
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        records_path = out_dir / "records.jsonl"
        with open(records_path, "w") as fh:
            for record in records:
                fh.write(json.dumps(record.to_record(), sort_keys=True) + "\n")
        if req.write_masks:
            for case, prediction in predictions:
                save_mask(out_dir / "masks" / f"{case.case_id}_pred.nii.gz",
                          prediction.mask3d.data, case.volume.spacing)
        n = len(records)
        dice_mean = sum(r.dice for r in records) / n if n else 0.0
        accuracy = sum(r.correct for r in records) / n if n else 0.0
        return schemas.EvalResponse(records=str(records_path), dice_mean=dice_mean,
                                    accuracy=accuracy, n_cases=n,
                                    skipped=len(prepared) - n)

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck_endpoint(req: schemas.GradcheckRequest) -> schemas.GradcheckResponse:
        report = gradcheck(seed=req.seed, instances=req.instances,
                           tolerance=req.tolerance, lam=req.lam)
        return schemas.GradcheckResponse(
            passed=report.passed, max_rel_error=report.max_rel_error,
            tolerance=report.tolerance, elapsed_seconds=report.elapsed_seconds,
            failures=report.failures,
            instances=[schemas.GradcheckInstanceModel(**inst.to_dict())
                       for inst in report.instances],
        )

    @app.post("/report", response_model=schemas.ReportResponse)
    def report_endpoint(req: schemas.ReportRequest) -> schemas.ReportResponse:
        reports = [RunReport.load(p) for p in req.reports]
        files = render_report(reports, req.out_dir)
        return schemas.ReportResponse(files=[str(f) for f in files])

    @app.post("/localize", response_model=schemas.LocalizeResponse)
    def localize_endpoint(req: schemas.LocalizeRequest) -> schemas.LocalizeResponse:
        cfg = req.train.to_config()
        model, _meta = load_checkpoint(req.checkpoint)
        vol = load_volume(req.volume)
        prediction = localize(model, vol, cfg)
        save_mask(req.out_path, prediction.mask3d.data, cfg.target_spacing)
        return schemas.LocalizeResponse(
            mask=req.out_path, pred_label=prediction.pred_label,
            probabilities=prediction.probabilities,
            detected_voxels=int(prediction.mask3d.data.sum()),
            degenerate_cam=prediction.degenerate,
        )

    return app
