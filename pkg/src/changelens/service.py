"""HTTP service: case submission, report retrieval, feedback, and KB stats.

Analysis is asynchronous: POST /cases returns 202 with a status URL and a
bounded worker pool does the work. Mutating requests are idempotent under
the Idempotency-Key header, and re-posting a bundle with a known ticket id
returns the original case. The CLI and this service share the exact same
pipeline code path.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Optional

from fastapi import FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse

from . import __version__
from .config import AppConfig
from .engine import AuditStore, analyze_case
from .feedback import (
    FeedbackLabel,
    FeedbackRecord,
    FeedbackStore,
    kb_update_decision,
)
from .gateway import LlmGateway
from .kb import DuplicateId, KnowledgeBase
from .model import CoTKind, bundle_from_dict, report_to_dict, validate_bundle


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: Any = None) -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


@dataclass
class CaseState:
    case_id: str
    status: str  # Pending | Analyzing | Done | Failed
    submitted_at: int
    service: str
    error: str = ""
    admission: str = "pending"  # pending | admitted | rejected | revoked
    admission_reason: str = ""


def create_app(
    cfg: AppConfig,
    *,
    gateway: Optional[LlmGateway] = None,
    kb: Optional[KnowledgeBase] = None,
) -> FastAPI:
    cfg.storage.ensure()
    gw = gateway if gateway is not None else LlmGateway(cfg.provider)
    knowledge = kb if kb is not None else KnowledgeBase(gw.embed, path=cfg.storage.kb_path)
    audit = AuditStore()
    feedback = FeedbackStore(path=cfg.storage.feedback_path, audit=audit)

    app = FastAPI(title="changelens", version=__version__)
    state = app.state
    state.cfg = cfg
    state.gateway = gw
    state.kb = knowledge
    state.audit = audit
    state.feedback = feedback
    state.registry: dict[str, CaseState] = {}
    state.idempotency: dict[str, dict] = {}
    state.lock = threading.Lock()
    state.executor = ThreadPoolExecutor(max_workers=cfg.service.workers)

    @app.middleware("http")
    async def version_header(request: Request, call_next):
        response: Response = await call_next(request)
        response.headers["X-API-Version"] = __version__
        return response

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
            headers={"X-API-Version": __version__},
        )

    def require_auth(authorization: Optional[str]) -> None:
        token = cfg.service.auth_token
        if not token:
            return
        if authorization != f"Bearer {token}":
            raise ApiError(401, "unauthorized", "missing or invalid bearer token")

    def persist_audit(report_id: str) -> None:
        rec = audit.get(report_id)
        if rec is None:
            return
        with open(cfg.storage.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")

    def apply_admission(case_id: str, fb: Optional[FeedbackRecord]) -> None:
        """Recompute the admission decision and mutate the KB accordingly."""
        rec = audit.get(case_id)
        cs = state.registry.get(case_id)
        if rec is None or cs is None:
            return
        decision = kb_update_decision(rec.report, rec.cot_score, fb)
        with state.lock:
            previously_admitted = cs.admission == "admitted"
            if decision.admit:
                if not previously_admitted:
                    try:
                        knowledge.add_case(knowledge.make_record(
                            case_id=case_id,
                            domain_text=rec.domain_text,
                            report=rec.report,
                            admitted_by=decision.admitted_by,
                            created_at=int(time.time()),
                        ))
                    except DuplicateId:
                        pass
                cs.admission = "admitted"
            else:
                if previously_admitted:
                    knowledge.remove_case(case_id)
                    cs.admission = "revoked"
                else:
                    cs.admission = "rejected"
            cs.admission_reason = decision.reason

    def run_analysis(case_id: str, bundle) -> None:
        cs = state.registry[case_id]
        cs.status = "Analyzing"
        try:
            analyze_case(bundle, knowledge, gw, cfg.inference, audit=audit)
            persist_audit(case_id)
            cs.status = "Done"
            apply_admission(case_id, feedback.active_for(case_id))
        except Exception as exc:
            cs.status = "Failed"
            cs.error = f"{type(exc).__name__}: {exc}"

    @app.post("/cases", status_code=202)
    async def post_case(
        request: Request,
        authorization: Optional[str] = Header(default=None),
        idempotency_key: Optional[str] = Header(default=None, alias="Idempotency-Key"),
    ):
        require_auth(authorization)
        if idempotency_key and idempotency_key in state.idempotency:
            return state.idempotency[idempotency_key]
        try:
            body = await request.json()
            bundle = bundle_from_dict(body)
        except (ValueError, KeyError, TypeError) as exc:
            raise ApiError(400, "bad_request", "malformed case bundle", str(exc))
        result = validate_bundle(bundle)
        if not result.ok:
            raise ApiError(
                422, "invalid_bundle", "bundle fails validation",
                [{"path": v.path, "message": v.message} for v in result.violations],
            )
        case_id = bundle.ticket.ticket_id
        with state.lock:
            known = case_id in state.registry
            if not known:
                state.registry[case_id] = CaseState(
                    case_id=case_id,
                    status="Pending",
                    submitted_at=int(time.time()),
                    service=bundle.ticket.service,
                )
        response = {"case_id": case_id, "status_url": f"/cases/{case_id}/report"}
        if idempotency_key:
            state.idempotency[idempotency_key] = response
        if not known:
            state.executor.submit(run_analysis, case_id, bundle)
        return response

    @app.get("/cases")
    async def list_cases(status: Optional[str] = None):
        with state.lock:
            cases = list(state.registry.values())
        out = []
        for cs in sorted(cases, key=lambda c: c.case_id):
            if status and cs.status != status:
                continue
            out.append({
                "case_id": cs.case_id,
                "status": cs.status,
                "submitted_at": cs.submitted_at,
                "service": cs.service,
                "admission": cs.admission,
            })
        return {"cases": out}

    @app.get("/cases/{case_id}/report")
    async def get_report(case_id: str):
        cs = state.registry.get(case_id)
        if cs is None:
            raise ApiError(404, "unknown_case", f"no case {case_id}")
        if cs.status == "Failed":
            raise ApiError(500, "analysis_failed", "analysis failed", cs.error)
        if cs.status != "Done":
            return JSONResponse(status_code=202, content={"case_id": case_id, "status": cs.status})
        rec = audit.get(case_id)
        fb = feedback.active_for(case_id)
        mitigation = next(
            (s.text.splitlines()[0] for s in rec.report.cot
             if s.kind is CoTKind.MITIGATION),
            None,
        )
        return {
            "case_id": case_id,
            "status": cs.status,
            "report": report_to_dict(rec.report),
            "cot_score": rec.to_dict()["cot_score"],
            "cot_weights": {k.value: v for k, v in cfg.inference.cot.weights.items()},
            "retrieved_ids": list(rec.retrieved_ids),
            # advisory only; no rollback is ever executed from here
            "recommended_action": mitigation,
            "admission": {"state": cs.admission, "reason": cs.admission_reason},
            "feedback": None if fb is None else {
                "label": fb.label.value, "notes": fb.notes, "judge": fb.judge,
            },
        }

    @app.post("/reports/{report_id}/feedback")
    async def post_feedback(
        report_id: str,
        request: Request,
        authorization: Optional[str] = Header(default=None),
        idempotency_key: Optional[str] = Header(default=None, alias="Idempotency-Key"),
    ):
        require_auth(authorization)
        if idempotency_key and idempotency_key in state.idempotency:
            return state.idempotency[idempotency_key]
        if report_id not in audit:
            raise ApiError(404, "unknown_report", f"no report {report_id}")
        body = await request.json()
        label = body.get("label")
        if label not in (FeedbackLabel.GOOD.value, FeedbackLabel.BAD.value):
            raise ApiError(400, "bad_request", "label must be Good or Bad")
        rec = FeedbackRecord(
            report_id=report_id,
            label=FeedbackLabel(label),
            notes=body.get("notes", ""),
            judge=body.get("judge", ""),
            created_at=int(time.time()),
        )
        feedback.record(rec)
        apply_admission(report_id, rec)
        cs = state.registry.get(report_id)
        response = {
            "report_id": report_id,
            "active_label": label,
            "admission": {
                "state": cs.admission if cs else "unknown",
                "reason": cs.admission_reason if cs else "",
            },
        }
        if idempotency_key:
            state.idempotency[idempotency_key] = response
        return response

    @app.get("/kb/stats")
    async def kb_stats():
        return knowledge.stats()

    @app.get("/reports/{report_id}/audit")
    async def get_audit(report_id: str):
        rec = audit.get(report_id)
        if rec is None:
            raise ApiError(404, "unknown_report", f"no audit record for {report_id}")
        return rec.to_dict()

    return app
