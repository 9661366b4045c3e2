"""HTTP workbench service. Objects (models, inputs, datasets, results) live
in a content-addressed store; sessions hold name bindings and an append-only
query history. Result refs are pure functions of (query, bindings, backend
config, seed), so replaying a history reproduces the same refs.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Optional

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import analysis, qlang
from .algebra import (
    InvalidExpression,
    Registry,
    evaluate,
    expr_from_dict,
    expr_to_dict,
    normalize,
    validate,
)
from .attribution import BackendConfig, Window, WindowError
from .qlang import BindingError, Bindings, LexError, ParseError
from .runtime import (
    Dataset,
    HeadTrainingConfig,
    ModelSpec,
    ShapeError,
    StageError,
    Tensor,
    forward_batch,
    head_accuracy,
    truncate,
)
from .store import Store, result_to_dict


@dataclass
class Session:
    id: str
    bindings: Bindings = field(default_factory=Bindings)
    history: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class ApiError(Exception):
    def __init__(self, status: int, payload: dict):
        self.status = status
        self.payload = payload
        super().__init__(str(payload))


def _bad_request(errors: list[dict]) -> ApiError:
    return ApiError(400, {"errors": errors})


def _error_entry(kind: str, message: str, **extra) -> dict:
    return {"kind": kind, "message": message, **extra}


def create_app(store_path: str) -> FastAPI:
    store = Store(store_path)
    app = FastAPI(title="attrql service")
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()

    # -- helpers ------------------------------------------------------------

    def get_session(session_id: str) -> Session:
        with sessions_lock:
            session = sessions.get(session_id)
        if session is None:
            raise ApiError(404, {"errors": [_error_entry("unknown-ref", f"no session {session_id}")]})
        return session

    def load_model(ref: str) -> ModelSpec:
        try:
            return ModelSpec.from_dict(store.get(ref, "model"))
        except KeyError:
            raise ApiError(404, {"errors": [_error_entry("unknown-ref", f"no model {ref}")]})

    def load_input(ref: str) -> Tensor:
        try:
            return Tensor.from_dict(store.get(ref, "input"))
        except KeyError:
            raise ApiError(404, {"errors": [_error_entry("unknown-ref", f"no input {ref}")]})

    def load_dataset(ref: str) -> Dataset:
        try:
            return Dataset.from_dict(store.get(ref, "dataset"))
        except KeyError:
            raise ApiError(404, {"errors": [_error_entry("unknown-ref", f"no dataset {ref}")]})

    def registry_for(session: Session) -> Registry:
        """Registry with every bound model/input resolved from the store,
        plus any recorded truncations for the bound models."""
        registry = Registry()
        for name, (kind, value) in session.bindings.entries.items():
            if kind == "model":
                model = load_model(value)
                registry.add_model(value, model)
                for stage in range(1, model.num_stages):
                    tref = store.lookup_truncation(value, stage)
                    if tref is not None and store.has(tref):
                        registry.add_truncated(value, stage, ModelSpec.from_dict(store.get(tref, "model")))
            elif kind == "input":
                registry.add_input(value, load_input(value))
        return registry

    # -- error handling -----------------------------------------------------

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.payload)

    @app.exception_handler(RequestValidationError)
    async def _malformed(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"errors": [_error_entry("malformed-request", str(exc.errors()))]},
        )

    # -- object endpoints ---------------------------------------------------

    @app.post("/models")
    def post_model(payload: dict = Body(...)):
        try:
            model = ModelSpec.from_dict(payload)
        except (KeyError, TypeError, ValueError) as e:
            raise _bad_request([_error_entry("shape-mismatch", f"bad model: {e}")])
        return {"ref": store.put("model", model.to_dict())}

    @app.get("/models/{ref}")
    def get_model(ref: str):
        return load_model(ref).to_dict()

    @app.post("/inputs")
    def post_input(payload: dict = Body(...)):
        try:
            tensor = Tensor.from_dict(payload)
        except (KeyError, TypeError, ValueError) as e:
            raise _bad_request([_error_entry("shape-mismatch", f"bad input: {e}")])
        return {"ref": store.put("input", tensor.to_dict())}

    @app.get("/inputs/{ref}")
    def get_input(ref: str):
        return load_input(ref).to_dict()

    @app.post("/datasets")
    def post_dataset(payload: dict = Body(...)):
        try:
            data = Dataset.from_dict(payload)
        except (KeyError, TypeError, ValueError) as e:
            raise _bad_request([_error_entry("shape-mismatch", f"bad dataset: {e}")])
        return {"ref": store.put("dataset", data.to_dict())}

    @app.get("/results/{ref}")
    def get_result(ref: str):
        try:
            return store.get(ref, "result")
        except KeyError:
            raise ApiError(404, {"errors": [_error_entry("unknown-ref", f"no result {ref}")]})

    @app.post("/models/{ref}/truncate")
    def post_truncate(ref: str, payload: dict = Body(...)):
        model = load_model(ref)
        data = load_dataset(str(payload.get("dataset", "")))
        try:
            stage = int(payload["stage"])
        except (KeyError, TypeError, ValueError):
            raise _bad_request([_error_entry("malformed-request", "truncate needs an integer stage")])
        hyper = HeadTrainingConfig.from_dict(payload.get("hyper", {}))
        try:
            truncated = truncate(model, stage, data, hyper)
        except (StageError, ShapeError, ValueError) as e:
            raise _bad_request([_error_entry("undefined-composition", str(e))])
        feats = forward_batch(truncated, data.stacked(), upto_layer=len(truncated.layers) - 2)
        acc = head_accuracy(truncated.layers[-1],
                            [Tensor.from_array(f) for f in feats], list(data.labels))
        tref = store.put("model", truncated.to_dict())
        store.record_truncation(ref, stage, tref, str(payload.get("dataset", "")), hyper.to_dict())
        return {"ref": tref, "stage": stage, "training_accuracy": acc}

    # -- sessions -----------------------------------------------------------

    @app.post("/sessions")
    def post_session():
        session = Session(id=uuid.uuid4().hex)
        with sessions_lock:
            sessions[session.id] = session
        return {"id": session.id}

    @app.post("/sessions/{session_id}/bind")
    def post_bind(session_id: str, payload: dict = Body(...)):
        session = get_session(session_id)
        name = payload.get("name")
        kind = payload.get("kind")
        if not name or kind not in ("model", "input", "window"):
            raise _bad_request([_error_entry(
                "malformed-request", "bind needs name and kind in {model, input, window}")])
        if kind == "model":
            ref = str(payload.get("ref", ""))
            load_model(ref)  # 404 if absent
            session.bindings.bind_model(name, ref)
        elif kind == "input":
            ref = str(payload.get("ref", ""))
            load_input(ref)
            session.bindings.bind_input(name, ref)
        else:
            window = _window_from_payload(payload, load_input)
            session.bindings.bind_window(name, window)
        return {"ok": True, "bindings": session.bindings.to_dict()}

    def _window_from_payload(payload: dict, input_loader) -> Window:
        if "indices" in payload:
            try:
                return Window(tuple(int(i) for i in payload["indices"]))
            except (TypeError, ValueError, WindowError) as e:
                raise _bad_request([_error_entry("shape-mismatch", f"bad window indices: {e}")])
        rect = payload.get("rect")
        input_ref = payload.get("input_ref")
        if rect is None or input_ref is None:
            raise _bad_request([_error_entry(
                "malformed-request", "window bind needs indices, or rect plus input_ref")])
        tensor = input_loader(str(input_ref))
        try:
            r0, c0, r1, c1 = (int(v) for v in rect)
            return Window.from_rect(tensor.shape, r0, c0, r1, c1)
        except (TypeError, ValueError, WindowError) as e:
            raise _bad_request([_error_entry("shape-mismatch", f"bad rect window: {e}")])

    @app.post("/sessions/{session_id}/query")
    def post_query(session_id: str, payload: dict = Body(...)):
        session = get_session(session_id)
        text = payload.get("q")
        expr_tree = payload.get("expr")
        if (not isinstance(text, str) or not text.strip()) and expr_tree is None:
            raise _bad_request([_error_entry("malformed-request",
                                             "query needs a q string or an expr tree")])
        try:
            cfg = BackendConfig.from_dict(payload.get("backend", {}))
        except ValueError as e:
            raise _bad_request([_error_entry("malformed-request", f"bad backend config: {e}")])
        baseline = None
        if payload.get("baseline_ref"):
            baseline = load_input(str(payload["baseline_ref"]))
        registry = registry_for(session)
        if expr_tree is not None:
            try:
                expr = expr_from_dict(expr_tree)
            except (KeyError, TypeError, ValueError, WindowError) as e:
                raise _bad_request([_error_entry("malformed-request", f"bad expr tree: {e}")])
            ast = None
        else:
            try:
                ast = qlang.parse_text(text)
                expr = qlang.lower(ast, session.bindings, registry)
            except (LexError, ParseError) as e:
                raise _bad_request([_error_entry("syntax", str(e), offset=e.offset)])
            except (BindingError, WindowError) as e:
                offset = getattr(e, "offset", None)
                entry = _error_entry("unknown-ref", str(e))
                if offset is not None:
                    entry["offset"] = offset
                raise _bad_request([entry])
        errors = validate(expr, registry)
        if errors:
            raise _bad_request([e.to_dict() for e in errors])
        start = time.perf_counter()
        try:
            result = evaluate(expr, cfg, registry, baseline)
        except InvalidExpression as e:
            raise _bad_request([err.to_dict() for err in e.errors])
        except LookupError as e:
            raise _bad_request([_error_entry("undefined-composition", str(e))])
        except (ShapeError, WindowError, ValueError) as e:
            raise _bad_request([_error_entry("shape-mismatch", str(e))])
        elapsed_ms = 1000.0 * (time.perf_counter() - start)
        query_text = qlang.print_query(ast) if ast is not None else None
        meta = {
            "query": query_text,
            "expr": expr_to_dict(normalize(expr)),
            "backend": cfg.to_dict(),
            "seed": cfg.seed,
            "bindings": session.bindings.to_dict(),
        }
        body = result_to_dict(result, meta)
        ref = store.put("result", body)
        entry = {
            "query_text": text if ast is not None else query_text,
            "expr": meta["expr"],
            "result_ref": ref,
            "wall_time_ms": elapsed_ms,
            "timestamp": time.time(),
        }
        with session.lock:
            session.history.append(entry)
        return {"result_ref": ref, "result": body, "wall_time_ms": elapsed_ms}

    @app.post("/sessions/{session_id}/whatif")
    def post_whatif(session_id: str, payload: dict = Body(...)):
        session = get_session(session_id)
        input_ref = str(payload.get("input_ref", ""))
        x = load_input(input_ref)
        try:
            edit = analysis.Edit.from_dict(payload.get("edit", {}))
        except (KeyError, TypeError, ValueError) as e:
            raise _bad_request([_error_entry("malformed-request", f"bad edit: {e}")])
        source = load_input(edit.source_ref) if edit.source_ref else None
        baseline = None
        if payload.get("baseline_ref"):
            baseline = load_input(str(payload["baseline_ref"]))
        try:
            edited = analysis.apply_edit(x, edit, baseline=baseline, source=source)
        except (analysis.TransformError, ShapeError, WindowError, ValueError) as e:
            raise _bad_request([_error_entry("shape-mismatch", str(e))])
        new_ref = store.put("input", edited.to_dict())
        bind_as = payload.get("bind_as")
        if bind_as:
            session.bindings.bind_input(str(bind_as), new_ref)
        return {"input_ref": new_ref}

    @app.get("/sessions/{session_id}/history")
    def get_history(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {"entries": list(session.history)}

    @app.post("/analysis/spectral")
    def post_spectral(payload: dict = Body(...)):
        model = load_model(str(payload.get("model_ref", "")))
        data = load_dataset(str(payload.get("dataset_ref", "")))
        try:
            class_index = int(payload["class_index"])
        except (KeyError, TypeError, ValueError):
            raise _bad_request([_error_entry("malformed-request", "spectral needs class_index")])
        k = float(payload.get("k", 1.5))
        squared = bool(payload.get("squared", False))
        try:
            reps = analysis.deep_representation(model, data, class_index)
            report = analysis.spectral_signature(reps, k=k, squared=squared)
        except (ValueError, analysis.PowerIterationError) as e:
            raise _bad_request([_error_entry("shape-mismatch", str(e))])
        return report.to_dict()

    return app
