"""Serve any backend object over the wire protocol (used to test the remote
client and to expose the mock to out-of-process consumers)."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import BackendError
from . import wire


def wire_app(backend) -> FastAPI:
    app = FastAPI(title="sweeper backend", docs_url=None, redoc_url=None)

    def run(op: str, fn):
        try:
            return JSONResponse(wire.build_response(op, fn()))
        except BackendError as exc:
            return JSONResponse(
                {"error": {"type": exc.kind, "message": exc.message}}, status_code=502
            )

    @app.post("/embed_text")
    async def embed_text(request: Request):
        body = await request.json()
        return run("embed_text", lambda: backend.embed_text(body["prompt"]))

    @app.post("/embed_image")
    async def embed_image(request: Request):
        body = await request.json()
        rgb = wire.decode_image(body["image"])
        return run("embed_image", lambda: backend.embed_image(rgb))

    @app.post("/detect")
    async def detect(request: Request):
        body = await request.json()
        rgb = wire.decode_image(body["image"])
        return run(
            "detect",
            lambda: backend.detect(
                rgb, body["phrase"], body["boxThreshold"], body["textThreshold"]
            ),
        )

    @app.post("/generate")
    async def generate(request: Request):
        body = await request.json()
        return run("generate", lambda: backend.generate(body["prompt"]))

    @app.post("/generate_multimodal")
    async def generate_multimodal(request: Request):
        body = await request.json()
        images = [wire.decode_image(b) for b in body["images"]]
        return run(
            "generate_multimodal",
            lambda: backend.generate_multimodal(images, body["prompt"]),
        )

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    return app
