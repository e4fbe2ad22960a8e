"""Clients for the service: in-process (default) or over HTTP."""
from __future__ import annotations

from typing import Any

from pydantic import BaseModel

from . import service


class ServiceError(RuntimeError):
    def __init__(self, message: str, usage: bool = False):
        super().__init__(message)
        self.usage = usage


def _dump(result: Any) -> dict:
    return result.model_dump(mode="json") if isinstance(result, BaseModel) else result


class LocalClient:
    """Calls the service handlers directly; no server needed."""

    def call(self, endpoint: str, request: BaseModel) -> dict:
        handler = getattr(service, f"handle_{endpoint}")
        try:
            return _dump(handler(request))
        except service.INPUT_ERRORS as exc:
            raise ServiceError(f"{type(exc).__name__}: {exc}") from exc


class HttpClient:
    def __init__(self, base_url: str, timeout: float = 600.0):
        import httpx

        self._client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)

    def call(self, endpoint: str, request: BaseModel) -> dict:
        import httpx

        try:
            resp = self._client.post(f"/{endpoint}", json=request.model_dump(mode="json"))
        except httpx.HTTPError as exc:
            raise ServiceError(f"cannot reach service: {exc}") from exc
        if resp.status_code == 422:
            raise ServiceError(f"request rejected: {resp.json().get('detail')}", usage=True)
        if resp.status_code >= 400:
            raise ServiceError(str(resp.json().get("detail", resp.text)))
        return resp.json()
