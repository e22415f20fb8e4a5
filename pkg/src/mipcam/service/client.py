"""Tiny HTTP client used by the CLI.

With no server URL configured, requests run against the app in-process over
an ASGI transport: the full wire schema is exercised without a socket.  With
``--server`` the same requests go to a remote instance.
"""

from __future__ import annotations

import asyncio

import httpx


class ServiceClient:
    def __init__(self, server: str | None = None):
        self.server = server

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        return asyncio.run(self._request("POST", path, payload))

    def get(self, path: str) -> tuple[int, dict]:
        return asyncio.run(self._request("GET", path, None))

    async def _request(self, method: str, path: str, payload: dict | None) -> tuple[int, dict]:
        if self.server is not None:
            transport = None
            base_url = self.server
        else:
            from .app import create_app

            transport = httpx.ASGITransport(app=create_app())
            base_url = "http://mipcam.local"
        async with httpx.AsyncClient(transport=transport, base_url=base_url,
                                     timeout=None) as client:
            response = await client.request(method, path, json=payload)
        try:
            body = response.json()
        except ValueError:
            body = {"error": {"kind": "internal", "message": response.text}}
        return response.status_code, body
