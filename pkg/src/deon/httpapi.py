"""HTTP JSON API for wall-clock networks, one server per node over loopback
TCP, plus the matching client.

Request handlers run on server threads; everything that touches node state is
marshalled onto the scheduler loop via ``post_blocking``, so the protocol code
stays single-threaded. Signing always happens on the caller's side — the
wallet never crosses the wire, only signed proposals and presentations do.
"""

from __future__ import annotations

import base64
import json
import threading
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .canonical import b58encode, canonical_json
from .core import build_push_request, build_query_request, vote_key
from .errors import (
    DeonError,
    HTTP_STATUS,
    IdentityError,
    UnavailableError,
    error_from_dict,
)
from .identity import VerifiableCredential, Wallet
from .ledger import tx_id_for


def _encode_presentation(p: dict | None) -> str | None:
    if p is None:
        return None
    return base64.b64encode(canonical_json(p)).decode()


def _decode_presentation(s: str | None) -> dict | None:
    if not s:
        return None
    return json.loads(base64.b64decode(s).decode())


class NodeHttpServer:
    """Serves one node's API. Routes:

    POST /onboard /push /vote — signed request bodies, as on the bus
    GET  /data/{key}  /vote/{poll}/{voter} — authenticated via query params
    GET  /health  /chain/height
    """

    def __init__(self, rt, host: str = "127.0.0.1", port: int = 0):
        self.rt = rt
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # noqa: ARG002 - quiet by design
                pass

            def do_GET(self):
                outer._dispatch(self, "GET")

            def do_POST(self):
                outer._dispatch(self, "POST")

        self.server = ThreadingHTTPServer((host, port), Handler)
        self.server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self.server.serve_forever,
            name=f"http-{self.rt.node_id}", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    # -- request plumbing ----------------------------------------------------------

    def _dispatch(self, handler: BaseHTTPRequestHandler, method: str) -> None:
        try:
            status, payload = self._route(handler, method)
        except DeonError as exc:
            status = HTTP_STATUS.get(exc.code, 500)
            payload = exc.to_dict()
        except TimeoutError:
            status, payload = 504, {"code": "commit_timeout",
                                    "message": "request timed out"}
        except Exception as exc:  # noqa: BLE001 - boundary
            status, payload = 500, {"code": "internal", "message": repr(exc)}
        body = canonical_json(payload)
        handler.send_response(status)
        handler.send_header("Content-Type", "application/json")
        handler.send_header("Content-Length", str(len(body)))
        handler.end_headers()
        handler.wfile.write(body)

    def _route(self, handler, method: str) -> tuple[int, dict]:
        parsed = urllib.parse.urlparse(handler.path)
        parts = [urllib.parse.unquote(p) for p in parsed.path.split("/") if p]
        qs = {k: v[0] for k, v in urllib.parse.parse_qs(parsed.query).items()}

        if method == "GET":
            if parts == ["health"]:
                return 200, self._call(self._health, timeout=5.0)
            if parts == ["chain", "height"]:
                return 200, self._call(
                    lambda: {"height": self.rt.peer.height()}, timeout=5.0)
            if len(parts) == 2 and parts[0] == "data":
                return 200, self._query(parts[1], qs)
            if len(parts) == 3 and parts[0] == "vote":
                resp = self._query(vote_key(parts[1], parts[2]), qs)
                ballot = json.loads(base64.b64decode(resp["payload_b64"]).decode())
                return 200, {"choice": ballot["choice"], "report": resp["report"]}
            raise DeonError(f"no such endpoint: GET {parsed.path}")

        body = self._read_body(handler)
        if parts == ["onboard"]:
            return 200, self._spawn(self.rt.core.handle_onboard(body),
                                    timeout=self.rt.receipt_timeout + 20)
        if parts == ["push"]:
            return 200, self._spawn(self.rt.core.handle_push(body),
                                    timeout=3 * self.rt.receipt_timeout)
        if parts == ["vote"]:
            return 200, self._spawn(self.rt.core.handle_vote(body),
                                    timeout=3 * self.rt.receipt_timeout)
        raise DeonError(f"no such endpoint: POST {parsed.path}")

    def _read_body(self, handler) -> dict:
        length = int(handler.headers.get("Content-Length", "0"))
        raw = handler.rfile.read(length) if length else b"{}"
        return json.loads(raw.decode())

    def _health(self) -> dict:
        rt = self.rt
        status = rt.orderer.status() if rt.orderer is not None else {}
        return {
            "node": rt.node_id,
            "org": rt.org_id,
            "height": rt.peer.height(),
            "role": status.get("role"),
            "term": status.get("term"),
            "leader": status.get("leader"),
        }

    def _query(self, key: str, qs: dict) -> dict:
        req = {
            "type": "core.query",
            "key": key,
            "did": qs.get("did", ""),
            "nonce": qs.get("nonce", ""),
            "signature": qs.get("signature", ""),
            "private": qs.get("private", "1") not in ("0", "false"),
            "presentation": _decode_presentation(qs.get("presentation")),
        }
        resp = self._spawn(self.rt.core.handle_query(req), timeout=30.0)
        resp.pop("_private", None)
        return resp

    def _call(self, fn, timeout: float):
        return self.rt.sched.post_blocking(
            lambda: _ready(fn()), timeout=timeout)

    def _spawn(self, gen, timeout: float) -> dict:
        out = self.rt.sched.post_blocking(
            lambda: self.rt.spawn(gen), timeout=timeout)
        if isinstance(out, dict):
            out = dict(out)
            out.pop("_private", None)
        return out


def _ready(value):
    from .runtime import Future

    fut = Future()
    fut.set_result(value)
    return fut


class NetworkHttp:
    """All of a wall-clock network's node servers, started together."""

    def __init__(self, net):
        if net.config.mode != "wall":
            raise DeonError("the HTTP layer needs a wall-clock network")
        self.net = net
        self.servers = {nid: NodeHttpServer(net.nodes[nid])
                        for nid in net.node_ids()}

    @property
    def urls(self) -> dict[str, str]:
        return {nid: srv.url for nid, srv in self.servers.items()}

    def start(self) -> "NetworkHttp":
        for srv in self.servers.values():
            srv.start()
        return self

    def stop(self) -> None:
        for srv in self.servers.values():
            srv.stop()


def serve_network(net) -> NetworkHttp:
    return NetworkHttp(net).start()


# -- client ----------------------------------------------------------------------------


class HttpClient:
    """Signs locally, talks to node HTTP endpoints, fails over between them.

    ``endpoints`` is an ordered list of base URLs; the first is home. A push
    is signed once and resubmitted verbatim on failover, so its tx id — and
    therefore its at-most-once commit — is stable across node crashes.
    """

    def __init__(self, endpoints: list[str], wallet: Wallet | None = None,
                 timeout: float = 60.0):
        if not endpoints:
            raise DeonError("need at least one node endpoint")
        self.endpoints = [e.rstrip("/") for e in endpoints]
        self.wallet = wallet or Wallet()
        if not self.wallet.dids():
            self.wallet.create_did()
        self.timeout = timeout
        self._nonce = 0
        self._presented: set[str] = set()

    @property
    def did(self) -> str:
        return self.wallet.active_did

    # -- raw http ---------------------------------------------------------------

    def _http(self, method: str, url: str, body: dict | None = None):
        data = canonical_json(body) if body is not None else None
        req = urllib.request.Request(url, data=data, method=method)
        if data is not None:
            req.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode())
        except urllib.error.HTTPError as exc:
            raise error_from_dict(json.loads(exc.read().decode())) from None
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise UnavailableError(f"{url}: {exc}") from None

    def _next_nonce(self) -> str:
        self._nonce += 1
        return f"{self.did[:16]}:{self._nonce}"

    def _presentation(self, nonce: str) -> dict:
        return self.wallet.present("deon.member", disclose=[], nonce=nonce).to_dict()

    # -- operations ----------------------------------------------------------------

    def onboard(self, kind: str = "user", name: str = "") -> dict:
        resp = self._http("POST", f"{self.endpoints[0]}/onboard", {
            "kind": kind, "name": name,
            "did": self.did, "verkey": b58encode(self.wallet.verkey(self.did)),
        })
        self.wallet.store_credential(
            VerifiableCredential.from_dict(resp["credential"]))
        return resp

    def push(self, key: str, payload: bytes, *, private: bool = True,
             use_cas: bool = True, metadata: dict | None = None,
             timestamp_ms: int | None = None) -> dict:
        import time as _time

        ts = timestamp_ms if timestamp_ms is not None else int(_time.time() * 1000)
        req = build_push_request(self.wallet, key, payload, private=private,
                                 use_cas=use_cas, metadata=metadata,
                                 timestamp_ms=ts, presentation=None)
        tx_id = tx_id_for(req["proposal"]["chaincode"], req["proposal"]["function"],
                          req["proposal"]["args"], self.did, ts)
        presentation = self._presentation(tx_id)
        last: Exception | None = None
        for attempt, base in enumerate(self.endpoints):
            out = dict(req)
            if attempt or base not in self._presented:
                out["presentation"] = presentation
            try:
                receipt = self._http("POST", f"{base}/push", out)
            except IdentityError:
                out["presentation"] = presentation
                receipt = self._http("POST", f"{base}/push", out)
            except UnavailableError as exc:
                last = exc
                continue
            self._presented.add(base)
            return receipt
        raise last

    def _query_url(self, base: str, key: str, private: bool,
                   with_presentation: bool) -> str:
        nonce = self._next_nonce()
        req = build_query_request(self.wallet, key, private=private,
                                  nonce=nonce, presentation=None)
        params = {
            "did": req["did"], "nonce": req["nonce"],
            "signature": req["signature"],
            "private": "1" if private else "0",
        }
        if with_presentation:
            params["presentation"] = _encode_presentation(
                self._presentation(nonce))
        return (f"{base}/data/{urllib.parse.quote(key, safe='')}?"
                + urllib.parse.urlencode(params))

    def query(self, key: str, *, private: bool = True) -> dict:
        last: Exception | None = None
        for attempt, base in enumerate(self.endpoints):
            present = attempt > 0 or base not in self._presented
            try:
                resp = self._http(
                    "GET", self._query_url(base, key, private, present))
            except IdentityError:
                # node restarted and lost its verifier cache: present again
                resp = self._http(
                    "GET", self._query_url(base, key, private, True))
            except UnavailableError as exc:
                last = exc
                continue
            self._presented.add(base)
            return resp
        raise last

    def cast_vote(self, poll_id: str, voter_id: str, choice: str) -> dict:
        from .core import encode_ballot

        return self.push(vote_key(poll_id, voter_id),
                         encode_ballot(poll_id, voter_id, choice), private=True)

    def get_vote(self, poll_id: str, voter_id: str) -> dict:
        nonce = self._next_nonce()
        key = vote_key(poll_id, voter_id)
        base = self.endpoints[0]
        req = build_query_request(self.wallet, key, private=True,
                                  nonce=nonce, presentation=None)
        params = {
            "did": req["did"], "nonce": req["nonce"],
            "signature": req["signature"],
            "presentation": _encode_presentation(self._presentation(nonce)),
        }
        url = (f"{base}/vote/{urllib.parse.quote(poll_id, safe='')}/"
               f"{urllib.parse.quote(voter_id, safe='')}?"
               + urllib.parse.urlencode({k: v for k, v in params.items() if v}))
        return self._http("GET", url)

    def health(self, endpoint: str | None = None) -> dict:
        return self._http("GET", f"{endpoint or self.endpoints[0]}/health")

    def chain_height(self, endpoint: str | None = None) -> int:
        base = endpoint or self.endpoints[0]
        return self._http("GET", f"{base}/chain/height")["height"]
