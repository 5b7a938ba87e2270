"""Newline-delimited JSON wire protocol for external agent processes.

The engine is the client: it sends one decision request per line and waits
for the matching response, with one request in flight per connection.

    engine -> agent  {"kind": K, "request_id": N, "observation": {...}}
                     K in {"bid", "select", "plan", "pay", "belief"}
    agent -> engine  {"kind": K, "request_id": N, ...decision payload}

Decision payloads:
    bid     {"bids": [{"listing_id": ..., "price": ..., "proposal": ...}]}
    select  {"winner": "<agent_id>"} or {"reject_all": true}
    plan    {"tier": "low|mid|high", "skills": [...], "effort": "..."}
            (autarky planning may answer {"decline": true})
    pay     {"rho": <float>}
    belief  {"belief": "<text>"}

While a request is pending the agent may interleave read-only queries:

    agent -> engine  {"kind": "query", "query_id": M, "name": ..., "args": {...}}
    engine -> agent  {"kind": "query_result", "query_id": M, "result": {...}}
                     or {"kind": "query_error", "query_id": M, "error": "..."}

Malformed or invalid responses are retried (fresh request_id) up to the
engine's retry budget and then fall back to the engine default decision;
timeouts and disconnects do the same without aborting the session.
"""

from __future__ import annotations

import json
import queue
import socket
import socketserver
import subprocess
import threading
import time
from typing import Callable, Optional

from .execution import ExecutionPlan, TIER_NAMES
from .policies import (
    AgentPolicy,
    BeliefObservation,
    BidObservation,
    BidRequest,
    BidView,
    ListingView,
    PaymentObservation,
    PlanObservation,
    SelectionObservation,
    SelfView,
)

DECISION_KINDS = ("bid", "select", "plan", "pay", "belief")


class ProtocolError(RuntimeError):
    """Malformed traffic, validation failure, timeout, or disconnect."""


# ---------------------------------------------------------------------------
# Observation serialization
# ---------------------------------------------------------------------------

def self_view_to_dict(sv: SelfView) -> dict:
    return {
        "agent_id": sv.agent_id, "family": sv.family, "skill": sv.skill,
        "wealth": sv.wealth, "backbone_paid": sv.backbone_paid,
        "exec_paid": sv.exec_paid, "round": sv.round, "belief": sv.belief,
        "avg_rho_as_poster": sv.avg_rho_as_poster,
        "dispute_rate_as_poster": sv.dispute_rate_as_poster,
        "avg_rho_as_contractor": sv.avg_rho_as_contractor,
        "dispute_rate_as_contractor": sv.dispute_rate_as_contractor,
        "n_as_poster": sv.n_as_poster, "n_as_contractor": sv.n_as_contractor,
    }


def listing_view_to_dict(lv: ListingView) -> dict:
    out = {
        "listing_id": lv.listing_id, "task_id": lv.task_id, "domain": lv.domain,
        "reward": lv.reward, "surge_depth": lv.surge_depth, "poster": lv.poster,
        "poster_avg_rho": lv.poster_avg_rho, "c_ref": lv.c_ref,
        "pass_rate": lv.pass_rate,
    }
    if lv.poster_family is not None:  # present only under transparency
        out["poster_family"] = lv.poster_family
    return out


def bid_view_to_dict(bv: BidView) -> dict:
    out = {
        "bidder": bv.bidder, "price": bv.price, "proposal": bv.proposal,
        "bidder_dispute_rate": bv.bidder_dispute_rate,
    }
    if bv.bidder_family is not None:
        out["bidder_family"] = bv.bidder_family
    return out


def observation_to_dict(kind: str, obs) -> dict:
    if kind == "bid":
        return {"self": self_view_to_dict(obs.self_view),
                "listings": [listing_view_to_dict(l) for l in obs.listings]}
    if kind == "select":
        return {"self": self_view_to_dict(obs.self_view),
                "listing": listing_view_to_dict(obs.listing),
                "bids": [bid_view_to_dict(b) for b in obs.bids]}
    if kind == "plan":
        return {"self": self_view_to_dict(obs.self_view),
                "listing": listing_view_to_dict(obs.listing),
                "price": obs.price, "mode": obs.mode}
    if kind == "pay":
        out = {"self": self_view_to_dict(obs.self_view),
               "listing": listing_view_to_dict(obs.listing),
               "bid": bid_view_to_dict(obs.bid),
               "output_preview": obs.output_preview,
               "exec": {"tier": obs.exec_tier, "skills_used": obs.exec_skills_used},
               "contractor": {"avg_rho": obs.contractor_avg_rho,
                              "dispute_rate": obs.contractor_dispute_rate}}
        if obs.quality is not None:
            out["quality"] = obs.quality
        return out
    if kind == "belief":
        return {"self": self_view_to_dict(obs.self_view),
                "summary": {"round_profit": obs.round_profit,
                            "contracts_won": obs.contracts_won,
                            "contracts_settled_as_poster": obs.contracts_settled_as_poster,
                            "disputes_received": obs.disputes_received,
                            "disputes_issued": obs.disputes_issued}}
    raise ProtocolError(f"unknown request kind {kind!r}")


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------

class Transport:
    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self, timeout: float) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass


_EOF = object()


class _LineReader:
    """Background reader pushing lines into a queue so reads can time out."""

    def __init__(self, stream) -> None:
        self._queue: "queue.Queue" = queue.Queue()

        def pump() -> None:
            try:
                for line in stream:
                    self._queue.put(line)
            except Exception:
                pass
            self._queue.put(_EOF)

        self._thread = threading.Thread(target=pump, daemon=True)
        self._thread.start()

    def get(self, timeout: float) -> str:
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError("timed out waiting for agent response") from None
        if item is _EOF:
            self._queue.put(_EOF)  # keep future reads failing fast
            raise ProtocolError("agent disconnected (end of stream)")
        return item


class ProcessTransport(Transport):
    """Talk to a spawned agent process over its standard streams."""

    def __init__(self, argv: list[str]) -> None:
        self.proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1)
        self._reader = _LineReader(self.proc.stdout)

    def send_line(self, line: str) -> None:
        if self.proc.poll() is not None or self.proc.stdin is None:
            raise ProtocolError("agent process exited")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ProtocolError(f"agent pipe closed: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        return self._reader.get(timeout)

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class SocketTransport(Transport):
    """Talk to an agent over an already-reachable TCP endpoint."""

    def __init__(self, host: str, port: int, connect_timeout: float = 10.0) -> None:
        self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._file = self.sock.makefile("r", encoding="utf-8", newline="\n")
        self._reader = _LineReader(self._file)

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall((line + "\n").encode("utf-8"))
        except OSError as exc:
            raise ProtocolError(f"socket send failed: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        return self._reader.get(timeout)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


# ---------------------------------------------------------------------------
# External policy adapter
# ---------------------------------------------------------------------------

class ExternalPolicy(AgentPolicy):
    """Wrap a remote process as an agent policy.

    Each decision is one request/response exchange; in-band query messages
    are answered from the observation's query handle. Any protocol fault
    raises, and the engine's retry-then-default wrapper takes it from there.
    """

    observes_quality = False

    def __init__(self, transport: Transport, timeout: float = 30.0) -> None:
        self.transport = transport
        self.timeout = timeout
        self._request_id = 0
        self._dead = False

    def close(self) -> None:
        self.transport.close()

    def _exchange(self, kind: str, obs, parse: Callable[[dict], object]):
        if self._dead:
            raise ProtocolError("agent connection is closed")
        self._request_id += 1
        rid = self._request_id
        request = {"kind": kind, "request_id": rid,
                   "observation": observation_to_dict(kind, obs)}
        self.transport.send_line(json.dumps(request, sort_keys=True))
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProtocolError(f"timed out waiting for {kind} response")
            try:
                line = self.transport.recv_line(remaining)
            except ProtocolError as exc:
                if "disconnected" in str(exc) or "closed" in str(exc):
                    self._dead = True
                raise
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"malformed response line: {exc}") from exc
            if not isinstance(msg, dict):
                raise ProtocolError("response is not an object")
            mkind = msg.get("kind")
            if mkind == "query":
                self._answer_query(msg, obs)
                continue
            if mkind in DECISION_KINDS and msg.get("request_id") != rid:
                continue  # stale reply from an abandoned attempt
            if mkind != kind:
                raise ProtocolError(f"expected {kind} response, got {mkind!r}")
            return parse(msg)

    def _answer_query(self, msg: dict, obs) -> None:
        qid = msg.get("query_id")
        queries = getattr(obs, "queries", None)
        try:
            if queries is None:
                raise ProtocolError("queries unavailable")
            result = queries.dispatch(str(msg.get("name")), msg.get("args") or {})
            reply = {"kind": "query_result", "query_id": qid, "result": result}
        except Exception as exc:
            reply = {"kind": "query_error", "query_id": qid, "error": str(exc)}
        self.transport.send_line(json.dumps(reply, sort_keys=True))

    # -- decisions -----------------------------------------------------------

    def decide_bids(self, obs: BidObservation, rng) -> list[BidRequest]:
        open_ids = {l.listing_id for l in obs.listings}

        def parse(msg: dict) -> list[BidRequest]:
            bids = msg.get("bids")
            if not isinstance(bids, list):
                raise ProtocolError("bid response missing 'bids' list")
            out = []
            for item in bids:
                if not isinstance(item, dict) or item.get("listing_id") not in open_ids:
                    raise ProtocolError("bid references an unknown listing")
                price = item.get("price")
                if not isinstance(price, (int, float)):
                    raise ProtocolError("bid price must be a number")
                out.append(BidRequest(listing_id=item["listing_id"],
                                      price=float(price),
                                      proposal=str(item.get("proposal", ""))))
            return out

        return self._exchange("bid", obs, parse)

    def decide_selection(self, obs: SelectionObservation, rng) -> Optional[str]:
        bidders = {b.bidder for b in obs.bids}

        def parse(msg: dict) -> Optional[str]:
            if msg.get("reject_all"):
                return None
            winner = msg.get("winner")
            if winner not in bidders:
                raise ProtocolError("selection must reference a bid in the request")
            return winner

        return self._exchange("select", obs, parse)

    def _parse_plan(self, msg: dict, obs, allow_decline: bool):
        if allow_decline and msg.get("decline"):
            return None
        tier = msg.get("tier")
        if tier not in TIER_NAMES:
            raise ProtocolError(f"plan tier must be one of {TIER_NAMES}")
        skills = msg.get("skills", [])
        if not isinstance(skills, list):
            raise ProtocolError("plan skills must be a list")
        return ExecutionPlan(tier=tier, skills=tuple(str(s) for s in skills),
                             effort=str(msg.get("effort", "standard")))

    def decide_plan(self, obs: PlanObservation, rng) -> ExecutionPlan:
        return self._exchange("plan", obs,
                              lambda msg: self._parse_plan(msg, obs, allow_decline=False))

    def decide_self_execution(self, obs: PlanObservation, rng) -> Optional[ExecutionPlan]:
        return self._exchange("plan", obs,
                              lambda msg: self._parse_plan(msg, obs, allow_decline=True))

    def decide_payment(self, obs: PaymentObservation, rng) -> float:
        def parse(msg: dict) -> float:
            rho = msg.get("rho")
            if not isinstance(rho, (int, float)):
                raise ProtocolError("pay response must carry numeric 'rho'")
            return float(rho)

        return self._exchange("pay", obs, parse)

    def update_belief(self, obs: BeliefObservation) -> str:
        def parse(msg: dict) -> str:
            belief = msg.get("belief")
            if not isinstance(belief, str):
                raise ProtocolError("belief response must carry text")
            return belief

        return self._exchange("belief", obs, parse)


# ---------------------------------------------------------------------------
# Standalone read-only query endpoint
# ---------------------------------------------------------------------------

class QueryServer:
    """Serve the ten read-only queries over TCP, one JSON request per line.

    Request {"name": ..., "args": {...}} -> {"result": {...}} or {"error": ...}.
    A shared lock serializes queries against engine phase boundaries.
    """

    def __init__(self, engine, host: str = "127.0.0.1", port: int = 0,
                 lock: Optional[threading.Lock] = None) -> None:
        self.engine = engine
        self.lock = lock or threading.Lock()
        server_self = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                for raw in self.rfile:
                    line = raw.decode("utf-8").strip()
                    if not line:
                        continue
                    try:
                        msg = json.loads(line)
                        with server_self.lock:
                            result = server_self.engine.queries.dispatch(
                                str(msg.get("name")), msg.get("args") or {})
                        reply = {"result": result}
                    except Exception as exc:
                        reply = {"error": str(exc)}
                    self.wfile.write((json.dumps(reply, sort_keys=True) + "\n")
                                     .encode("utf-8"))

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self.address = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def start(self) -> "QueryServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
