"""Session-level traffic generator for both sides of the lab.

One simulated C2 session is a command script driven through a beacon loop:
the payload polls with empty GETs, the framework answers with queued
commands or nothing, results come back as POSTs. Empty-poll spacing doubles
from poll_initial up to poll_max and resets whenever a command is served.

Traffic-shaping modes only change message sizes and connection grouping,
never the workflow, so a reshaped run keeps the exact timing of its regular
twin. Benign browsing flows come from a separate generator with heavy-tailed
record sizes.

The same frame plan (handshake, MSS-sized data segments, teardown) backs
both the per-connection wire-byte accounting and the pcap emitter, so totals
computed here always match what a parser recovers from the file.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .adversarial import StuffingPlan, StuffSide, chain_plans, sample_plan
from .model import Direction, FlowTrace, RecordEvent
from .protocol import FrameworkSession, HeaderCodec, PayloadSession, framework_step, payload_step
from .sizing import RECORD_HEADER_LEN, TlsSizeModel
from .wire import ACK, FIN, FRAME_OVERHEAD, PSH, SYN, PcapWriter, build_frame

HANDSHAKE_LEAD = 0.005  # seconds between SYN and the first record
FIN_TRAIL = 0.0015

_TLS_HANDSHAKE = 22
_TLS_APPDATA = 23


def substream(seed: int, *labels) -> np.random.Generator:
    """Independent, reproducible RNG stream named by (seed, labels)."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    keys = [zlib.crc32(str(l).encode()) for l in labels]
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


# ---------------------------------------------------------------------------
# modes

@dataclass(frozen=True)
class Regular:
    pass


@dataclass(frozen=True)
class StuffFixed:
    amount: int = 50


@dataclass(frozen=True)
class StuffRandom:
    low: int = 1
    high: int = 1400


@dataclass(frozen=True)
class FixedReqPerConn:
    requests: int = 3


@dataclass(frozen=True)
class RandReqPerConn:
    low: int = 2
    high: int = 6


@dataclass(frozen=True)
class Adversarial:
    side: StuffSide
    library: tuple[StuffingPlan, ...]

    def __post_init__(self) -> None:
        if not self.library:
            raise ValueError("adversarial mode needs a plan library")


Mode = Union[Regular, StuffFixed, StuffRandom, FixedReqPerConn, RandReqPerConn, Adversarial]


# ---------------------------------------------------------------------------
# scripts

@dataclass(frozen=True)
class Command:
    name: str
    request_size: int  # tasking bytes the framework sends
    response_size: int  # result bytes the payload posts back

    def __post_init__(self) -> None:
        if self.request_size < 1 or self.response_size < 1:
            raise ValueError("command sizes must be positive")


@dataclass(frozen=True)
class SessionScript:
    """Commands with the operator idle time preceding each one."""

    commands: tuple[Command, ...]
    gaps: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.commands:
            raise ValueError("script needs at least one command")
        if len(self.gaps) != len(self.commands):
            raise ValueError("one gap per command required")
        if any(g < 0 for g in self.gaps):
            raise ValueError("negative gap")


@dataclass(frozen=True)
class CommandSpec:
    name: str
    request_range: tuple[int, int]
    response_range: tuple[int, int]

    def sample(self, rng: np.random.Generator) -> Command:
        return Command(
            self.name,
            int(rng.integers(self.request_range[0], self.request_range[1] + 1)),
            int(rng.integers(self.response_range[0], self.response_range[1] + 1)),
        )


DEFAULT_CATALOG: tuple[CommandSpec, ...] = (
    CommandSpec("sysinfo", (40, 80), (150, 400)),
    CommandSpec("ps", (30, 60), (2000, 12000)),
    CommandSpec("ipconfig", (40, 80), (600, 2500)),
    CommandSpec("route", (40, 80), (400, 1600)),
    CommandSpec("ls", (30, 60), (500, 4000)),
    CommandSpec("download /etc/shadow", (50, 90), (900, 3000)),
)

OVERHEAD_COMMANDS: tuple[CommandSpec, ...] = (
    CommandSpec("sysinfo", (40, 80), (150, 400)),
    CommandSpec("ps", (30, 60), (2000, 12000)),
    CommandSpec("getuid", (30, 60), (60, 120)),
    CommandSpec("getpid", (30, 60), (60, 120)),
    CommandSpec("ipconfig", (40, 80), (600, 2500)),
    CommandSpec("route", (40, 80), (400, 1600)),
    CommandSpec("pwd", (30, 60), (60, 150)),
    CommandSpec("ls", (30, 60), (500, 4000)),
    CommandSpec("cat /etc/shadow", (50, 90), (800, 2500)),
    CommandSpec("download /etc/shadow", (50, 90), (900, 3000)),
    CommandSpec("webcam_list", (40, 80), (60, 200)),
    CommandSpec("exit", (30, 60), (40, 80)),
)


def sample_script(
    rng: np.random.Generator,
    catalog: Sequence[CommandSpec] = DEFAULT_CATALOG,
    n_commands: tuple[int, int] = (3, 8),
    gap_mean: float = 2.5,
    gap_max: float = 9.0,
) -> SessionScript:
    n = int(rng.integers(n_commands[0], n_commands[1] + 1))
    commands = tuple(catalog[int(rng.integers(len(catalog)))].sample(rng) for _ in range(n))
    gaps = tuple(float(min(rng.exponential(gap_mean), gap_max)) for _ in range(n))
    return SessionScript(commands, gaps)


def interactive_script(rng: np.random.Generator, specs: Sequence[CommandSpec] = OVERHEAD_COMMANDS) -> SessionScript:
    """One operator pass over a fixed command sequence, typing-paced."""
    commands = tuple(spec.sample(rng) for spec in specs)
    gaps = tuple(float(rng.uniform(0.8, 1.6)) for _ in specs)
    return SessionScript(commands, gaps)


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class SimConfig:
    mode: Mode = field(default_factory=Regular)
    seed: int = 0
    poll_initial: float = 1.0
    poll_max: float = 10.0
    rtt: float = 0.05
    exec_delay: float = 0.2
    get_base: int = 283  # GET request line plus headers
    post_base: int = 283  # POST headers before the result body
    response_base: int = 171  # status line plus headers
    url_jitter: int = 12  # per-session URI length variation
    response_jitter: int = 4
    handshake_wire_bytes: int = 3500
    mss: int = 1460
    size_model: TlsSizeModel = field(default_factory=TlsSizeModel)
    codec: HeaderCodec = field(default_factory=HeaderCodec)

    def __post_init__(self) -> None:
        if self.poll_initial <= 0 or self.poll_max < self.poll_initial:
            raise ValueError("poll intervals must satisfy 0 < initial <= max")
        if self.handshake_wire_bytes < 600:
            raise ValueError("handshake budget too small to build a handshake")
        if self.mss < 600:
            raise ValueError("mss too small")


@dataclass(frozen=True)
class Msg:
    time: float
    direction: Direction
    content: int  # plaintext bytes before stuffing
    stuffing: int
    size: int  # record length field on the wire


@dataclass(frozen=True)
class Conn:
    exchanges: tuple[tuple[str, Msg, Msg], ...]

    def records(self) -> list[Msg]:
        out = []
        for _kind, req, resp in self.exchanges:
            out.append(req)
            out.append(resp)
        return out


@dataclass
class SessionResult:
    conns: list[Conn]
    runtime: float
    missing_next_size: int = 0

    def n_exchanges(self) -> int:
        return sum(len(c.exchanges) for c in self.conns)


# ---------------------------------------------------------------------------
# the beacon workflow

def _workflow(script: SessionScript, cfg: SimConfig, jit_p: int, jit_f: int) -> list[tuple]:
    """(kind, t_req, req_plaintext, t_resp, resp_plaintext) per exchange."""
    events = []
    t = 0.0
    interval = cfg.poll_initial
    done = 0.0
    for cmd, gap in zip(script.commands, script.gaps):
        ready = done + gap
        while t < ready:
            events.append(("poll", t, cfg.get_base + jit_p, round(t + cfg.rtt, 6), cfg.response_base + jit_f))
            step = interval
            interval = min(interval * 2, cfg.poll_max)
            t = round(t + step, 6)
        events.append(
            ("serve", t, cfg.get_base + jit_p, round(t + cfg.rtt, 6), cfg.response_base + jit_f + cmd.request_size)
        )
        t_post = round(t + cfg.rtt + cfg.exec_delay, 6)
        events.append(
            ("result", t_post, cfg.post_base + jit_p + cmd.response_size, round(t_post + cfg.rtt, 6), cfg.response_base + jit_f)
        )
        done = round(t_post + cfg.rtt, 6)
        interval = cfg.poll_initial
        t = round(done + interval, 6)
    return events


def _group_sizes(mode: Mode, n_exchanges: int, rng: np.random.Generator) -> list[int]:
    if isinstance(mode, FixedReqPerConn):
        per = mode.requests
    elif isinstance(mode, RandReqPerConn):
        sizes = []
        left = n_exchanges
        while left > 0:
            take = min(int(rng.integers(mode.low, mode.high + 1)), left)
            sizes.append(take)
            left -= take
        return sizes
    else:
        per = 1
    sizes = []
    left = n_exchanges
    while left > 0:
        take = min(per, left)
        sizes.append(take)
        left -= take
    return sizes


def simulate_session(script: SessionScript, cfg: SimConfig, session_index: int = 0) -> SessionResult:
    """Run one session under the configured mode.

    Reshaping never touches the workflow: message times and plaintext sizes
    are drawn from streams that do not depend on the mode, so paired runs
    stay comparable down to the last poll.
    """
    jit_rng = substream(cfg.seed, "jitter", session_index)
    jit_p = int(jit_rng.integers(-cfg.url_jitter, cfg.url_jitter + 1))
    jit_f = int(jit_rng.integers(-cfg.response_jitter, cfg.response_jitter + 1))
    events = _workflow(script, cfg, jit_p, jit_f)
    runtime = events[-1][3]

    if isinstance(cfg.mode, Adversarial):
        conns, missing = _adversarial_session(events, cfg, session_index)
        return SessionResult(conns, runtime, missing)

    stuff_rng = substream(cfg.seed, "stuff", session_index)
    group_rng = substream(cfg.seed, "group", session_index)
    frame = cfg.size_model.framed_size

    def stuffing() -> int:
        if isinstance(cfg.mode, StuffFixed):
            return cfg.mode.amount
        if isinstance(cfg.mode, StuffRandom):
            return int(stuff_rng.integers(cfg.mode.low, cfg.mode.high + 1))
        return 0

    exchanges = []
    for kind, t_req, req_pt, t_resp, resp_pt in events:
        s_req, s_resp = stuffing(), stuffing()
        exchanges.append(
            (
                kind,
                Msg(round(t_req, 6), Direction.PAYLOAD_TO_FRAMEWORK, req_pt, s_req, frame(req_pt + s_req)),
                Msg(t_resp, Direction.FRAMEWORK_TO_PAYLOAD, resp_pt, s_resp, frame(resp_pt + s_resp)),
            )
        )

    conns = []
    cursor = 0
    for take in _group_sizes(cfg.mode, len(exchanges), group_rng):
        conns.append(Conn(tuple(exchanges[cursor : cursor + take])))
        cursor += take
    return SessionResult(conns, runtime)


PLAN_CANDIDATES = 48  # library draws scored per connection
PROFILE_WEIGHT = 0.25  # context drift is cheaper than corrupting a crafted size


def _plan_fit(plan: StuffingPlan, upcoming: list[tuple], frame) -> float:
    """Predicted gap between what realizing this plan produces and its crafted shape.

    Covered positions drift only by overshoot (content already past the
    target), which corrupts a size the plan explicitly crafted. Uncovered
    positions drift by however far the queued content sits from the profile
    the plan was crafted around; that is context, not the attack itself, so
    it is discounted.
    """
    err = 0.0
    for i in range(min(plan.n_exchanges, len(upcoming))):
        _, _, req_pt, _, resp_pt = upcoming[i]
        for pos, content in ((2 * i, frame(req_pt)), (2 * i + 1, frame(resp_pt))):
            if pos >= plan.n_records:
                break
            target = plan.target_at(pos)
            if target is not None:
                err += max(0, content - target)
            elif plan.profile:
                err += PROFILE_WEIGHT * abs(content - plan.profile[pos])
    return err


def _adversarial_session(events: list[tuple], cfg: SimConfig, session_index: int) -> tuple[list[Conn], int]:
    mode = cfg.mode
    plan_rng = substream(cfg.seed, "plans", session_index)
    frame = cfg.size_model.framed_size
    remaining = len(events)
    cursor = 0
    plans: list[StuffingPlan] = []
    # The operator schedules each connection onto the library plan whose
    # shape best matches the queued contents; only sizes the sender knows
    # ahead of time feed the score.
    while remaining > 0:
        best: StuffingPlan | None = None
        best_err = float("inf")
        for _ in range(PLAN_CANDIDATES):
            cand = sample_plan(mode.library, plan_rng)
            for _ in range(64):
                if cand.n_exchanges <= remaining:
                    break
                cand = sample_plan(mode.library, plan_rng)
            err = _plan_fit(cand, events[cursor : cursor + cand.n_exchanges], frame)
            if remaining - min(cand.n_exchanges, remaining) == 1:
                # a lone leftover exchange would ride an ill-fitting plan;
                # plan the splits so no orphan connection remains
                err += 1e6
            if err < best_err:
                best, best_err = cand, err
        plans.append(best)
        took = min(best.n_exchanges, remaining)
        remaining -= took
        cursor += took
    plans = chain_plans(plans)

    seeds_payload = mode.side in (StuffSide.PAYLOAD_ONLY, StuffSide.TWO_SIDE)
    # Steady-state assumption: the implant already holds a target carried
    # over from before this session.
    payload = PayloadSession(
        pending_next_size=plans[0].first_payload_target() if seeds_payload else None
    )
    last_headers = None
    conns: list[Conn] = []
    ev = iter(events)
    for plan in plans:
        fw = FrameworkSession(plan=plan, side=mode.side)
        group: list[tuple[str, Msg, Msg]] = []
        for _ in range(plan.n_exchanges):
            item = next(ev, None)
            if item is None:
                break
            kind, t_req, req_pt, t_resp, resp_pt = item
            action = payload_step(payload, last_headers, req_pt, cfg.size_model)
            payload = action.state
            reply = framework_step(fw, resp_pt, cfg.codec, cfg.size_model)
            fw = reply.state
            last_headers = reply.headers
            group.append(
                (
                    kind,
                    Msg(round(t_req, 6), Direction.PAYLOAD_TO_FRAMEWORK, req_pt, action.stuffing, action.realized_size),
                    Msg(t_resp, Direction.FRAMEWORK_TO_PAYLOAD, resp_pt, reply.stuffing, reply.realized_size),
                )
            )
        if group:
            conns.append(Conn(tuple(group)))
    return conns, payload.missing_next_size


# ---------------------------------------------------------------------------
# frame planning shared by wire accounting and emission

def _record_chunks(total: int, mss: int) -> list[int]:
    chunks = []
    left = total
    while left > 0:
        take = min(left, mss)
        chunks.append(take)
        left -= take
    return chunks


def _handshake_record_lens(cfg: SimConfig) -> tuple[int, int]:
    """Client and server handshake record lengths filling the wire budget.

    Solved so the TCP handshake plus both flights cost handshake_wire_bytes
    on the wire exactly when possible, overshooting minimally otherwise.
    """
    client_len = 283
    client_wire = RECORD_HEADER_LEN + client_len + FRAME_OVERHEAD * len(_record_chunks(RECORD_HEADER_LEN + client_len, cfg.mss))
    remaining = cfg.handshake_wire_bytes - 3 * FRAME_OVERHEAD - client_wire
    for frames in range(1, 64):
        server_len = remaining - RECORD_HEADER_LEN - FRAME_OVERHEAD * frames
        if server_len >= 1 and len(_record_chunks(RECORD_HEADER_LEN + server_len, cfg.mss)) == frames:
            return client_len, server_len
    # no exact fit: smallest overshoot with the next frame count
    for frames in range(1, 64):
        low = (frames - 1) * cfg.mss - 4  # smallest record needing this many frames
        server_len = max(low, remaining - RECORD_HEADER_LEN - FRAME_OVERHEAD * frames)
        if server_len >= 1 and len(_record_chunks(RECORD_HEADER_LEN + server_len, cfg.mss)) == frames:
            return client_len, server_len
    raise ValueError("handshake budget unsatisfiable")


@dataclass(frozen=True)
class FrameSpec:
    ts: float
    from_client: bool
    flags: int
    # (content_type, record_len, chunk_offset, chunk_len); None for bare TCP
    record: tuple[int, int, int, int] | None


def conn_frame_plan(records: Sequence[tuple[float, Direction, int]], cfg: SimConfig) -> list[FrameSpec]:
    if not records:
        raise ValueError("a connection must carry records")
    t0 = round(records[0][0] - HANDSHAKE_LEAD, 6)
    plan = [
        FrameSpec(t0, True, SYN, None),
        FrameSpec(round(t0 + 0.0002, 6), False, SYN | ACK, None),
        FrameSpec(round(t0 + 0.0004, 6), True, ACK, None),
    ]
    c_len, s_len = _handshake_record_lens(cfg)
    for ts, from_client, rec_len in (
        (round(t0 + 0.0010, 6), True, c_len),
        (round(t0 + 0.0020, 6), False, s_len),
    ):
        offset = 0
        for chunk in _record_chunks(RECORD_HEADER_LEN + rec_len, cfg.mss):
            plan.append(FrameSpec(ts, from_client, PSH | ACK, (_TLS_HANDSHAKE, rec_len, offset, chunk)))
            offset += chunk
    for ts, direction, size in records:
        from_client = direction is Direction.PAYLOAD_TO_FRAMEWORK
        offset = 0
        for chunk in _record_chunks(RECORD_HEADER_LEN + size, cfg.mss):
            plan.append(FrameSpec(round(ts, 6), from_client, PSH | ACK, (_TLS_APPDATA, size, offset, chunk)))
            offset += chunk
    t_end = records[-1][0]
    plan.append(FrameSpec(round(t_end + 0.0010, 6), True, FIN | ACK, None))
    plan.append(FrameSpec(round(t_end + FIN_TRAIL, 6), False, FIN | ACK, None))
    return plan


def conn_wire_bytes(records: Sequence[tuple[float, Direction, int]], cfg: SimConfig) -> int:
    total = 0
    for spec in conn_frame_plan(records, cfg):
        total += FRAME_OVERHEAD + (spec.record[3] if spec.record else 0)
    return total


def conn_open_close(records: Sequence[tuple[float, Direction, int]]) -> tuple[float, float]:
    return round(records[0][0] - HANDSHAKE_LEAD, 6), round(records[-1][0] + FIN_TRAIL, 6)


# ---------------------------------------------------------------------------
# flows out of sessions

@dataclass
class GeneratedFlows:
    """Aligned traces and raw per-connection records, ready for emission."""

    traces: list[FlowTrace]
    conn_records: list[tuple[tuple[float, Direction, int], ...]]
    sessions: int = 0
    missing_next_size: int = 0


def _conn_to_trace(records: Sequence[tuple[float, Direction, int]], cfg: SimConfig, conn_id: str) -> FlowTrace:
    open_t, close_t = conn_open_close(records)
    return FlowTrace(
        connection_id=conn_id,
        records=tuple(RecordEvent(ts, d, size) for ts, d, size in records),
        open_time=open_t,
        close_time=close_t,
        total_wire_bytes=conn_wire_bytes(records, cfg),
    )


def generate_c2_traces(
    n_flows: int,
    cfg: SimConfig,
    catalog: Sequence[CommandSpec] = DEFAULT_CATALOG,
    session_spacing: float = 1.0,
) -> GeneratedFlows:
    """Simulate sessions until n_flows connections exist, on a shared clock."""
    out = GeneratedFlows([], [], 0, 0)
    cursor = 1.0  # leaves room for the first handshake's lead frames
    session = 0
    while len(out.traces) < n_flows:
        script_rng = substream(cfg.seed, "script", session)
        script = sample_script(script_rng, catalog)
        result = simulate_session(script, cfg, session)
        out.missing_next_size += result.missing_next_size
        for conn in result.conns:
            if len(out.traces) >= n_flows:
                break
            records = tuple((round(m.time + cursor, 6), m.direction, m.size) for m in conn.records())
            out.conn_records.append(records)
            out.traces.append(_conn_to_trace(records, cfg, f"c2-{session}-{len(out.traces)}"))
        cursor = round(cursor + result.runtime + session_spacing, 6)
        session += 1
        out.sessions = session
    return out


# ---------------------------------------------------------------------------
# benign browsing

@dataclass(frozen=True)
class WebConfig:
    tail_p: float = 0.28  # record-count tail: P(n=2) = tail_p
    max_records: int = 40
    server_prob: float = 0.62
    full_record_prob: float = 0.16  # server record is a full 16408
    ack_prob: float = 0.34  # server record is a short ack (204/JSON status)
    upload_prob: float = 0.22  # whole flow is request/ack upload rounds
    poll_prob: float = 0.18  # whole flow is repeated API polling
    request_mu: float = 5.9
    request_sigma: float = 1.0
    server_mu: float = 6.9
    server_sigma: float = 1.35
    client_mu: float = 5.6
    client_sigma: float = 0.85
    ack_mu: float = 5.4
    ack_sigma: float = 0.8
    upload_mu: float = 8.3
    upload_sigma: float = 1.3
    poll_req_mu: float = 5.75
    poll_req_sigma: float = 0.45
    poll_resp_mu: float = 6.2
    poll_resp_sigma: float = 1.1
    gap_mean: float = 0.04
    flow_spacing: float = 0.5


def _upload_records(rng: np.random.Generator, web: WebConfig, t: float) -> list[tuple[float, Direction, int]]:
    # multipart/chunked POST rounds: big client body, short server ack
    records: list[tuple[float, Direction, int]] = []
    rounds = min(1 + int(rng.geometric(0.6)), 4)
    for _ in range(rounds):
        body = int(np.clip(round(rng.lognormal(web.upload_mu, web.upload_sigma)), 256, 16408))
        records.append((round(t, 6), Direction.PAYLOAD_TO_FRAMEWORK, body))
        t += rng.exponential(web.gap_mean)
        ack = int(np.clip(round(rng.lognormal(web.ack_mu, web.ack_sigma)), 80, 2048))
        records.append((round(t, 6), Direction.FRAMEWORK_TO_PAYLOAD, ack))
        t += rng.exponential(web.gap_mean)
    return records


def _api_poll_records(rng: np.random.Generator, web: WebConfig, t: float) -> list[tuple[float, Direction, int]]:
    # XHR/API polling: byte-identical requests, responses vary per poll
    records: list[tuple[float, Direction, int]] = []
    rounds = min(2 + int(rng.geometric(0.45)), 9)
    req = int(np.clip(round(rng.lognormal(web.poll_req_mu, web.poll_req_sigma)), 120, 2048))
    steady = rng.random() < 0.35  # cache hits: the answer barely changes
    base = int(np.clip(round(rng.lognormal(web.poll_resp_mu, web.poll_resp_sigma)), 90, 16408))
    for _ in range(rounds):
        records.append((round(t, 6), Direction.PAYLOAD_TO_FRAMEWORK, req))
        t += rng.exponential(web.gap_mean)
        if steady:
            size = int(np.clip(base + int(rng.integers(-8, 9)), 60, 16408))
        else:
            size = int(np.clip(round(rng.lognormal(web.poll_resp_mu, web.poll_resp_sigma)), 90, 16408))
        records.append((round(t, 6), Direction.FRAMEWORK_TO_PAYLOAD, size))
        t += rng.exponential(web.gap_mean)
    return records


def generate_web_traces(n_flows: int, cfg: SimConfig, web: WebConfig | None = None, seed: int | None = None) -> GeneratedFlows:
    """Browsing-like flows: one request, then a heavy-tailed mix of records."""
    web = web or WebConfig()
    rng = substream(cfg.seed if seed is None else seed, "web")
    out = GeneratedFlows([], [], 0, 0)
    cursor = 1.0
    full = 16408
    for i in range(n_flows):
        t = cursor
        roll = rng.random()
        if roll < web.upload_prob:
            records = _upload_records(rng, web, t)
        elif roll < web.upload_prob + web.poll_prob:
            records = _api_poll_records(rng, web, t)
        else:
            n = min(1 + int(rng.geometric(web.tail_p)), web.max_records)
            records = []
            size = int(np.clip(round(rng.lognormal(web.request_mu, web.request_sigma)), 64, 4096))
            records.append((round(t, 6), Direction.PAYLOAD_TO_FRAMEWORK, size))
            for j in range(1, n):
                t += rng.exponential(web.gap_mean)
                server = j == 1 or rng.random() < web.server_prob
                if server:
                    roll = rng.random()
                    if roll < web.full_record_prob:
                        size = full
                    elif roll < web.full_record_prob + web.ack_prob:
                        size = int(np.clip(round(rng.lognormal(web.ack_mu, web.ack_sigma)), 80, 1024))
                    else:
                        size = int(np.clip(round(rng.lognormal(web.server_mu, web.server_sigma)), 100, full))
                    records.append((round(t, 6), Direction.FRAMEWORK_TO_PAYLOAD, size))
                else:
                    size = int(np.clip(round(rng.lognormal(web.client_mu, web.client_sigma)), 40, 4096))
                    records.append((round(t, 6), Direction.PAYLOAD_TO_FRAMEWORK, size))
        recs = tuple(records)
        out.conn_records.append(recs)
        out.traces.append(_conn_to_trace(recs, cfg, f"web-{i}"))
        cursor = round(records[-1][0] + web.flow_spacing, 6)
    return out


# ---------------------------------------------------------------------------
# pcap emission

def emit_pcap(
    path: str | Path,
    conn_records: Sequence[Sequence[tuple[float, Direction, int]]],
    cfg: SimConfig,
    seed: int = 0,
) -> None:
    """Write the planned connections as a capture file.

    Every frame the wire-byte accounting promised is emitted literally:
    same chunk sizes, same overhead, ciphertext drawn from the seed.
    """
    rng = substream(seed, "ciphertext")
    entries: list[tuple[float, int, bytes]] = []
    order = 0
    ip_id = 0
    for idx, records in enumerate(conn_records):
        client = (f"10.0.{idx // 20000}.1", 40000 + idx % 20000)
        server = ("10.8.0.2", 443)
        seqs = {True: 1000, False: 2000}
        current_blob = b""
        for spec in conn_frame_plan(records, cfg):
            src, dst = (client, server) if spec.from_client else (server, client)
            payload = b""
            if spec.record is not None:
                ctype, rec_len, offset, chunk = spec.record
                if offset == 0:
                    header = bytes([ctype, 3, 3, (rec_len >> 8) & 0xFF, rec_len & 0xFF])
                    current_blob = header + rng.bytes(rec_len)
                payload = current_blob[offset : offset + chunk]
            if spec.flags & SYN and not spec.from_client:
                ack = seqs[True]
            elif spec.flags == SYN:
                ack = 0
            else:
                ack = seqs[not spec.from_client]
            frame = build_frame(
                src[0], dst[0], src[1], dst[1], seqs[spec.from_client], ack, spec.flags, payload, ip_id
            )
            ip_id += 1
            if spec.flags & SYN or spec.flags & FIN:
                seqs[spec.from_client] += 1
            seqs[spec.from_client] += len(payload)
            entries.append((spec.ts, order, frame))
            order += 1
    entries.sort(key=lambda e: (e[0], e[1]))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        writer = PcapWriter(fh)
        for ts, _order, frame in entries:
            writer.write_packet(ts, frame)
