import numpy as np
import pytest
from hypothesis import given, strategies as st

from c2lab.adversarial import StuffSide, chain_plans, plan_from_adversarial
from c2lab.model import FeatureVector
from c2lab.protocol import (
    CodecError,
    FrameworkSession,
    HeaderCodec,
    HeaderKind,
    MAX_NEXT_SIZE,
    PayloadSession,
    ProtocolError,
    framework_step,
    payload_step,
    run_lockstep,
)
from c2lab.sizing import TlsSizeModel

CODEC = HeaderCodec()
SIZE = TlsSizeModel()


# ---------------------------------------------------------------------------
# header codec


def test_padding_line_is_exactly_the_requested_length():
    h = CODEC.make_padding(50)
    assert CODEC.encoded_len(h) == 50
    assert CODEC.decode(CODEC.encode(h)) == h


def test_padding_lower_bound():
    assert CODEC.encoded_len(CODEC.make_padding(CODEC.min_padding_line)) == CODEC.min_padding_line
    with pytest.raises(CodecError):
        CODEC.make_padding(CODEC.min_padding_line - 1)


def test_padding_filler_can_be_randomized():
    rng = np.random.default_rng(3)
    h = CODEC.make_padding(64, rng)
    assert CODEC.encoded_len(h) == 64
    assert h.value != CODEC.make_padding(64).value


def test_next_size_roundtrip():
    h = CODEC.make_next_size(1072)
    line = CODEC.encode(h)
    assert line == b"X-Correlation-Id: 1072\r\n"
    back = CODEC.decode(line)
    assert back.kind is HeaderKind.NEXT_SIZE
    assert int(back.value) == 1072


def test_next_size_bounds():
    CODEC.make_next_size(0)
    CODEC.make_next_size(MAX_NEXT_SIZE)
    with pytest.raises(CodecError):
        CODEC.make_next_size(-1)
    with pytest.raises(CodecError):
        CODEC.make_next_size(MAX_NEXT_SIZE + 1)


def test_decode_rejects_malformed_lines():
    with pytest.raises(CodecError):
        CODEC.decode(b"X-Correlation-Id: 12")  # no CRLF
    with pytest.raises(CodecError):
        CODEC.decode(b"X-Correlation-Id:12\r\n")  # no separator space
    with pytest.raises(CodecError):
        CODEC.decode(b"X-Unknown: 1\r\n")
    with pytest.raises(CodecError):
        CODEC.decode(b"X-Correlation-Id: 007\r\n")  # leading zeros
    with pytest.raises(CodecError):
        CODEC.decode(b"X-Correlation-Id: 12a\r\n")
    with pytest.raises(CodecError):
        CODEC.decode(b"Connection: upgrade\r\n")


def test_conn_state_values():
    assert CODEC.make_conn_state(True).value == b"close"
    assert CODEC.make_conn_state(False).value == b"keep-alive"
    assert CODEC.decode(b"Connection: close\r\n").kind is HeaderKind.CONN_STATE


def test_renamed_headers_still_roundtrip():
    codec = HeaderCodec(padding_name="X-Trace", next_size_name="X-Req-Id")
    h = codec.make_padding(40)
    assert codec.encoded_len(h) == 40
    assert codec.decode(codec.encode(codec.make_next_size(99))).value == b"99"
    with pytest.raises(CodecError):
        codec.decode(b"X-Client-Data: xx\r\n")  # default name no longer known


@given(st.integers(min_value=0, max_value=MAX_NEXT_SIZE))
def test_next_size_roundtrip_property(size):
    assert int(CODEC.decode(CODEC.encode(CODEC.make_next_size(size))).value) == size


@given(st.integers(min_value=CODEC.min_padding_line, max_value=400))
def test_padding_roundtrip_property(total):
    h = CODEC.make_padding(total)
    assert CODEC.encoded_len(h) == total
    assert CODEC.decode(CODEC.encode(h)) == h


# ---------------------------------------------------------------------------
# state machines


def _two_side_plan():
    fv = FeatureVector.from_sizes([640, 480, 720, 512])
    return plan_from_adversarial(fv, StuffSide.TWO_SIDE)


def test_framework_announces_next_request_size():
    plan = _two_side_plan()
    state = FrameworkSession(plan=plan, side=StuffSide.TWO_SIDE)
    reply = framework_step(state, content_plaintext=180)
    assert not reply.close
    kinds = [h.kind for h in reply.headers]
    assert kinds == [HeaderKind.CONN_STATE, HeaderKind.NEXT_SIZE]
    assert reply.headers[0].value == b"keep-alive"
    assert int(reply.headers[1].value) == 720  # target for position 2

    final = framework_step(reply.state, content_plaintext=180)
    assert final.close
    assert final.headers[0].value == b"close"
    # no carry-over configured, so the close carries no size announcement
    assert [h.kind for h in final.headers] == [HeaderKind.CONN_STATE]
    with pytest.raises(ProtocolError):
        framework_step(final.state, 100)


def test_framework_close_hands_over_next_connection_target():
    plan, last = chain_plans([_two_side_plan(), _two_side_plan()])
    state = FrameworkSession(plan=plan, side=StuffSide.TWO_SIDE)
    reply = framework_step(state, 180)
    final = framework_step(reply.state, 180)
    assert final.close
    assert int(final.headers[1].value) == last.first_payload_target() == 640


def test_framework_only_mode_sends_no_size_headers():
    fv = FeatureVector.from_sizes([640, 480, 720, 512])
    plan = plan_from_adversarial(fv, StuffSide.FRAMEWORK_ONLY)
    state = FrameworkSession(plan=plan, side=StuffSide.FRAMEWORK_ONLY)
    reply = framework_step(state, 180)
    assert [h.kind for h in reply.headers] == [HeaderKind.CONN_STATE]
    framed = SIZE.framed_size(180)
    assert reply.stuffing == 480 - framed
    assert reply.realized_size == 480


def test_framework_stuffing_accounts_for_control_bytes():
    plan = _two_side_plan()
    state = FrameworkSession(plan=plan, side=StuffSide.TWO_SIDE)
    content = 180
    reply = framework_step(state, content)
    control = CODEC.encoded_len(reply.headers[1])
    framed = SIZE.framed_size(content + control)
    assert reply.realized_size == framed + reply.stuffing == 480


def test_framework_overshoot_keeps_content():
    plan = _two_side_plan()
    state = FrameworkSession(plan=plan, side=StuffSide.TWO_SIDE)
    reply = framework_step(state, content_plaintext=2000)  # past the 480 target
    assert reply.stuffing == 0
    assert reply.realized_size > 480


def test_payload_applies_pending_size():
    state = PayloadSession(pending_next_size=640)
    action = payload_step(state, received=None, content_plaintext=280)
    assert action.realized_size == 640
    assert action.stuffing == 640 - SIZE.framed_size(280)
    assert action.state.pending_next_size is None
    assert action.state.missing_next_size == 0


def test_payload_without_guidance_sends_bare_content():
    action = payload_step(PayloadSession(), received=None, content_plaintext=280)
    assert action.realized_size == SIZE.framed_size(280)
    assert action.state.missing_next_size == 1


def test_payload_reads_headers():
    headers = (CODEC.make_conn_state(True), CODEC.make_next_size(912))
    action = payload_step(PayloadSession(), received=headers, content_plaintext=280)
    assert not action.reuse_connection
    assert action.realized_size == 912
    keepalive = (CODEC.make_conn_state(False),)
    action2 = payload_step(PayloadSession(), received=keepalive, content_plaintext=280)
    assert action2.reuse_connection
    assert action2.state.missing_next_size == 1  # no size came down


def test_lockstep_small_chain():
    plans = chain_plans([_two_side_plan(), _two_side_plan(), _two_side_plan()])
    n_msgs = sum(p.n_exchanges for p in plans)
    reqs = [120] * n_msgs
    resps = [100] * n_msgs
    conns, closes = run_lockstep(plans, reqs, resps, StuffSide.TWO_SIDE)
    assert closes == 3
    assert [len(c) for c in conns] == [4, 4, 4]
    for conn, plan in zip(conns, plans):
        for pos, size in enumerate(conn):
            assert size == plan.target_at(pos)  # targets comfortably above content


def test_lockstep_framework_only_leaves_requests_alone():
    fv = FeatureVector.from_sizes([640, 480, 720, 512])
    plans = chain_plans([plan_from_adversarial(fv, StuffSide.FRAMEWORK_ONLY)] * 2)
    conns, closes = run_lockstep(plans, [120] * 4, [100] * 4, StuffSide.FRAMEWORK_ONLY)
    framed_req = SIZE.framed_size(120)
    for conn in conns:
        assert conn[0::2] == [framed_req, framed_req]
        assert conn[1::2] == [480, 512]
    assert closes == 2


def test_lockstep_odd_plan_leaves_tail_response_bare():
    fv = FeatureVector.from_sizes([640, 480, 720])  # three records, two exchanges
    plan = plan_from_adversarial(fv, StuffSide.TWO_SIDE)
    conns, closes = run_lockstep([plan], [120, 120], [100, 100], StuffSide.TWO_SIDE)
    assert closes == 1
    (conn,) = conns
    assert conn[:3] == [640, 480, 720]
    assert conn[3] == SIZE.framed_size(100)  # position 3 has no target
