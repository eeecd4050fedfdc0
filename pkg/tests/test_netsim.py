import json

import pytest

from oatproto import netsim
from oatproto.netsim import (
    ChannelConfig, Intruder, Trace, TransferSetup, default_intruder_knowledge,
    run, run_session,
)
from oatproto.registry import CksRegistry, STATUS_LOCKED
from oatproto.term import Agent, Password, PubKey, can_derive, cat, parse_term

SETUP = TransferSetup("dev1", "a", "b", Password("a"))


def fresh_registry(seed=7):
    reg = CksRegistry(seed=seed)
    reg.provision("dev1", "a", Password("a"))
    return reg


def test_honest_run_is_six_messages_and_finalizes():
    result = run(SETUP, fresh_registry(), ChannelConfig(mode="honest", seed=7))
    assert result.completed
    sent = result.trace.sent()
    assert [ev.msg for ev in sent] == ["m1", "m2", "m3", "m4", "m5", "m6"]
    assert len(result.trace.delivered()) == 6
    actions = [ev.action for ev in result.trace.registry_events()]
    assert actions == ["ticket_issued", "otc_sent", "finalized"]


def test_honest_run_message_flow_matches_the_diagram():
    result = run(SETUP, fresh_registry(), ChannelConfig(mode="honest", seed=7))
    flow = [(ev.sender, ev.recipient) for ev in result.trace.sent()]
    assert flow == [("a", "cks"), ("cks", "a"), ("b", "cks"),
                    ("cks", "b"), ("a", "cks"), ("cks", "b")]


def test_trace_is_deterministic_under_fixed_seed():
    one = run_session(SETUP, fresh_registry(), ChannelConfig("active_mitm", seed=3,
                                                             policy="replay-random"))
    two = run_session(SETUP, fresh_registry(), ChannelConfig("active_mitm", seed=3,
                                                             policy="replay-random"))
    assert one.encode() == two.encode()


def test_trace_round_trips_through_files(tmp_path):
    trace = run_session(SETUP, fresh_registry(), ChannelConfig("honest", seed=7))
    path = tmp_path / "trace.jsonl"
    trace.save(str(path))
    loaded = Trace.load(str(path))
    assert loaded.encode() == trace.encode()
    for i, line in enumerate(path.read_text().splitlines()):
        assert json.loads(line)["i"] == i  # indices strictly increase


def test_delivered_terms_are_a_subset_of_sent_or_forwarded():
    for policy in ("forward-all", "replay-random"):
        result = run(SETUP, fresh_registry(),
                     ChannelConfig("active_mitm", seed=11, policy=policy))
        offered = {ev.term for ev in result.trace.events
                   if ev.kind in ("sent", "forwarded")}
        for ev in result.trace.delivered():
            assert ev.term in offered


def test_eavesdrop_mode_records_and_learns():
    result = run(SETUP, fresh_registry(), ChannelConfig("eavesdrop", seed=7))
    assert result.completed
    intercepted = [ev for ev in result.trace.events if ev.kind == "intercepted"]
    assert len(intercepted) == 6
    for ev in intercepted:
        assert parse_term(ev.term) in result.intruder.knowledge.terms


def test_mitm_forward_all_completes_without_learning_secrets():
    result = run(SETUP, fresh_registry(),
                 ChannelConfig("active_mitm", seed=7, policy="forward-all"))
    assert result.completed
    intercepted = [ev for ev in result.trace.events if ev.kind == "intercepted"]
    forwarded = [ev for ev in result.trace.events if ev.kind == "forwarded"]
    assert len(intercepted) == 6 and len(forwarded) == 6
    k = result.intruder.knowledge
    assert not can_derive(k, Password("a"))
    assert not can_derive(k, result.device.user_a.nonce)
    assert not can_derive(k, result.device.user_b.nonce)
    assert not can_derive(k, result.device.user_a.otc)
    assert not can_derive(k, result.device.user_b.temp_id)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_drop_matrix_locks_the_device(k):
    reg = fresh_registry()
    result = run(SETUP, reg, ChannelConfig("honest", seed=7, drop_after=k))
    assert not result.completed
    assert reg.records["dev1"].status == STATUS_LOCKED
    assert not reg.authenticate_use("dev1", "a", Password("a"))
    assert not reg.authenticate_use("dev1", "b", Password("b"))


def test_drop_final_message_leaves_buyer_without_credential():
    reg = fresh_registry()
    result = run(SETUP, reg, ChannelConfig("honest", seed=7, drop_after=6))
    assert not result.completed
    assert result.device.user_b.temp_id is None
    rec = reg.records["dev1"]
    assert rec.status == STATUS_LOCKED
    assert not reg.authenticate_use("dev1", "a", Password("a"))
    assert not reg.authenticate_use("dev1", "b", Password("b"))


def test_replay_policy_never_extracts_a_second_confirmation():
    reg = fresh_registry()
    result = run(SETUP, reg, ChannelConfig("active_mitm", seed=3,
                                           policy="replay-random"))
    m4_sends = [ev for ev in result.trace.sent() if ev.msg == "m4"]
    assert len(m4_sends) == 1
    otc_events = [ev for ev in result.trace.registry_events()
                  if ev.action == "otc_sent"]
    assert len(otc_events) == 1


def test_garbage_substitution_stalls_to_deadline_lock():
    reg = fresh_registry()
    garbage = cat(Agent("i"), Agent("i"))

    def policy(intr, idx, to, term):
        if idx == 4:  # replace the confirmation with derivable junk
            return [(to, garbage)]
        return [(to, term)]

    result = run(SETUP, reg, ChannelConfig("active_mitm", seed=7), policy=policy)
    assert not result.completed
    assert reg.records["dev1"].status == STATUS_LOCKED


def test_injection_soundness_is_asserted():
    def policy(intr, idx, to, term):
        return [(to, Password("a"))]  # not derivable: contract violation

    with pytest.raises(AssertionError, match="cannot derive"):
        run(SETUP, fresh_registry(), ChannelConfig("active_mitm", seed=7),
            policy=policy)


def test_intruder_can_always_forward_observed_ciphertexts():
    intr = Intruder(default_intruder_knowledge("a", "b"))
    blob = netsim.AEnc(Password("a"), PubKey("cks"))
    intr.learn(blob, "a", "cks")
    intr.check_injection(blob)  # replay of an observed term is always sound
    assert intr.recorded == [("a", "cks", blob)]  # origin metadata retained


def test_unknown_mode_rejected():
    with pytest.raises(ValueError, match="unknown channel mode"):
        run(SETUP, fresh_registry(), ChannelConfig("wormhole", seed=1))
