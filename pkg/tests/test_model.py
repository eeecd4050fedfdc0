import pytest

from oatproto.hlpsl import lower
from oatproto.model import (
    AmbiguousMatch, ModelError, RoleSpec, START, Transition, instantiate,
    step,
)
from oatproto.term import (
    AEnc, Agent, Const, Nonce, PubKey, SEnc, Var, canonical_encode, cat,
)


def _instances(oat_model):
    low = lower(oat_model, sessions=1)
    return {inst.spec.name: inst for inst in low.instances}


def test_instantiate_places_usera_at_state_zero(oat_model):
    insts = _instances(oat_model)
    usera = insts["usera"]
    assert usera.state == 0
    env = usera.env
    assert env["UA"] == Agent("a")
    assert env["C"] == Agent("b")  # the wiring binds the server role to b
    assert env["Kcks"] == PubKey("cks")


def test_instantiate_missing_parameter_is_an_error(oat_model):
    spec = oat_model.role("usera")
    with pytest.raises(ModelError, match="Kcks"):
        instantiate(spec, {"UA": Agent("a"), "C": Agent("b"),
                           "SND": Const("ch"), "RCV": Const("ch")}, 1)


def test_distinct_sessions_make_distinct_nonces(oat_model):
    spec = oat_model.role("usera")
    binding = {"UA": Agent("a"), "C": Agent("b"), "Kcks": PubKey("cks"),
               "SND": Const("ch"), "RCV": Const("ch")}
    one = step(instantiate(spec, binding, 1), START)
    two = step(instantiate(spec, binding, 2), START)
    na1 = one.instance.env["Na"]
    na2 = two.instance.env["Na"]
    assert na1 == Nonce("na", 1)
    assert na2 == Nonce("na", 2)
    assert na1 != na2


def _honest_walk(oat_model):
    """Drive the lowered model through the honest six-message exchange."""
    insts = _instances(oat_model)
    usera, ck, userb = insts["usera"], insts["ck"], insts["userb"]
    visited = {"usera": {usera.state}, "ck": {ck.state}, "userb": {userb.state}}
    wire = []
    events = []

    def advance(name, inst, incoming):
        result = step(inst, incoming)
        assert result is not None
        visited[name].add(result.instance.state)
        events.extend(result.events)
        if result.outgoing is not None:
            wire.append(result.outgoing)
        return result.instance, result.outgoing

    usera, m1 = advance("usera", usera, START)
    ck, m2 = advance("ck", ck, m1)
    userb, m3 = advance("userb", userb, m2)
    ck, m4 = advance("ck", ck, m3)
    usera, m5 = advance("usera", usera, m4)
    ck, m6 = advance("ck", ck, m5)
    userb, none = advance("userb", userb, m6)
    assert none is None
    return visited, wire, events


def test_ck_fires_on_transfer_request_and_emits_ticket(oat_model):
    insts = _instances(oat_model)
    m1 = AEnc(cat(Agent("a"), Const("pwa"), Const("otr"), Nonce("na", 1)),
              PubKey("cks"))
    result = step(insts["ck"], m1)
    assert result is not None
    assert result.instance.state == 3
    assert result.outgoing == Nonce("t", 1)  # the ticket value it just minted


def test_wrong_symmetric_key_blocks_unification(oat_model):
    insts = _instances(oat_model)
    usera = step(insts["usera"], START).instance
    assert usera.state == 2
    bogus = SEnc(Const("otc"), Nonce("x", 9))
    assert step(usera, bogus) is None  # NoMatch, absorbed


def test_userb_completion_records_request_event(oat_model):
    visited, wire, events = _honest_walk(oat_model)
    requests = [ev for ev in events if ev.kind == "request"]
    assert [ev.protocol_id for ev in requests] == ["usera_server_na",
                                                   "userb_server_nb"]
    final = requests[-1]
    assert final.actor == "c" and final.peer == "b"  # buyer claims, server witnessed
    assert final.value == Nonce("nb", 1)


def test_honest_reachable_state_sets(oat_model):
    visited, _, _ = _honest_walk(oat_model)
    assert visited["usera"] == {0, 2, 8}
    assert visited["ck"] == {1, 3, 7, 9}
    assert visited["userb"] == {4, 8, 10}


def test_honest_walk_is_six_messages(oat_model):
    _, wire, _ = _honest_walk(oat_model)
    assert len(wire) == 6


def test_step_is_deterministic(oat_model):
    insts = _instances(oat_model)
    first = step(insts["usera"], START)
    second = step(insts["usera"], START)
    assert first == second


def test_step_outputs_are_ground(oat_model):
    _, wire, events = _honest_walk(oat_model)
    for term in wire:
        canonical_encode(term)  # raises on any leftover variable
    for ev in events:
        canonical_encode(ev.value)


def test_unbound_send_variable_without_fresh_marking_is_an_error():
    spec = RoleSpec(
        name="broken", params=(("A", "agent"),), played_by="A",
        locals_=(("X", "message"),), initial_state=0,
        transitions=(Transition("1", 0, receive=START, fresh=(), to_state=1,
                                send=Var("X")),))
    inst = instantiate(spec, {"A": Agent("a")}, 1)
    with pytest.raises(ModelError, match="unbound"):
        step(inst, START)


def test_ambiguous_transitions_are_reported():
    tr = Transition("1", 0, receive=Var("X"), fresh=(), to_state=1, send=None)
    spec = RoleSpec(
        name="dup", params=(("A", "agent"),), played_by="A",
        locals_=(("X", "message"),), initial_state=0,
        transitions=(tr, Transition("2", 0, receive=Var("X"), fresh=(),
                                    to_state=2, send=None)))
    inst = instantiate(spec, {"A": Agent("a")}, 1)
    with pytest.raises(AmbiguousMatch):
        step(inst, Const("x"))
