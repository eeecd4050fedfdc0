"""Deterministic network simulator for the six-step transfer.

One run wires a device (hosting the seller and buyer roles) to the key
server through a channel that is honest, passively eavesdropped, or fully
intruder-mediated.  Runs are reproducible: the same setup, registry fixture
and channel configuration produce a byte-identical trace.

The trace is line-delimited JSON, one event per line with a fixed field
order, terms in canonical text encoding.  Event kinds: sent, intercepted,
forwarded, delivered, role (witness/request claims) and registry (server
lifecycle actions).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import roles
from .registry import CksRegistry, RegistryAbort, RegistryReject
from .roles import AuthEvent, ProtocolAbort, UserA, UserB
from .term import (
    AEnc, Agent, Const, KnowledgeSet, Nonce, Password, PrivKey, PubKey, SEnc,
    Term, analyze, can_derive, canonical_encode,
)

MODE_HONEST = "honest"
MODE_EAVESDROP = "eavesdrop"
MODE_MITM = "active_mitm"


@dataclass(frozen=True, slots=True)
class ChannelConfig:
    mode: str = MODE_HONEST
    seed: int = 0
    drop_after: Optional[int] = None  # drop the k-th protocol message (1-based)
    policy: str = "forward-all"


@dataclass(frozen=True, slots=True)
class TraceEvent:
    kind: str
    sender: Optional[str] = None
    recipient: Optional[str] = None
    msg: Optional[str] = None
    term: Optional[str] = None
    role_kind: Optional[str] = None
    actor: Optional[str] = None
    peer: Optional[str] = None
    goal: Optional[str] = None
    value: Optional[str] = None
    action: Optional[str] = None
    device: Optional[str] = None
    session: Optional[str] = None
    detail: Optional[str] = None

    _ORDER = ("kind", "sender", "recipient", "msg", "term", "role_kind",
              "actor", "peer", "goal", "value", "action", "device",
              "session", "detail")

    def to_json(self, index: int) -> str:
        obj: dict = {"i": index}
        for name in self._ORDER:
            value = getattr(self, name)
            if value is not None:
                obj[name] = value
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        obj = json.loads(line)
        obj.pop("i", None)
        return cls(**obj)


@dataclass(slots=True)
class Trace:
    events: list[TraceEvent] = field(default_factory=list)

    def add(self, event: TraceEvent) -> None:
        self.events.append(event)

    def encode(self) -> str:
        return "".join(ev.to_json(i) + "\n" for i, ev in enumerate(self.events))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.encode())

    @classmethod
    def load(cls, path: str) -> "Trace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls([TraceEvent.from_json(line)
                        for line in fh if line.strip()])

    def sent(self) -> list[TraceEvent]:
        return [ev for ev in self.events if ev.kind == "sent"]

    def delivered(self) -> list[TraceEvent]:
        return [ev for ev in self.events if ev.kind == "delivered"]

    def role_events(self) -> list[TraceEvent]:
        return [ev for ev in self.events if ev.kind == "role"]

    def registry_events(self) -> list[TraceEvent]:
        return [ev for ev in self.events if ev.kind == "registry"]


def role_trace_event(ev: AuthEvent) -> TraceEvent:
    return TraceEvent(kind="role", role_kind=ev.kind, actor=ev.actor,
                      peer=ev.peer, goal=ev.protocol_id,
                      value=canonical_encode(ev.value))


# ---------------------------------------------------------------------------
# Intruder
# ---------------------------------------------------------------------------

class Intruder:
    """Dolev-Yao network adversary: everything sent passes through it.

    Message origin and destination are visible alongside the payload
    (conservative: the adversary distinguishes who produced each message).
    """

    def __init__(self, knowledge: KnowledgeSet, seed: int = 0):
        self.knowledge = analyze(knowledge)
        self.recorded: list[tuple[str, str, Term]] = []  # (sender, recipient, term)
        self.rng = random.Random(seed)

    def learn(self, term: Term, sender: str, recipient: str) -> None:
        self.knowledge = analyze(self.knowledge.union((term,)))
        self.recorded.append((sender, recipient, term))

    def check_injection(self, term: Term) -> None:
        if not can_derive(self.knowledge, term):
            raise AssertionError(
                f"intruder injected a term it cannot derive: "
                f"{canonical_encode(term)}")


PolicyFn = Callable[[Intruder, int, str, Term], list[tuple[str, Term]]]
"""policy(intruder, msg_index, recipient, term) -> deliveries [(to, term)]."""


def policy_forward_all(intr: Intruder, idx: int, to: str, term: Term):
    return [(to, term)]


def policy_drop_at(k: int) -> PolicyFn:
    def policy(intr: Intruder, idx: int, to: str, term: Term):
        return [] if idx == k else [(to, term)]
    return policy


def policy_replay_random(intr: Intruder, idx: int, to: str, term: Term):
    """Forward everything; sometimes re-deliver an earlier recorded message."""
    deliveries = [(to, term)]
    if intr.recorded and intr.rng.random() < 0.5:
        _frm, old_to, old_term = intr.rng.choice(intr.recorded)
        deliveries.append((old_to, old_term))
    return deliveries


BUILTIN_POLICIES: dict[str, PolicyFn] = {
    "forward-all": policy_forward_all,
    "replay-random": policy_replay_random,
}


def default_intruder_knowledge(seller: str, buyer: str) -> KnowledgeSet:
    """Agent names, public keys, the intruder's own key pair and scratch."""
    return KnowledgeSet.of(
        Agent(seller), Agent(buyer), Agent("i"),
        PubKey("cks"), PubKey("i"), PrivKey("i"),
        Nonce("ni", 0),
    )


# ---------------------------------------------------------------------------
# Actors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class TransferSetup:
    device: str
    seller: str
    buyer: str
    seller_password: Password
    session: int = 1


class DeviceActor:
    """The device under sale: both user roles plus the hand-over choreography."""

    def __init__(self, setup: TransferSetup):
        pk = PubKey("cks")
        self.setup = setup
        self.user_a = UserA(setup.seller, setup.seller_password, setup.buyer,
                            pk, setup.session)
        self.user_b = UserB(setup.buyer, pk, setup.session)
        self.awaiting = "m2"
        self.aborted: Optional[str] = None

    @property
    def complete(self) -> bool:
        return self.user_b.temp_id is not None

    def start(self) -> tuple[str, str, Term, tuple[AuthEvent, ...]]:
        n_b = self.user_b.enter_nonce()  # buyer keys the nonce in locally
        out = roles.usera_run(self.user_a, ("start", n_b))
        return (self.setup.seller, "m1", out.message, out.events)

    def deliver(self, term: Term) -> Optional[tuple[str, str, Term, tuple[AuthEvent, ...]]]:
        """Process one inbound term; returns (sender, label, reply, events)
        or None when the message is absorbed."""
        try:
            if self.awaiting == "m2":
                # the ticket is opaque to both users: any term fills the slot
                roles.userb_run(self.user_b, ("ticket", term))
                out = roles.userb_run(self.user_b, ("present", None))
                self.awaiting = "m4"
                return (self.setup.buyer, "m3", out.message, out.events)
            if self.awaiting == "m4":
                if not isinstance(term, SEnc):
                    return None
                # addressed to the buyer, handed over to the seller to open
                out = roles.usera_run(self.user_a, ("otc", term))
                self.awaiting = "m6"
                return (self.setup.seller, "m5", out.message, out.events)
            if self.awaiting == "m6":
                if not isinstance(term, SEnc):
                    return None
                out = roles.userb_run(self.user_b, ("tempid", term))
                self.awaiting = "done"
                return (None, None, None, out.events)
        except ProtocolAbort as exc:
            self.aborted = str(exc)
            return None
        return None


class CksActor:
    """Server front-end: dispatches wire messages onto the registry."""

    def __init__(self, registry: CksRegistry, setup: TransferSetup):
        self.registry = registry
        self.setup = setup

    def deliver(self, term: Term) -> tuple[Optional[tuple[str, Term]], list, list]:
        """Returns ((label, reply) | None, registry events, auth events)."""
        reply = None
        try:
            shape = _classify(term)
            if shape == "m1":
                ticket = self.registry.begin_transfer(term, device=self.setup.device)
                reply = ("m2", ticket)
            elif shape == "m3":
                reply = ("m4", self.registry.present_ticket(term))
            elif shape == "m5":
                m6, _rec = self.registry.confirm(term)
                reply = ("m6", m6)
        except RegistryReject as exc:
            self.registry.note("rejected", self.setup.device, detail=str(exc))
        except RegistryAbort:
            pass  # the registry recorded the lock itself
        return reply, self.registry.drain_events(), self.registry.drain_auth_events()


def _classify(term: Term) -> Optional[str]:
    if not isinstance(term, AEnc):
        return None
    try:
        roles.open_m1(term)
        return "m1"
    except roles.MessageFormat:
        pass
    try:
        roles.open_m3(term)
        return "m3"
    except roles.MessageFormat:
        pass
    if isinstance(term.body, Const):
        return "m5"
    return None


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class RunResult:
    trace: Trace
    device: DeviceActor
    registry: CksRegistry
    intruder: Optional[Intruder]
    completed: bool


def resolve_policy(config: ChannelConfig) -> PolicyFn:
    if config.policy in BUILTIN_POLICIES:
        return BUILTIN_POLICIES[config.policy]
    if config.policy.startswith("drop-at-"):
        return policy_drop_at(int(config.policy.rsplit("-", 1)[1]))
    raise ValueError(f"unknown intruder policy {config.policy!r}")


def run(setup: TransferSetup, registry: CksRegistry, config: ChannelConfig,
        policy: Optional[PolicyFn] = None,
        intruder_knowledge: Optional[KnowledgeSet] = None) -> RunResult:
    """Execute one transfer attempt end to end and return the full result."""
    if config.mode not in (MODE_HONEST, MODE_EAVESDROP, MODE_MITM):
        raise ValueError(f"unknown channel mode {config.mode!r}")
    if setup.device not in registry.records:
        raise ValueError(f"device {setup.device!r} is not provisioned")
    trace = Trace()
    device = DeviceActor(setup)
    cks = CksActor(registry, setup)
    intruder = None
    if config.mode in (MODE_EAVESDROP, MODE_MITM):
        k0 = intruder_knowledge or default_intruder_knowledge(
            setup.seller, setup.buyer)
        intruder = Intruder(k0, seed=config.seed)
    if policy is None and config.mode == MODE_MITM:
        policy = resolve_policy(config)

    msg_index = 0
    queue: list[tuple[str, str, Optional[str], Term]] = []  # (frm, to, label, term)

    def emit(frm: str, label: Optional[str], term: Term, to: str) -> None:
        nonlocal msg_index
        msg_index += 1
        idx = msg_index
        trace.add(TraceEvent(kind="sent", sender=frm, recipient=to, msg=label,
                             term=canonical_encode(term)))
        if intruder is not None:
            intruder.learn(term, frm, to)
            trace.add(TraceEvent(kind="intercepted", msg=label,
                                 term=canonical_encode(term)))
        if config.drop_after is not None and idx == config.drop_after:
            return
        if config.mode == MODE_MITM:
            for to2, term2 in policy(intruder, idx, to, term):
                intruder.check_injection(term2)
                trace.add(TraceEvent(kind="forwarded", term=canonical_encode(term2)))
                queue.append((frm, to2, label if term2 == term else None, term2))
        else:
            queue.append((frm, to, label, term))

    def record_registry(events: list) -> None:
        for rev in events:
            trace.add(TraceEvent(kind="registry", action=rev.action,
                                 device=rev.device, session=rev.session,
                                 detail=rev.detail))

    def record_auth(events) -> None:
        for aev in events:
            trace.add(role_trace_event(aev))

    # step 1 originates on the device
    frm, label, m1, events = device.start()
    record_auth(events)
    emit(frm, label, m1, "cks")

    while queue:
        frm, to, label, term = queue.pop(0)
        registry.tick()
        trace.add(TraceEvent(kind="delivered", recipient=to, msg=label,
                             term=canonical_encode(term)))
        if to == "cks":
            reply, reg_events, auth_events = cks.deliver(term)
            record_registry(reg_events)
            record_auth(auth_events)
            if reply is not None:
                rlabel, rterm = reply
                recipient = setup.seller if rlabel == "m2" else setup.buyer
                emit("cks", rlabel, rterm, recipient)
        else:
            result = device.deliver(term)
            if device.aborted is not None and result is None:
                break
            if result is not None:
                sfrm, slabel, sterm, events = result
                record_auth(events)
                if sterm is not None:
                    emit(sfrm, slabel, sterm, "cks")

    rec = registry.records.get(setup.device)
    completed = (device.complete and rec is not None
                 and rec.owner == setup.buyer and rec.temp_id is not None)
    if not completed:
        # stalled or aborted: let the pending-session deadline expire, then
        # the device reports the incomplete process
        registry.tick(registry.deadline)
        record_registry(registry.drain_events())
        if device.aborted or device.awaiting != "done":
            registry.report_incomplete(setup.device,
                                       device.aborted or "transfer incomplete")
            record_registry(registry.drain_events())
    return RunResult(trace, device, registry, intruder, completed)


def run_session(setup: TransferSetup, registry: CksRegistry,
                config: ChannelConfig) -> Trace:
    """Public entry point: execute one run and return its trace."""
    return run(setup, registry, config).trace
