"""Bounded explicit-state verification under a Dolev-Yao intruder.

The search explores every interleaving of role-instance transitions up to a
session count and a firing depth.  The network is the intruder: every
emitted term joins its knowledge, and a transition fires on any term the
intruder can produce that the receive pattern accepts.  Candidate deliveries
come from two sound routes: replay of any known term that unifies with the
pattern, and synthesis, instantiating the pattern's free variables from the
intruder's knowledge and checking derivability of the result.  Variables
whose value the role never uses again are filled with a single
representative (they cannot influence any later check), and text/agent-kind
variables draw from atoms only, matching the typed-model semantics of the
tooling this checker reproduces.

Checked properties: authentication correspondence (witness precedes request
on the same goal, peers and value; injective agreement additionally pairs
them one to one) and secrecy of nominated values.  A Safe verdict is
bounded, never a proof; an Attack verdict carries a replayable trace.
"""

from __future__ import annotations

import functools
import itertools
import threading
from collections import Counter, deque
from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .hlpsl import Goal, LoweredModel, SpecModel, lower
from .model import (
    RoleInstance, RoleSpec, START, StepResult, Transition, pattern_vars,
    step, substitute, unify,
)
from .netsim import Trace, TraceEvent, role_trace_event
from .roles import AuthEvent
from .term import (
    Agent, Const, KnowledgeSet, Nonce, Term, analyze, can_derive,
    canonical_encode,
)

SCRATCH_ATOMS = (Nonce("ni", 0), Const("ci"))


@dataclass(frozen=True, slots=True)
class Bounds:
    sessions: int = 1
    depth: int = 12
    agent_cast: tuple[str, ...] = ("i",)

    def __post_init__(self) -> None:
        if self.sessions < 1 or self.depth < 1:
            raise ValueError("bounds must be at least 1 session and depth 1")


@dataclass(frozen=True, slots=True)
class Safe:
    states_explored: int
    depth_reached: int
    bounded: bool = True


@dataclass(frozen=True, slots=True)
class Move:
    """One scheduler choice: deliver ``delivered`` to instance ``inst``."""

    inst: int
    label: str
    delivered: Optional[str]  # canonical term, None for spontaneous/start


@dataclass(frozen=True, slots=True)
class Attack:
    goal_id: str
    counterexample: Trace
    kind: str = "authentication"  # or "secrecy"
    moves: tuple[Move, ...] = ()


Verdict = Union[Safe, Attack]


@dataclass(frozen=True, slots=True)
class Violation:
    goal_id: str
    detail: str
    index: Optional[int] = None


# ---------------------------------------------------------------------------
# Correspondence over recorded traces
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class CorrespondenceReport:
    violations: list[Violation]
    matched: int


def check_correspondence(trace: Trace, goals: Iterable[str],
                         injective: bool = True) -> CorrespondenceReport:
    """Scan a trace's role events: every request must follow a witness by the
    named peer on the same goal and value; injective mode consumes witnesses
    one to one."""
    goal_ids = set(goals)
    available: Counter = Counter()
    seen: set[tuple] = set()
    violations: list[Violation] = []
    matched = 0
    for index, ev in enumerate(trace.events):
        if ev.kind != "role":
            continue
        key = (ev.goal, ev.actor, ev.peer, ev.value)
        if ev.role_kind == "witness":
            available[key] += 1
            seen.add(key)
        elif ev.role_kind == "request" and ev.goal in goal_ids:
            want = (ev.goal, ev.peer, ev.actor, ev.value)
            if injective:
                if available[want] > 0:
                    available[want] -= 1
                    matched += 1
                else:
                    violations.append(Violation(
                        ev.goal,
                        f"request by {ev.actor} on {ev.value} has no unmatched "
                        f"witness from {ev.peer}", index))
            else:
                if want in seen:
                    matched += 1
                else:
                    violations.append(Violation(
                        ev.goal,
                        f"request by {ev.actor} on {ev.value} was never "
                        f"witnessed by {ev.peer}", index))
    return CorrespondenceReport(violations, matched)


# ---------------------------------------------------------------------------
# Secrecy
# ---------------------------------------------------------------------------

SecretSpec = Union[Term, str]  # exact term, or an atom label wildcard


def _atom_label(term: Term) -> Optional[str]:
    if isinstance(term, Nonce):
        return term.label
    if isinstance(term, Const):
        return term.name
    return None


def check_secrecy(final_knowledge: KnowledgeSet,
                  secrets: Iterable[SecretSpec]) -> list[Violation]:
    """One violation per secret the knowledge can derive.

    String secrets are atom-label wildcards (any nonce or constant carrying
    that label, whatever its session); since atoms cannot be composed, a
    derivable atom is always in the analysis closure itself.
    """
    closure = analyze(final_knowledge)
    violations = []
    for secret in secrets:
        if isinstance(secret, str):
            hits = sorted(canonical_encode(t) for t in closure.terms
                          if _atom_label(t) == secret)
            if hits:
                violations.append(Violation(
                    f"secrecy_{secret}", f"derivable: {', '.join(hits)}"))
        else:
            if can_derive(closure, secret):
                violations.append(Violation(
                    f"secrecy_{canonical_encode(secret)}", "derivable"))
    return violations


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------

_ATOM_KINDS = {"text", "agent", "public_key", "nat"}


def _live_vars(spec: RoleSpec, tr: Transition) -> frozenset[str]:
    """Receive-pattern variables whose value can matter later: they occur in
    this transition's send/events or anywhere in another transition."""
    live: set[str] = set()
    assert tr.receive is not None
    received = pattern_vars(tr.receive)
    for other in spec.transitions:
        spots: list[Term] = []
        if other is tr:
            if other.send is not None:
                spots.append(other.send)
            spots.extend(ev.value for ev in other.events)
        else:
            if other.receive is not None:
                spots.append(other.receive)
            if other.send is not None:
                spots.append(other.send)
            spots.extend(ev.value for ev in other.events)
        for spot in spots:
            live |= (pattern_vars(spot) & received)
    return frozenset(live)


@functools.lru_cache(maxsize=None)
def _live_vars_cached(spec: RoleSpec, tr: Transition) -> frozenset[str]:
    return _live_vars(spec, tr)


def _is_atom(term: Term) -> bool:
    from .term import AEnc, Concat, SEnc
    return not isinstance(term, (Concat, AEnc, SEnc))


def _kind_ok(kind: Optional[str], value: Term) -> bool:
    """Typed-model discipline: a variable only takes values of its kind."""
    from .term import PubKey
    if kind == "text":
        return isinstance(value, (Nonce, Const))
    if kind == "agent":
        return isinstance(value, Agent)
    if kind == "public_key":
        return isinstance(value, PubKey)
    return True


def candidate_deliveries(inst: RoleInstance, tr: Transition,
                         closure: KnowledgeSet) -> list[Term]:
    """Deterministically ordered terms the intruder may deliver for ``tr``."""
    pattern = tr.receive
    assert pattern is not None and pattern != START
    env = inst.env
    ordered = sorted(closure.terms, key=canonical_encode)
    out: list[Term] = []
    seen: set[Term] = set()

    # replay: whole known terms the pattern accepts (with well-typed bindings)
    for t in ordered:
        env2 = unify(pattern, t, env, inst.keyring)
        if env2 is None or t in seen:
            continue
        if all(_kind_ok(inst.spec.var_kind(name), value)
               for name, value in env2.items() if name not in env):
            out.append(t)
            seen.add(t)

    # synthesis: fill free variables, then check derivability
    free = sorted(v for v in pattern_vars(pattern) if v not in env)
    if free:
        live = _live_vars_cached(inst.spec, tr)
        pools = []
        for v in free:
            kind = inst.spec.var_kind(v)
            pool = [t for t in ordered
                    if _kind_ok(kind, t) and (kind not in _ATOM_KINDS or _is_atom(t))]
            if v not in live:
                pool = pool[:1]
            pools.append(pool)
        for combo in itertools.product(*pools):
            assignment = dict(env)
            assignment.update(zip(free, combo))
            try:
                t = substitute(pattern, assignment)
            except Exception:
                continue
            if t in seen:
                continue
            if can_derive(closure, t):
                out.append(t)
                seen.add(t)
    else:
        try:
            t = substitute(pattern, env)
        except Exception:
            t = None
        if t is not None and t not in seen and can_derive(closure, t):
            out.append(t)
    return out


# ---------------------------------------------------------------------------
# State space
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class _State:
    instances: tuple[RoleInstance, ...]
    knowledge: KnowledgeSet  # always analyzed
    witnesses: tuple[tuple[tuple, int], ...]  # sorted counter items
    depth: int

    def key(self) -> tuple:
        return (
            tuple((i.spec.name, i.session, i.state, i.binding)
                  for i in self.instances),
            self.knowledge.terms,
            self.witnesses,
        )


def _witness_counter(items: tuple[tuple[tuple, int], ...]) -> Counter:
    return Counter(dict(items))


def _witness_items(counter: Counter) -> tuple[tuple[tuple, int], ...]:
    return tuple(sorted((k, v) for k, v in counter.items() if v > 0))


_closure_cache: dict[frozenset, KnowledgeSet] = {}


def _extend_knowledge(knowledge: KnowledgeSet, term: Term) -> KnowledgeSet:
    base = knowledge.terms | {term}
    hit = _closure_cache.get(base)
    if hit is None:
        hit = analyze(KnowledgeSet(base))
        _closure_cache[base] = hit
    return hit


@dataclass(slots=True)
class _PathNode:
    parent: Optional["_PathNode"]
    move: Optional[Move]
    delivered_to: Optional[str]
    outgoing: Optional[Term]
    events: tuple[AuthEvent, ...]


def _instance_name(inst: RoleInstance) -> str:
    return f"{inst.spec.name}#{inst.session}"


def _ground_auth_events(result: StepResult) -> tuple[AuthEvent, ...]:
    return tuple(AuthEvent(ev.kind, ev.actor, ev.peer, ev.protocol_id, ev.value)
                 for ev in result.events)


def _trace_from_path(node: _PathNode) -> Trace:
    chain: list[_PathNode] = []
    while node is not None:
        chain.append(node)
        node = node.parent
    chain.reverse()
    trace = Trace()
    for item in chain:
        if item.move is None:
            continue
        if item.move.delivered is not None:
            # every delivery comes out of the intruder-mediated pool
            trace.add(TraceEvent(kind="delivered", sender="i",
                                 recipient=item.delivered_to,
                                 term=item.move.delivered))
        for ev in item.events:
            trace.add(role_trace_event(ev))
        if item.outgoing is not None:
            trace.add(TraceEvent(kind="sent", sender=item.delivered_to,
                                 recipient="i",
                                 term=canonical_encode(item.outgoing)))
    return trace


class _Search:
    def __init__(self, lowered: LoweredModel, k0: KnowledgeSet, bounds: Bounds,
                 goals: tuple[Goal, ...], secrets: tuple[SecretSpec, ...],
                 injective: bool):
        self.bounds = bounds
        self.goal_ids = {g.protocol_id for g in goals}
        self.secrets = secrets
        self.injective = injective
        self.instances = lowered.instances
        self.k0 = analyze(k0)
        # a request naming a dishonest peer is vacuous: the intruder would
        # "witness" anything, so such claims are not checkable
        self.dishonest = set(bounds.agent_cast)
        self.states_explored = 0
        self.depth_reached = 0
        self.lock = threading.Lock()
        self.verdict: Optional[Attack] = None
        self.visited: set = set()

    # -- single move application -------------------------------------------

    def apply(self, state: _State, inst_idx: int, result: StepResult,
              delivered: Optional[Term], node: _PathNode) -> Optional[tuple[_State, _PathNode]]:
        """Advance one instance; returns the new state or records an attack
        (returns None either way when the state should not be expanded)."""
        witnesses = _witness_counter(state.witnesses)
        events = _ground_auth_events(result)
        move = Move(inst_idx, result.fired,
                    canonical_encode(delivered) if delivered is not None else None)
        new_node = _PathNode(node, move, _instance_name(state.instances[inst_idx]),
                             result.outgoing, events)
        for ev in events:
            key = (ev.protocol_id, ev.actor, ev.peer, canonical_encode(ev.value))
            if ev.kind == "witness":
                witnesses[key] += 1
            elif (ev.kind == "request" and ev.protocol_id in self.goal_ids
                  and ev.peer not in self.dishonest):
                want = (ev.protocol_id, ev.peer, ev.actor, canonical_encode(ev.value))
                if witnesses[want] > 0:
                    if self.injective:
                        witnesses[want] -= 1
                else:
                    self._report(Attack(ev.protocol_id,
                                        _trace_from_path(new_node),
                                        "authentication",
                                        _collect_moves(new_node)))
                    return None
        knowledge = state.knowledge
        if result.outgoing is not None:
            knowledge = _extend_knowledge(knowledge, result.outgoing)
            secrecy = check_secrecy(knowledge, self.secrets)
            if secrecy:
                self._report(Attack(secrecy[0].goal_id,
                                    _trace_from_path(new_node), "secrecy",
                                    _collect_moves(new_node)))
                return None
        new_instances = list(state.instances)
        new_instances[inst_idx] = result.instance
        new_state = _State(tuple(new_instances), knowledge,
                           _witness_items(witnesses), state.depth + 1)
        return new_state, new_node

    def _report(self, attack: Attack) -> None:
        # shortest counterexample wins; workers prune anything that cannot
        # beat it, so the final attack length matches single-threaded search
        with self.lock:
            if self.verdict is None or len(attack.moves) < len(self.verdict.moves):
                self.verdict = attack

    # -- frontier expansion ---------------------------------------------------

    def moves(self, state: _State) -> Iterable[tuple[int, StepResult, Optional[Term]]]:
        for idx, inst in enumerate(state.instances):
            for tr in inst.spec.transitions:
                if tr.from_state != inst.state:
                    continue
                if tr.receive is None:
                    result = step(inst, None)
                    if result is not None:
                        yield idx, result, None
                elif tr.receive == START:
                    result = step(inst, START)
                    if result is not None:
                        yield idx, result, START
                else:
                    for cand in candidate_deliveries(inst, tr, state.knowledge):
                        result = step(inst, cand)
                        if result is not None:
                            yield idx, result, cand

    def run(self, jobs: int = 1) -> Verdict:
        initial = _State(self.instances, self.k0, (), 0)
        root = _PathNode(None, None, None, None, ())
        secrecy = check_secrecy(self.k0, self.secrets)
        if secrecy:
            return Attack(secrecy[0].goal_id, Trace(), "secrecy")
        if jobs <= 1:
            self._worker(deque([(initial, root)]))
        else:
            self._parallel(initial, root, jobs)
        if self.verdict is not None:
            return self.verdict
        return Safe(self.states_explored, self.depth_reached)

    def _prune(self, depth: int) -> bool:
        verdict = self.verdict
        return verdict is not None and depth >= len(verdict.moves) - 1

    def _worker(self, frontier: deque) -> None:
        visited = self.visited
        while frontier:
            state, node = frontier.popleft()
            if self._prune(state.depth):
                continue
            with self.lock:
                self.states_explored += 1
                self.depth_reached = max(self.depth_reached, state.depth)
            if state.depth >= self.bounds.depth:
                continue
            for idx, result, delivered in self.moves(state):
                applied = self.apply(state, idx, result, delivered, node)
                if applied is None:
                    continue
                new_state, new_node = applied
                key = new_state.key()
                with self.lock:
                    if key in visited:
                        continue
                    visited.add(key)
                frontier.append((new_state, new_node))

    def _parallel(self, initial: _State, root: _PathNode, jobs: int) -> None:
        """Split the first frontier layer across workers sharing the visited
        set and the first-attack-wins latch."""
        layer: list[tuple[_State, _PathNode]] = []
        with self.lock:
            self.states_explored += 1
        for idx, result, delivered in self.moves(initial):
            applied = self.apply(initial, idx, result, delivered, root)
            if applied is None:
                continue
            new_state, new_node = applied
            key = new_state.key()
            if key in self.visited:
                continue
            self.visited.add(key)
            layer.append((new_state, new_node))
        chunks = [deque(layer[i::jobs]) for i in range(jobs)]
        threads = [threading.Thread(target=self._worker, args=(chunk,))
                   for chunk in chunks if chunk]
        for t in threads:
            t.start()
        for t in threads:
            t.join()


def _collect_moves(node: _PathNode) -> tuple[Move, ...]:
    moves = []
    while node is not None:
        if node.move is not None:
            moves.append(node.move)
        node = node.parent
    return tuple(reversed(moves))


def explore(model: SpecModel, bounds: Bounds,
            intruder_k0: Optional[KnowledgeSet] = None,
            secrets: tuple[SecretSpec, ...] = (),
            injective: bool = True, jobs: int = 1,
            goal_filter: Optional[Iterable[str]] = None) -> Verdict:
    """Exhaustive bounded interleaving search; Safe iff no reachable state
    violates a goal within the bounds."""
    if not model.goals:
        raise ValueError("model declares no goals")
    lowered = lower(model, sessions=bounds.sessions)
    k0 = intruder_k0 if intruder_k0 is not None else lowered.intruder_knowledge
    k0 = k0.union(SCRATCH_ATOMS)
    goals = model.goals
    if goal_filter is not None:
        wanted = set(goal_filter)
        goals = tuple(g for g in goals if g.protocol_id in wanted)
    search = _Search(lowered, k0, bounds, goals, tuple(secrets), injective)
    return search.run(jobs=jobs)


def replay_attack(model: SpecModel, bounds: Bounds, attack: Attack,
                  intruder_k0: Optional[KnowledgeSet] = None) -> bool:
    """Re-execute an attack's moves step by step, checking that every
    delivered term was derivable when injected, every transition fires, and
    the final move reproduces the reported violation."""
    from .term import parse_term

    lowered = lower(model, sessions=bounds.sessions)
    k0 = intruder_k0 if intruder_k0 is not None else lowered.intruder_knowledge
    knowledge = analyze(k0.union(SCRATCH_ATOMS))
    instances = list(lowered.instances)
    witnesses: Counter = Counter()
    violated = False
    for move in attack.moves:
        inst = instances[move.inst]
        delivered: Optional[Term] = None
        if move.delivered is not None:
            delivered = parse_term(move.delivered)
            if delivered != START and not can_derive(knowledge, delivered):
                return False
        result = step(inst, delivered)
        if result is None or result.fired != move.label:
            return False
        instances[move.inst] = result.instance
        for ev in result.events:
            key = (ev.protocol_id, ev.actor, ev.peer, canonical_encode(ev.value))
            if ev.kind == "witness":
                witnesses[key] += 1
            elif ev.kind == "request" and ev.protocol_id == attack.goal_id:
                want = (ev.protocol_id, ev.peer, ev.actor,
                        canonical_encode(ev.value))
                if witnesses[want] > 0:
                    witnesses[want] -= 1
                else:
                    violated = True
        if result.outgoing is not None:
            knowledge = analyze(knowledge.union((result.outgoing,)))
    if attack.kind == "secrecy":
        return bool(check_secrecy(knowledge, _goal_secret(attack.goal_id)))
    return violated


def _goal_secret(goal_id: str) -> tuple[SecretSpec, ...]:
    from .term import TermSyntaxError, parse_term

    label = goal_id.removeprefix("secrecy_")
    try:
        return (parse_term(label),)
    except TermSyntaxError:
        return (label,)  # an atom-label wildcard, not a canonical term
