"""Guarded state-transition model of protocol roles.

A role is a list of numbered transitions between integer states.  Each
transition may consume a message matching a receive pattern, bind fresh
nonces, emit a message built from its bindings, and record witness/request
authentication events.  Patterns are terms with variables; unification is
perfect-crypto: descending into an encrypted pattern requires the instance
to know the key (the bound symmetric key, or the private counterpart of the
public key in its keyring).

Instances are immutable values: ``step`` returns a new instance, so a single
instance can be advanced along many exploration branches safely.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .term import (
    AEnc, Concat, Const, Nonce, PrivKey, PubKey, SEnc, Term, TermError,
    is_ground,
)

START = Const("start")


class ModelError(ValueError):
    """Ill-formed role specification or instantiation."""


class AmbiguousMatch(RuntimeError):
    """Two transitions fired on the same input: a model defect."""


@dataclass(frozen=True, slots=True)
class Event:
    """Authentication fact attached to a transition.

    ``guard`` marks events written on the condition side of the transition;
    they are recorded at fire time exactly like action-side events.
    """

    kind: str  # "witness" | "request"
    actor: str
    peer: str
    protocol_id: str
    value: Term
    guard: bool = False


@dataclass(frozen=True, slots=True)
class Transition:
    label: str
    from_state: int
    receive: Optional[Term]
    fresh: tuple[str, ...]
    to_state: int
    send: Optional[Term]
    events: tuple[Event, ...] = ()
    implicit_fresh: tuple[str, ...] = ()  # unbound send vars, bound fresh at fire


@dataclass(frozen=True, slots=True)
class RoleSpec:
    """Static description of one protocol role."""

    name: str
    params: tuple[tuple[str, str], ...]  # (name, kind)
    played_by: str
    locals_: tuple[tuple[str, str], ...]
    initial_state: int
    transitions: tuple[Transition, ...]
    state_var: str = "State"

    def states(self) -> set[int]:
        out = {self.initial_state}
        for tr in self.transitions:
            out.add(tr.from_state)
            out.add(tr.to_state)
        return out

    def var_kind(self, name: str) -> Optional[str]:
        for n, kind in self.params + self.locals_:
            if n == name:
                return kind
        return None


def pattern_vars(pattern: Term) -> set[str]:
    if pattern.is_variable:
        return {pattern.name}  # type: ignore[attr-defined]
    if isinstance(pattern, Concat):
        return pattern_vars(pattern.left) | pattern_vars(pattern.right)
    if isinstance(pattern, (AEnc, SEnc)):
        return pattern_vars(pattern.body) | pattern_vars(pattern.key)
    return set()


def substitute(pattern: Term, env: dict[str, Term]) -> Term:
    """Replace every variable by its binding. Unbound variables are an error."""
    if pattern.is_variable:
        name = pattern.name  # type: ignore[attr-defined]
        if name not in env:
            raise ModelError(f"unbound variable {name}")
        return env[name]
    if isinstance(pattern, Concat):
        return Concat(substitute(pattern.left, env), substitute(pattern.right, env))
    if isinstance(pattern, AEnc):
        return AEnc(substitute(pattern.body, env), substitute(pattern.key, env))
    if isinstance(pattern, SEnc):
        return SEnc(substitute(pattern.body, env), substitute(pattern.key, env))
    return pattern


def _ground_key(pattern: Term, env: dict[str, Term]) -> Optional[Term]:
    try:
        key = substitute(pattern, env)
    except ModelError:
        return None
    return key if is_ground(key) else None


def unify(pattern: Term, term: Term, env: dict[str, Term],
          keyring: frozenset[Term]) -> Optional[dict[str, Term]]:
    """Match a receive pattern against a ground term.

    Bound variables must match structurally; unbound ones bind.  Encrypted
    subpatterns only open when the key is determined by the current bindings
    and, for asymmetric ciphertexts, the private key is in the keyring.
    Returns the extended environment, or None.
    """
    if pattern.is_variable:
        name = pattern.name  # type: ignore[attr-defined]
        if name in env:
            return env if env[name] == term else None
        out = dict(env)
        out[name] = term
        return out
    if isinstance(pattern, Concat):
        if not isinstance(term, Concat):
            return None
        env2 = unify(pattern.left, term.left, env, keyring)
        if env2 is None:
            return None
        return unify(pattern.right, term.right, env2, keyring)
    if isinstance(pattern, AEnc):
        if not isinstance(term, AEnc):
            return None
        key = _ground_key(pattern.key, env)
        if not isinstance(key, PubKey) or PrivKey(key.owner) not in keyring:
            return None
        if key != term.key:
            return None
        return unify(pattern.body, term.body, env, keyring)
    if isinstance(pattern, SEnc):
        if not isinstance(term, SEnc):
            return None
        key = _ground_key(pattern.key, env)
        if key is None or key != term.key:
            return None
        return unify(pattern.body, term.body, env, keyring)
    return env if pattern == term else None


@dataclass(frozen=True, slots=True)
class RoleInstance:
    """One role bound to concrete parameters within one session."""

    spec: RoleSpec
    binding: tuple[tuple[str, Term], ...]  # sorted, hashable
    state: int
    session: int
    keyring: frozenset[Term]

    @property
    def env(self) -> dict[str, Term]:
        return dict(self.binding)

    def with_env(self, env: dict[str, Term], state: int) -> "RoleInstance":
        return replace(self, binding=tuple(sorted(env.items(),
                                                  key=lambda kv: kv[0])),
                       state=state)


@dataclass(frozen=True, slots=True)
class StepResult:
    instance: RoleInstance
    fired: str
    outgoing: Optional[Term]
    events: tuple[Event, ...]


def _needed_private_keys(spec: RoleSpec, binding: dict[str, Term]) -> frozenset[Term]:
    """Private keys this role must hold to match its own receive patterns.

    Mirrors the usual tool semantics where honest roles match their declared
    ciphertext patterns structurally: decryption ability is granted exactly
    where a pattern demands it.
    """
    needed: set[Term] = set()

    def scan(pattern: Term) -> None:
        if isinstance(pattern, AEnc):
            key = pattern.key
            if key.is_variable and key.name in binding:  # type: ignore[attr-defined]
                key = binding[key.name]  # type: ignore[attr-defined]
            if isinstance(key, PubKey):
                needed.add(PrivKey(key.owner))
            scan(pattern.body)
        elif isinstance(pattern, SEnc):
            scan(pattern.body)
        elif isinstance(pattern, Concat):
            scan(pattern.left)
            scan(pattern.right)

    for tr in spec.transitions:
        if tr.receive is not None:
            scan(tr.receive)
    return frozenset(needed)


def instantiate(spec: RoleSpec, binding: dict[str, Term], session: int) -> RoleInstance:
    """Bind a role's parameters and place it in its initial state.

    Fresh nonces created later by this instance carry ``session``, so two
    instantiations with distinct session ids never collide on nonce values.
    """
    for name, _kind in spec.params:
        if name not in binding:
            raise ModelError(f"unbound parameter {name} of role {spec.name}")
    return RoleInstance(
        spec=spec,
        binding=tuple(sorted(binding.items(), key=lambda kv: kv[0])),
        state=spec.initial_state,
        session=session,
        keyring=_needed_private_keys(spec, binding),
    )


def fresh_nonce(name: str, session: int) -> Nonce:
    return Nonce(name.lower(), session)


def step(inst: RoleInstance, incoming: Optional[Term]) -> Optional[StepResult]:
    """Fire the unique enabled transition matching ``incoming``.

    Returns None when nothing matches (the message is absorbed, not an
    error).  Raises AmbiguousMatch when the model is nondeterministic.
    """
    fired: list[tuple[Transition, dict[str, Term]]] = []
    for tr in inst.spec.transitions:
        if tr.from_state != inst.state:
            continue
        if tr.receive is None:
            if incoming is None:
                fired.append((tr, inst.env))
            continue
        if incoming is None:
            continue
        env = unify(tr.receive, incoming, inst.env, inst.keyring)
        if env is not None:
            fired.append((tr, env))
    if not fired:
        return None
    if len(fired) > 1:
        labels = ", ".join(tr.label for tr, _ in fired)
        raise AmbiguousMatch(
            f"role {inst.spec.name} state {inst.state}: transitions {labels} all fire")

    tr, env = fired[0]
    for name in tr.fresh + tr.implicit_fresh:
        env = dict(env)
        env[name] = fresh_nonce(name, inst.session)

    outgoing = None
    if tr.send is not None:
        try:
            outgoing = substitute(tr.send, env)
        except TermError:
            # the bindings cannot produce a well-formed term (e.g. asymmetric
            # key material in a symmetric key slot); the transition cannot fire
            return None
        if not is_ground(outgoing):
            raise ModelError(
                f"role {inst.spec.name} transition {tr.label} emits a non-ground term")

    def agent_name(var: str) -> str:
        value = env.get(var)
        if value is None:
            return var
        return getattr(value, "name", str(value))

    events = tuple(
        Event(ev.kind, agent_name(ev.actor), agent_name(ev.peer),
              ev.protocol_id, substitute(ev.value, env), ev.guard)
        for ev in tr.events
    )
    for ev in events:
        if not is_ground(ev.value):
            raise ModelError(
                f"role {inst.spec.name} transition {tr.label}: event value not ground")

    return StepResult(
        instance=inst.with_env(env, tr.to_state),
        fired=tr.label,
        outgoing=outgoing,
        events=events,
    )
