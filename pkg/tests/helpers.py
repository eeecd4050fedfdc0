"""Shared test utilities: independent oracles and reference drivers."""

from __future__ import annotations

import random
from pathlib import Path

from oatproto.model import RoleSpec, Transition, instantiate, step
from oatproto.term import (
    AEnc, Agent, Concat, Const, KnowledgeSet, Nonce, Password, PrivKey,
    PubKey, SEnc, Term, Var, analyze, canonical_encode, cat,
)

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"

_IDS = ["a", "b", "c", "cks", "na", "nb", "x1", "k9", "tag", "zz_0"]


def random_term(rng: random.Random, depth: int) -> Term:
    """Arbitrary well-formed ground term, independent of the parser."""
    if depth <= 0 or rng.random() < 0.4:
        kind = rng.randrange(6)
        name = rng.choice(_IDS)
        if kind == 0:
            return Agent(name)
        if kind == 1:
            return Const(name)
        if kind == 2:
            return Nonce(name, rng.randrange(100))
        if kind == 3:
            return PubKey(name)
        if kind == 4:
            return PrivKey(name)
        return Password(name)
    kind = rng.randrange(3)
    if kind == 0:
        return Concat(random_term(rng, depth - 1), random_term(rng, depth - 1))
    if kind == 1:
        return AEnc(random_term(rng, depth - 1), PubKey(rng.choice(_IDS)))
    key = random_term(rng, depth - 1)
    while isinstance(key, (PubKey, PrivKey)):
        key = random_term(rng, depth - 1)
    return SEnc(random_term(rng, depth - 1), key)


def term_size(term: Term) -> int:
    if isinstance(term, Concat):
        return 1 + term_size(term.left) + term_size(term.right)
    if isinstance(term, (AEnc, SEnc)):
        return 1 + term_size(term.body) + term_size(term.key)
    return 1


def _subterms(term: Term) -> set[Term]:
    out = {term}
    if isinstance(term, Concat):
        out |= _subterms(term.left) | _subterms(term.right)
    elif isinstance(term, (AEnc, SEnc)):
        out |= _subterms(term.body) | _subterms(term.key)
    return out


def brute_force_derivable(knowledge: KnowledgeSet, goal: Term) -> bool:
    """Forward saturation over the finite universe of goal subterms plus the
    analysis closure.  Composition only ever builds bigger terms, so every
    intermediate of a goal derivation is a goal subterm or already known;
    iterating membership over that universe is a complete blind search."""
    closure = set(analyze(knowledge).terms)
    universe = _subterms(goal) | closure
    derivable = set(closure)
    changed = True
    while changed:
        changed = False
        for t in universe:
            if t in derivable:
                continue
            if isinstance(t, Concat):
                ok = t.left in derivable and t.right in derivable
            elif isinstance(t, (AEnc, SEnc)):
                ok = t.body in derivable and t.key in derivable
            else:
                ok = False
            if ok:
                derivable.add(t)
                changed = True
    return goal in derivable


# ---------------------------------------------------------------------------
# Prose-faithful transition-system model of the six steps, for the shape
# equivalence check against the hand-written roles.
# ---------------------------------------------------------------------------

def _v(name: str) -> Var:
    return Var(name)


def prose_role_specs() -> tuple[RoleSpec, RoleSpec, RoleSpec]:
    """Seller, server and buyer as guarded transition systems whose wire
    messages mirror the six prose steps structurally."""
    start = Const("start")
    usera = RoleSpec(
        name="usera_ref",
        params=(("UA", "agent"), ("UB", "agent"), ("Pwa", "message"),
                ("Kcks", "public_key")),
        played_by="UA",
        locals_=(("Na", "text"), ("Nb", "text"), ("T", "message"),
                 ("Otc", "message")),
        initial_state=0,
        transitions=(
            Transition("1", 0, receive=_v("Nb"), fresh=("Na",), to_state=1,
                       send=AEnc(cat(_v("UA"), _v("Pwa"), _v("Na"),
                                     AEnc(cat(_v("UA"), _v("UB"), _v("Nb")),
                                          _v("Kcks"))),
                                 _v("Kcks"))),
            Transition("2", 1, receive=_v("T"), fresh=(), to_state=2,
                       send=_v("T")),
            Transition("3", 2, receive=SEnc(_v("Otc"), _v("Na")), fresh=(),
                       to_state=3, send=AEnc(_v("Otc"), _v("Kcks"))),
        ))
    ck = RoleSpec(
        name="ck_ref",
        params=(("UA", "agent"), ("UB", "agent"), ("Pwa", "message"),
                ("Kcks", "public_key")),
        played_by="UA",
        locals_=(("Na", "text"), ("Nb", "text"), ("X", "message"),
                 ("Otc", "message"), ("Tempid", "message")),
        initial_state=0,
        transitions=(
            Transition("1", 0,
                       receive=AEnc(cat(_v("UA"), _v("Pwa"), _v("Na"),
                                        AEnc(cat(_v("UA"), _v("UB"), _v("Nb")),
                                             _v("Kcks"))),
                                    _v("Kcks")),
                       fresh=("X",), to_state=1,
                       send=AEnc(cat(_v("X"), _v("UA"), _v("UB"), _v("Na"),
                                     _v("Nb")), _v("Kcks"))),
            Transition("2", 1,
                       receive=AEnc(cat(_v("UB"),
                                        AEnc(cat(_v("X"), _v("UA"), _v("UB"),
                                                 _v("Na"), _v("Nb")),
                                             _v("Kcks")),
                                        _v("Nb")),
                                    _v("Kcks")),
                       fresh=("Otc",), to_state=2,
                       send=SEnc(_v("Otc"), _v("Na"))),
            Transition("3", 2, receive=AEnc(_v("Otc"), _v("Kcks")),
                       fresh=("Tempid",), to_state=3,
                       send=SEnc(_v("Tempid"), _v("Nb"))),
        ))
    userb = RoleSpec(
        name="userb_ref",
        params=(("UB", "agent"), ("Kcks", "public_key")),
        played_by="UB",
        locals_=(("Nb", "text"), ("T", "message"), ("Tempid", "message")),
        initial_state=0,
        transitions=(
            Transition("1", 0, receive=start, fresh=("Nb",), to_state=1,
                       send=_v("Nb")),
            Transition("2", 1, receive=_v("T"), fresh=(), to_state=2,
                       send=AEnc(cat(_v("UB"), _v("T"), _v("Nb")), _v("Kcks"))),
            Transition("3", 2, receive=SEnc(_v("Tempid"), _v("Nb")), fresh=(),
                       to_state=3, send=None),
        ))
    return usera, ck, userb


def run_prose_model(session: int = 1) -> list[Term]:
    """Honest run of the prose transition model; returns the six wire terms."""
    usera_spec, ck_spec, userb_spec = prose_role_specs()
    kcks = PubKey("cks")
    binding_a = {"UA": Agent("a"), "UB": Agent("b"), "Pwa": Password("a"),
                 "Kcks": kcks}
    usera = instantiate(usera_spec, binding_a, session)
    ck = instantiate(ck_spec, dict(binding_a), session)
    userb = instantiate(userb_spec, {"UB": Agent("b"), "Kcks": kcks}, session)

    wire: list[Term] = []
    r = step(userb, Const("start"))          # buyer keys in the nonce
    userb, nb = r.instance, r.outgoing       # local hand-over, not wire
    r = step(usera, nb)
    usera, m1 = r.instance, r.outgoing
    wire.append(m1)
    r = step(ck, m1)
    ck, m2 = r.instance, r.outgoing
    wire.append(m2)
    r = step(usera, m2)                      # ticket lands in the device
    usera, ticket = r.instance, r.outgoing   # local hand-over
    r = step(userb, ticket)
    userb, m3 = r.instance, r.outgoing
    wire.append(m3)
    r = step(ck, m3)
    ck, m4 = r.instance, r.outgoing
    wire.append(m4)
    r = step(usera, m4)
    usera, m5 = r.instance, r.outgoing
    wire.append(m5)
    r = step(ck, m5)
    ck, m6 = r.instance, r.outgoing
    wire.append(m6)
    assert step(userb, m6).instance.state == 3
    return wire


def shape_of(term: Term, mapping: dict[Term, str]) -> str:
    """Structure with fresh atoms (nonces, constants) numbered by first
    occurrence; identities and keys stay literal."""
    if isinstance(term, (Nonce, Const)):
        if term not in mapping:
            mapping[term] = f"p{len(mapping)}"
        return mapping[term]
    if isinstance(term, Concat):
        return f"cat({shape_of(term.left, mapping)},{shape_of(term.right, mapping)})"
    if isinstance(term, AEnc):
        return f"aenc({shape_of(term.body, mapping)},{shape_of(term.key, mapping)})"
    if isinstance(term, SEnc):
        return f"senc({shape_of(term.body, mapping)},{shape_of(term.key, mapping)})"
    return canonical_encode(term)


def trace_shapes(terms: list[Term]) -> list[str]:
    mapping: dict[Term, str] = {}
    return [shape_of(t, mapping) for t in terms]
