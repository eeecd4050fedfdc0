"""Symbolic message terms and Dolev-Yao deduction.

The term algebra covers everything the ownership-transfer protocol puts on
the wire: agent names, protocol constants, session-tagged nonces, public and
private keys, passwords, pairing and perfect symbolic encryption.  Encryption
is constructor/destructor only: a ciphertext reveals nothing without the
matching key, and there are no algebraic identities beyond pairing.

Deduction is the standard decidable two-phase check.  ``analyze`` closes a
knowledge set under decomposition (splitting pairs, decrypting with held
keys); ``can_derive`` then asks whether a goal term is reachable from that
closure by composition alone.  ``derivation`` produces the explicit proof
tree behind a positive ``can_derive`` answer.

All values here are immutable; structural equality is the only equality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional


class TermError(ValueError):
    """A structurally invalid term was about to be built."""


class Term:
    """Base class of the message algebra. Subclasses are frozen dataclasses."""

    __slots__ = ()
    is_variable = False


@dataclass(frozen=True, slots=True)
class Agent(Term):
    name: str


@dataclass(frozen=True, slots=True)
class Const(Term):
    """Protocol constant: tags, opaque payloads, issued identifiers."""

    name: str


@dataclass(frozen=True, slots=True)
class Nonce(Term):
    """Fresh value tagged with the session that produced it."""

    label: str
    session: int


@dataclass(frozen=True, slots=True)
class PubKey(Term):
    owner: str


@dataclass(frozen=True, slots=True)
class PrivKey(Term):
    owner: str


@dataclass(frozen=True, slots=True)
class Password(Term):
    owner: str


@dataclass(frozen=True, slots=True)
class Var(Term):
    """Pattern variable. Never appears in a ground (wire-level) term.

    ``primed`` records surface syntax only (X vs X'); matching and
    substitution key on the name alone.
    """

    name: str
    primed: bool = False
    is_variable = True


@dataclass(frozen=True, slots=True)
class Concat(Term):
    """Pairing. Canonical form is right-associated; build chains with cat()."""

    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class AEnc(Term):
    """Asymmetric encryption under a public key."""

    body: Term
    key: Term

    def __post_init__(self) -> None:
        if not (isinstance(self.key, PubKey) or self.key.is_variable):
            raise TermError("aenc key must be a public key")


@dataclass(frozen=True, slots=True)
class SEnc(Term):
    """Symmetric encryption. Nonces double as symmetric keys."""

    body: Term
    key: Term

    def __post_init__(self) -> None:
        if isinstance(self.key, (PubKey, PrivKey)):
            raise TermError("senc key must not be asymmetric key material")


def cat(*parts: Term) -> Term:
    """Right-associated concatenation of two or more parts."""
    if not parts:
        raise TermError("cat needs at least one part")
    result = parts[-1]
    for part in reversed(parts[:-1]):
        result = Concat(part, result)
    return result


def uncat(term: Term) -> list[Term]:
    """Flatten a right-associated concatenation chain."""
    out = []
    while isinstance(term, Concat):
        out.append(term.left)
        term = term.right
    out.append(term)
    return out


def is_ground(term: Term) -> bool:
    if term.is_variable:
        return False
    if isinstance(term, Concat):
        return is_ground(term.left) and is_ground(term.right)
    if isinstance(term, (AEnc, SEnc)):
        return is_ground(term.body) and is_ground(term.key)
    return True


def subterms(term: Term) -> Iterator[Term]:
    """All subterms, the term itself included."""
    yield term
    if isinstance(term, Concat):
        yield from subterms(term.left)
        yield from subterms(term.right)
    elif isinstance(term, (AEnc, SEnc)):
        yield from subterms(term.body)
        yield from subterms(term.key)


# ---------------------------------------------------------------------------
# Canonical text encoding
#
# term := agent(ID) | const(ID) | nonce(ID,NAT) | pk(ID) | sk(ID) | pw(ID)
#       | cat(term,term) | aenc(term,term) | senc(term,term)
# ID matches [a-z][a-z0-9_]*, NAT is a decimal natural; no whitespace.
# ---------------------------------------------------------------------------

import re

_ID_RE = re.compile(r"[a-z][a-z0-9_]*")


def canonical_encode(term: Term) -> str:
    """Deterministic, injective text form of a ground term."""
    if isinstance(term, Agent):
        return f"agent({term.name})"
    if isinstance(term, Const):
        return f"const({term.name})"
    if isinstance(term, Nonce):
        return f"nonce({term.label},{term.session})"
    if isinstance(term, PubKey):
        return f"pk({term.owner})"
    if isinstance(term, PrivKey):
        return f"sk({term.owner})"
    if isinstance(term, Password):
        return f"pw({term.owner})"
    if isinstance(term, Concat):
        return f"cat({canonical_encode(term.left)},{canonical_encode(term.right)})"
    if isinstance(term, AEnc):
        return f"aenc({canonical_encode(term.body)},{canonical_encode(term.key)})"
    if isinstance(term, SEnc):
        return f"senc({canonical_encode(term.body)},{canonical_encode(term.key)})"
    if term.is_variable:
        raise TermError(f"cannot encode non-ground term containing variable {term!r}")
    raise TermError(f"unknown term variant {term!r}")


class TermSyntaxError(ValueError):
    """Malformed canonical text. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class _Parser:
    _HEADS = ("agent", "const", "nonce", "pk", "sk", "pw", "cat", "aenc", "senc")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str) -> TermSyntaxError:
        return TermSyntaxError(message, self.pos)

    def expect(self, token: str) -> None:
        if not self.text.startswith(token, self.pos):
            raise self.fail(f"expected {token!r}")
        self.pos += len(token)

    def ident(self) -> str:
        m = _ID_RE.match(self.text, self.pos)
        if not m:
            raise self.fail("expected identifier")
        self.pos = m.end()
        return m.group()

    def nat(self) -> int:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            raise self.fail("expected natural number")
        return int(self.text[start:self.pos])

    def term(self) -> Term:
        head_start = self.pos
        for head in self._HEADS:
            if self.text.startswith(head + "(", self.pos):
                self.pos += len(head) + 1
                try:
                    return self._body(head)
                except TermError as exc:
                    raise TermSyntaxError(str(exc), head_start) from exc
        raise self.fail("expected term constructor")

    def _body(self, head: str) -> Term:
        if head in ("agent", "const", "pk", "sk", "pw"):
            name = self.ident()
            self.expect(")")
            one = {"agent": Agent, "const": Const, "pk": PubKey,
                   "sk": PrivKey, "pw": Password}[head]
            return one(name)
        if head == "nonce":
            label = self.ident()
            self.expect(",")
            session = self.nat()
            self.expect(")")
            return Nonce(label, session)
        first = self.term()
        self.expect(",")
        second = self.term()
        self.expect(")")
        two = {"cat": Concat, "aenc": AEnc, "senc": SEnc}[head]
        return two(first, second)


def parse_term(text: str) -> Term:
    """Inverse of canonical_encode. Raises TermSyntaxError with a byte offset."""
    parser = _Parser(text)
    term = parser.term()
    if parser.pos != len(text):
        raise parser.fail("trailing input")
    return term


# ---------------------------------------------------------------------------
# Dolev-Yao deduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class KnowledgeSet:
    """A finite set of terms, optionally closed under analysis."""

    terms: frozenset[Term]
    analyzed: bool = False

    @classmethod
    def of(cls, *terms: Term) -> "KnowledgeSet":
        return cls(frozenset(terms))

    @classmethod
    def from_iter(cls, terms: Iterable[Term]) -> "KnowledgeSet":
        return cls(frozenset(terms))

    def __contains__(self, term: Term) -> bool:
        return term in self.terms

    def __iter__(self) -> Iterator[Term]:
        return iter(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def union(self, terms: Iterable[Term]) -> "KnowledgeSet":
        return KnowledgeSet(self.terms | frozenset(terms))


def analyze(knowledge: KnowledgeSet) -> KnowledgeSet:
    """Least decomposition closure of a knowledge set.

    Pairs split into both parts; aenc bodies open when the matching private
    key is in the set; senc bodies open when the key itself is in the set.
    Idempotent and monotone in the input.
    """
    if knowledge.analyzed:
        return knowledge
    terms = set(knowledge.terms)
    changed = True
    while changed:
        changed = False
        for t in list(terms):
            if isinstance(t, Concat):
                new = (t.left, t.right)
            elif isinstance(t, AEnc) and isinstance(t.key, PubKey) \
                    and PrivKey(t.key.owner) in terms:
                new = (t.body,)
            elif isinstance(t, SEnc) and t.key in terms:
                new = (t.body,)
            else:
                continue
            for n in new:
                if n not in terms:
                    terms.add(n)
                    changed = True
    return KnowledgeSet(frozenset(terms), analyzed=True)


@dataclass(frozen=True, slots=True)
class Derivation:
    """Explicit proof that a term is derivable: leaf rule 'known', or a
    composition rule over child derivations."""

    term: Term
    rule: str  # known | pair | aenc | senc
    children: tuple["Derivation", ...] = ()


def derivation(knowledge: KnowledgeSet, goal: Term) -> Optional[Derivation]:
    """Derivation tree for goal, or None. Directed by the goal's structure,
    so it always terminates."""
    closure = analyze(knowledge).terms

    def synth(g: Term) -> Optional[Derivation]:
        if g in closure:
            return Derivation(g, "known")
        if isinstance(g, Concat):
            left, right = synth(g.left), synth(g.right)
            if left and right:
                return Derivation(g, "pair", (left, right))
            return None
        if isinstance(g, (AEnc, SEnc)):
            body, key = synth(g.body), synth(g.key)
            if body and key:
                rule = "aenc" if isinstance(g, AEnc) else "senc"
                return Derivation(g, rule, (body, key))
            return None
        return None

    return synth(goal)


def can_derive(knowledge: KnowledgeSet, goal: Term) -> bool:
    """True iff goal is synthesizable from the analysis closure of knowledge."""
    return derivation(knowledge, goal) is not None
