"""Front-end for the role-based protocol description language subset.

Accepts the fragment used by the ownership-transfer model: basic roles with
typed parameters, ``played_by``, locals, a single numbered state variable,
transitions built from ``/\\``-conjoined facts around ``=|>``, ``new()``
freshness, SND/RCV, witness/request events, session and environment
composition, ``const`` declarations, ``intruder_knowledge`` and a goal block
of ``authentication_on`` lines.

Parsing yields a :class:`SpecModel`; :func:`lower` turns it into runnable
role instances plus the intruder's initial knowledge.  A pretty-printer
re-emits a model in normalized layout such that parsing the output gives an
identical model.

Binding discipline: a variable first used inside a receive pattern binds to
the matched subterm, primed or not.  A variable first used inside a send
pattern has no value to take, so it is implicitly bound to a fresh value
when the transition fires; this mirrors how such underspecified sends behave
in practice (the emitter picks the value, and later occurrences must match).

Diagnostics (warnings, not errors):
  * prime_rebind - a primed occurrence whose variable is not bound by the
    same transition; it silently refers to the previously bound value.
  * shared_channel - a session wires the same channel ends to two roles.

Key constants lower to owned key pairs by naming convention: ``ki`` is the
intruder's own key (owner ``i``), ``ks`` names the central key server's key
(owner ``cks``), and any other ``k<x>`` is owned by ``<x>``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .model import Event, RoleSpec, Transition, pattern_vars
from .term import (
    AEnc, Agent, Concat, Const, PrivKey, PubKey, SEnc, Term, Var, cat, uncat,
)
from .term import KnowledgeSet
from . import model as _model

INTRUDER = "i"
_KEY_OWNER_ALIASES = {"ki": INTRUDER, "ks": "cks"}


class HlpslError(ValueError):
    """Syntax or semantic error, formatted file:line:col: error: message."""

    def __init__(self, filename: str, line: int, col: int, message: str):
        super().__init__(f"{filename}:{line}:{col}: error: {message}")
        self.line = line
        self.col = col
        self.detail = message


@dataclass(frozen=True, slots=True)
class Diagnostic:
    line: int
    col: int
    severity: str
    kind: str
    message: str

    def format(self, filename: str = "<hlpsl>") -> str:
        return f"{filename}:{self.line}:{self.col}: {self.severity}: {self.message}"


@dataclass(frozen=True, slots=True)
class Goal:
    protocol_id: str
    kind: str = "authentication_on"


@dataclass(frozen=True, slots=True)
class ConstDecl:
    names: tuple[str, ...]
    kind: str


@dataclass(frozen=True, slots=True)
class SessionRole:
    name: str
    params: tuple[tuple[str, str], ...]
    channel_locals: tuple[str, ...]
    composition: tuple[tuple[str, tuple[str, ...]], ...]


@dataclass(frozen=True, slots=True)
class Environment:
    consts: tuple[ConstDecl, ...]
    intruder_knowledge: tuple[str, ...]
    composition: tuple[tuple[str, tuple[str, ...]], ...]


@dataclass(frozen=True, slots=True)
class SpecModel:
    basic_roles: tuple[RoleSpec, ...]
    session_roles: tuple[SessionRole, ...]
    environment: Environment
    goals: tuple[Goal, ...]
    entry: str = "environment"
    diagnostics: tuple[Diagnostic, ...] = field(default=(), compare=False)

    def role(self, name: str) -> RoleSpec:
        for r in self.basic_roles:
            if r.name == name:
                return r
        raise KeyError(name)

    def session_role(self, name: str) -> Optional[SessionRole]:
        for r in self.session_roles:
            if r.name == name:
                return r
        return None

    def const_kind(self, name: str) -> Optional[str]:
        for decl in self.environment.consts:
            if name in decl.names:
                return decl.kind
        return None


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class _Token:
    kind: str  # "ident" | "number" | punctuation literal | "eof"
    text: str
    primed: bool
    line: int
    col: int


_PUNCT = ("=|>", ":=", "/\\", "(", ")", "{", "}", ",", ".", "=", ":", "_")


def _lex(source: str, filename: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col, i = 1, 1, 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "%":  # comment to end of line
            while i < n and source[i] != "\n":
                i += 1
            continue
        if ch == "-" and source.startswith("----", i):  # separator trivia
            while i < n and source[i] == "-":
                i += 1
                col += 1
            continue
        if ch.isalpha():
            start = i
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            primed = i < n and source[i] == "'"
            if primed:
                i += 1
            text = source[start:i - (1 if primed else 0)]
            tokens.append(_Token("ident", text, primed, line, col))
            col += i - start
            continue
        if ch.isdigit():
            start = i
            while i < n and source[i].isdigit():
                i += 1
            tokens.append(_Token("number", source[start:i], False, line, col))
            col += i - start
            continue
        for punct in _PUNCT:
            if source.startswith(punct, i):
                tokens.append(_Token(punct, punct, False, line, col))
                i += len(punct)
                col += len(punct)
                break
        else:
            raise HlpslError(filename, line, col, f"unexpected character {ch!r}")
    tokens.append(_Token("eof", "", False, line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_PARAM_KINDS = {"agent", "public_key", "channel"}
_LOCAL_KINDS = {"nat", "text", "message"}


class _RoleText:
    """Raw pieces of one parsed role before semantic assembly."""

    def __init__(self, name: str):
        self.name = name
        self.params: list[tuple[str, str]] = []
        self.played_by: Optional[str] = None
        self.locals: list[tuple[str, str]] = []
        self.init_var: Optional[str] = None
        self.init_state: Optional[int] = None
        self.transitions: list[dict] = []
        self.channel_locals: list[str] = []
        self.composition: list[tuple[str, tuple[str, ...]]] = []
        self.consts: list[ConstDecl] = []
        self.intruder_knowledge: list[str] = []

    def var_kind(self, name: str) -> Optional[str]:
        for n, k in self.params + self.locals:
            if n == name:
                return k
        return None


class _Parser:
    def __init__(self, source: str, filename: str):
        self.filename = filename
        self.tokens = _lex(source, filename)
        self.pos = 0
        self.diagnostics: list[Diagnostic] = []

    # -- token helpers ------------------------------------------------------

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def error(self, tok: _Token, message: str) -> HlpslError:
        return HlpslError(self.filename, tok.line, tok.col, message)

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise self.error(tok, f"expected {kind!r}, found {tok.text!r}")
        return self.next()

    def expect_word(self, word: str) -> _Token:
        tok = self.peek()
        if tok.kind != "ident" or tok.text != word:
            raise self.error(tok, f"expected {word!r}, found {tok.text!r}")
        return self.next()

    def at_word(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.text == word

    def accept(self, kind: str) -> Optional[_Token]:
        if self.peek().kind == kind:
            return self.next()
        return None

    # -- grammar ------------------------------------------------------------

    def parse(self) -> SpecModel:
        basics: list[_RoleText] = []
        sessions: list[_RoleText] = []
        environment: Optional[_RoleText] = None
        while self.at_word("role"):
            role = self._role()
            if role.played_by is not None:
                basics.append(role)
            elif role.intruder_knowledge or role.consts or role.name == "environment":
                if environment is not None:
                    raise self.error(self.peek(), "duplicate environment role")
                environment = role
            else:
                sessions.append(role)
        goals = self._goal_block()
        entry = "environment"
        if self.at_word("environment"):
            self.next()
            self.expect("(")
            self.expect(")")
        if self.peek().kind != "eof":
            raise self.error(self.peek(), "trailing input after model")
        if environment is None:
            raise self.error(self.peek(), "no environment role declared")
        return self._assemble(basics, sessions, environment, goals, entry)

    def _role(self) -> _RoleText:
        self.expect_word("role")
        name = self.expect("ident").text
        role = _RoleText(name)
        self.expect("(")
        if self.peek().kind != ")":
            role.params = self._decl_groups(_PARAM_KINDS, stop_puncts=(")",))
        self.expect(")")
        if self.at_word("played_by"):
            self.next()
            role.played_by = self.expect("ident").text
        self.expect_word("def")
        self.expect("=")
        if role.played_by is not None:
            self._basic_body(role)
        else:
            self._composed_body(role)
        self.expect_word("end")
        self.expect_word("role")
        return role

    def _decl_groups(self, kinds: set[str], stop_puncts: tuple[str, ...],
                     stop_words: tuple[str, ...] = ()) -> list[tuple[str, str]]:
        """Comma-grouped declarations: ``A,B: kind, C: kind``."""
        decls: list[tuple[str, str]] = []
        while True:
            names = [self.expect("ident").text]
            while self.accept(","):
                names.append(self.expect("ident").text)
            self.expect(":")
            kind_tok = self.expect("ident")
            kind = kind_tok.text
            if kind == "channel":
                self.expect("(")
                self.expect_word("dy")
                self.expect(")")
            if kind not in kinds:
                raise self.error(kind_tok, f"unexpected kind {kind!r} here")
            decls.extend((n, kind) for n in names)
            nxt = self.peek()
            if nxt.kind in stop_puncts or (nxt.kind == "ident" and nxt.text in stop_words):
                return decls
            if nxt.kind != ",":
                return decls
            # a comma both separates names and groups; groups were consumed
            # greedily above, so a surviving comma starts a new group
            self.next()

    def _basic_body(self, role: _RoleText) -> None:
        if self.at_word("local"):
            self.next()
            role.locals = self._decl_groups(
                _LOCAL_KINDS, stop_puncts=(), stop_words=("init",))
        self.expect_word("init")
        var_tok = self.expect("ident")
        role.init_var = var_tok.text
        self.expect(":=")
        role.init_state = int(self.expect("number").text)
        if role.var_kind(role.init_var) != "nat":
            raise self.error(var_tok, f"init target {role.init_var!r} is not a nat local")
        self.expect_word("transition")
        while self.peek().kind == "number":
            role.transitions.append(self._transition(role))

    def _transition(self, role: _RoleText) -> dict:
        label_tok = self.expect("number")
        self.expect(".")
        lhs = self._facts(role, side="lhs")
        self.expect("=|>")
        rhs = self._facts(role, side="rhs")
        return {"label": label_tok.text, "lhs": lhs, "rhs": rhs,
                "line": label_tok.line, "col": label_tok.col}

    def _facts(self, role: _RoleText, side: str) -> list[dict]:
        facts = [self._fact(role, side)]
        while self.accept("/\\"):
            facts.append(self._fact(role, side))
        return facts

    def _fact(self, role: _RoleText, side: str) -> dict:
        tok = self.peek()
        if tok.kind != "ident":
            raise self.error(tok, f"expected a fact, found {tok.text!r}")
        if tok.text in ("SND", "RCV"):
            self.next()
            self.expect("(")
            msg = self._message(role)
            self.expect(")")
            return {"fact": "snd" if tok.text == "SND" else "rcv",
                    "message": msg, "tok": tok}
        if tok.text in ("witness", "request"):
            self.next()
            self.expect("(")
            actor = self.expect("ident").text
            self.expect(",")
            peer = self.expect("ident").text
            self.expect(",")
            pid = self.expect("ident").text
            self.expect(",")
            value = self._message(role)
            self.expect(")")
            return {"fact": tok.text, "actor": actor, "peer": peer,
                    "protocol_id": pid, "value": value, "tok": tok}
        # state guard / assignment / new()
        name_tok = self.next()
        if self.accept("="):
            num = self.expect("number")
            if name_tok.text != role.init_var:
                raise self.error(name_tok, f"state guard on {name_tok.text!r}, "
                                           f"but the state variable is {role.init_var!r}")
            return {"fact": "guard", "state": int(num.text), "tok": name_tok}
        if self.accept(":="):
            if self.peek().kind == "number":
                num = self.next()
                if name_tok.text != role.init_var:
                    raise self.error(name_tok, f"state assignment on {name_tok.text!r}, "
                                               f"but the state variable is {role.init_var!r}")
                return {"fact": "goto", "state": int(num.text), "tok": name_tok}
            self.expect_word("new")
            self.expect("(")
            self.expect(")")
            return {"fact": "new", "var": name_tok.text, "tok": name_tok}
        raise self.error(name_tok, f"cannot parse fact starting at {name_tok.text!r}")

    def _message(self, role: _RoleText) -> Term:
        parts = [self._part(role)]
        while self.accept("."):
            parts.append(self._part(role))
        return cat(*parts)

    def _part(self, role: _RoleText) -> Term:
        if self.accept("{"):
            body = self._message(role)
            self.expect("}")
            self.expect("_")
            key_tok = self.expect("ident")
            key = self._atom(key_tok, role)
            kind = role.var_kind(key_tok.text)
            if kind == "public_key":
                return AEnc(body, key)
            return SEnc(body, key)
        tok = self.expect("ident")
        return self._atom(tok, role)

    def _atom(self, tok: _Token, role: _RoleText) -> Term:
        if tok.text[0].isupper():
            return Var(tok.text, tok.primed)
        if tok.primed:
            raise self.error(tok, "constants cannot be primed")
        return Const(tok.text)

    def _composed_body(self, role: _RoleText) -> None:
        if self.at_word("local"):
            self.next()
            decls = self._decl_groups({"channel"}, stop_puncts=(),
                                      stop_words=("composition",))
            role.channel_locals = [n for n, _ in decls]
        if self.at_word("const"):
            self.next()
            groups: list[ConstDecl] = []
            while True:
                names = [self.expect("ident").text]
                while self.accept(","):
                    if self.at_word("intruder_knowledge"):
                        raise self.error(self.peek(), "dangling comma in const block")
                    names.append(self.expect("ident").text)
                self.expect(":")
                kind = self.expect("ident").text
                groups.append(ConstDecl(tuple(names), kind))
                if self.accept(","):
                    continue
                break
            role.consts = groups
        if self.at_word("intruder_knowledge"):
            self.next()
            self.expect("=")
            self.expect("{")
            ids = [self.expect("ident").text]
            while self.accept(","):
                ids.append(self.expect("ident").text)
            self.expect("}")
            role.intruder_knowledge = ids
        self.expect_word("composition")
        role.composition.append(self._instantiation())
        while self.accept("/\\"):
            role.composition.append(self._instantiation())

    def _instantiation(self) -> tuple[str, tuple[str, ...]]:
        name = self.expect("ident").text
        self.expect("(")
        args: list[str] = []
        if self.peek().kind != ")":
            args.append(self.expect("ident").text)
            while self.accept(","):
                args.append(self.expect("ident").text)
        self.expect(")")
        return name, tuple(args)

    def _goal_block(self) -> tuple[Goal, ...]:
        if not self.at_word("goal"):
            raise self.error(self.peek(), "no goals declared")
        self.next()
        goals: list[Goal] = []
        while self.at_word("authentication_on"):
            self.next()
            goals.append(Goal(self.expect("ident").text))
        self.expect_word("end")
        self.expect_word("goal")
        if not goals:
            raise self.error(self.peek(), "no goals declared")
        return tuple(goals)

    # -- semantic assembly --------------------------------------------------

    def _assemble(self, basics: list[_RoleText], sessions: list[_RoleText],
                  env: _RoleText, goals: tuple[Goal, ...], entry: str) -> SpecModel:
        role_specs = tuple(self._build_role(r) for r in basics)
        session_roles = tuple(
            SessionRole(r.name, tuple(r.params), tuple(r.channel_locals),
                        tuple(r.composition))
            for r in sessions)
        environment = Environment(tuple(env.consts), tuple(env.intruder_knowledge),
                                  tuple(env.composition))
        model = SpecModel(role_specs, session_roles, environment, goals, entry)
        self._check(model)
        return dataclasses.replace(model, diagnostics=tuple(self.diagnostics))

    def _build_role(self, raw: _RoleText) -> RoleSpec:
        if raw.played_by not in [n for n, k in raw.params if k == "agent"]:
            raise HlpslError(self.filename, 1, 1,
                             f"role {raw.name}: played_by {raw.played_by!r} "
                             f"is not an agent parameter")
        bound = {n for n, _ in raw.params}
        seen_labels: set[str] = set()
        transitions: list[Transition] = []
        for tr in raw.transitions:
            if tr["label"] in seen_labels:
                raise HlpslError(self.filename, tr["line"], tr["col"],
                                 f"role {raw.name}: duplicate transition label "
                                 f"{tr['label']}")
            seen_labels.add(tr["label"])
            transitions.append(self._build_transition(raw, tr, bound))
        self._check_reachability(raw, transitions)
        return RoleSpec(
            name=raw.name,
            params=tuple(raw.params),
            played_by=raw.played_by or "",
            locals_=tuple(raw.locals),
            initial_state=raw.init_state or 0,
            transitions=tuple(transitions),
            state_var=raw.init_var or "State",
        )

    def _build_transition(self, raw: _RoleText, tr: dict, bound: set[str]) -> Transition:
        from_state = to_state = None
        receive = send = None
        fresh: list[str] = []
        events: list[Event] = []
        newly_bound: set[str] = set()

        for fact in tr["lhs"]:
            if fact["fact"] == "guard":
                from_state = fact["state"]
            elif fact["fact"] == "rcv":
                receive = fact["message"]
                newly_bound |= pattern_vars(receive)
            elif fact["fact"] in ("witness", "request"):
                events.append(self._build_event(raw, tr, fact, guard=True,
                                                newly_bound=newly_bound))
            else:
                raise HlpslError(self.filename, fact["tok"].line, fact["tok"].col,
                                 f"fact {fact['fact']} not allowed before =|>")
        for fact in tr["rhs"]:
            if fact["fact"] == "goto":
                to_state = fact["state"]
            elif fact["fact"] == "new":
                fresh.append(fact["var"])
                newly_bound.add(fact["var"])
            elif fact["fact"] == "snd":
                send = fact["message"]
            elif fact["fact"] in ("witness", "request"):
                events.append(self._build_event(raw, tr, fact, guard=False,
                                                newly_bound=newly_bound))
            else:
                raise HlpslError(self.filename, fact["tok"].line, fact["tok"].col,
                                 f"fact {fact['fact']} not allowed after =|>")
        if from_state is None or to_state is None:
            raise HlpslError(self.filename, tr["line"], tr["col"],
                             f"role {raw.name} transition {tr['label']}: "
                             f"missing state guard or state assignment")

        declared = {n for n, _ in raw.params} | {n for n, _ in raw.locals}
        implicit: list[str] = []
        if send is not None:
            for var in self._ordered_vars(send):
                if var not in declared:
                    raise HlpslError(self.filename, tr["line"], tr["col"],
                                     f"role {raw.name}: unbound identifier {var!r}")
                if var not in bound and var not in newly_bound and var not in implicit:
                    implicit.append(var)
        for ev in events:
            for var in pattern_vars(ev.value):
                if var not in declared:
                    raise HlpslError(self.filename, tr["line"], tr["col"],
                                     f"role {raw.name}: unbound identifier {var!r}")
        self._prime_diagnostics(raw, tr, receive, send, events, fresh, set(bound))
        bound |= newly_bound | set(implicit)
        return Transition(
            label=tr["label"],
            from_state=from_state,
            receive=receive,
            fresh=tuple(fresh),
            to_state=to_state,
            send=send,
            events=tuple(events),
            implicit_fresh=tuple(implicit),
        )

    def _build_event(self, raw: _RoleText, tr: dict, fact: dict, guard: bool,
                     newly_bound: set[str]) -> Event:
        return Event(fact["fact"], fact["actor"], fact["peer"],
                     fact["protocol_id"], fact["value"], guard)

    def _check_reachability(self, raw: _RoleText,
                            transitions: list[Transition]) -> None:
        reachable = {raw.init_state}
        changed = True
        while changed:
            changed = False
            for tr in transitions:
                if tr.from_state in reachable and tr.to_state not in reachable:
                    reachable.add(tr.to_state)
                    changed = True
        for tr in transitions:
            if tr.from_state not in reachable:
                raise HlpslError(self.filename, 1, 1,
                                 f"role {raw.name}: transition {tr.label} "
                                 f"starts in state {tr.from_state}, which is "
                                 f"unreachable from the initial state")

    def _ordered_vars(self, pattern: Term) -> list[str]:
        out: list[str] = []

        def walk(t: Term) -> None:
            if t.is_variable and t.name not in out:  # type: ignore[attr-defined]
                out.append(t.name)  # type: ignore[attr-defined]
            elif isinstance(t, Concat):
                walk(t.left)
                walk(t.right)
            elif isinstance(t, (AEnc, SEnc)):
                walk(t.body)
                walk(t.key)

        walk(pattern)
        return out

    def _prime_diagnostics(self, raw: _RoleText, tr: dict, receive, send,
                           events, fresh: list[str], bound_before: set[str]) -> None:
        # true binders only: a receive-pattern variable that was already bound
        # is a use of the old value, not a fresh binding
        binders: set[str] = set(fresh)
        if receive is not None:
            binders |= {v for v in pattern_vars(receive) if v not in bound_before}

        def scan(t: Term) -> None:
            if t.is_variable and t.primed and t.name not in binders:  # type: ignore[attr-defined]
                self.diagnostics.append(Diagnostic(
                    tr["line"], tr["col"], "warning", "prime_rebind",
                    f"role {raw.name} transition {tr['label']}: primed "
                    f"{t.name}' is not bound by this transition; it refers "  # type: ignore[attr-defined]
                    f"to the previously bound value"))
            elif isinstance(t, Concat):
                scan(t.left)
                scan(t.right)
            elif isinstance(t, (AEnc, SEnc)):
                scan(t.body)
                scan(t.key)

        if send is not None:
            scan(send)
        for ev in events:
            scan(ev.value)

    def _check(self, model: SpecModel) -> None:
        declared_pids = {n for decl in model.environment.consts
                         if decl.kind == "protocol_id" for n in decl.names}
        for goal in model.goals:
            if goal.protocol_id not in declared_pids:
                raise HlpslError(self.filename, 1, 1,
                                 f"goal names undeclared protocol_id "
                                 f"{goal.protocol_id!r}")
        const_names = {n for decl in model.environment.consts for n in decl.names}
        for ident in model.environment.intruder_knowledge:
            if ident not in const_names:
                raise HlpslError(self.filename, 1, 1,
                                 f"intruder_knowledge names undeclared "
                                 f"constant {ident!r}")
        role_names = {r.name for r in model.basic_roles}
        for srole in model.session_roles:
            visible = {n for n, _ in srole.params} | set(srole.channel_locals)
            used_channels: dict[str, list[str]] = {}
            for rname, args in srole.composition:
                if rname not in role_names:
                    raise HlpslError(self.filename, 1, 1,
                                     f"session {srole.name} composes unknown "
                                     f"role {rname!r}")
                spec = model.role(rname)
                if len(args) != len(spec.params):
                    raise HlpslError(self.filename, 1, 1,
                                     f"session {srole.name}: role {rname} takes "
                                     f"{len(spec.params)} arguments, got {len(args)}")
                for arg, (pname, pkind) in zip(args, spec.params):
                    if arg not in visible:
                        raise HlpslError(self.filename, 1, 1,
                                         f"session {srole.name}: unbound "
                                         f"identifier {arg!r}")
                    if pkind == "channel" and arg in srole.channel_locals:
                        used_channels.setdefault(arg, []).append(rname)
            shared = sorted(ch for ch, users in used_channels.items()
                            if len(users) > 1)
            if shared:
                self.diagnostics.append(Diagnostic(
                    1, 1, "warning", "shared_channel",
                    f"session {srole.name}: channels {', '.join(shared)} are "
                    f"wired to more than one role; channel identity is "
                    f"advisory under the intruder-mediated network"))
        for rname, args in model.environment.composition:
            target = model.session_role(rname)
            params = target.params if target else (
                model.role(rname).params if rname in role_names else None)
            if params is None:
                raise HlpslError(self.filename, 1, 1,
                                 f"environment composes unknown role {rname!r}")
            if len(args) != len(params):
                raise HlpslError(self.filename, 1, 1,
                                 f"environment: role {rname} takes "
                                 f"{len(params)} arguments, got {len(args)}")
            for arg in args:
                if arg not in const_names:
                    raise HlpslError(self.filename, 1, 1,
                                     f"environment: unbound identifier {arg!r}")


def parse_hlpsl(source: str, filename: str = "<hlpsl>") -> SpecModel:
    """Parse a model; raises HlpslError on syntax or semantic faults."""
    return _Parser(source, filename).parse()


# ---------------------------------------------------------------------------
# Pretty-printer (normalized layout; parse(pretty(m)) == m)
# ---------------------------------------------------------------------------

def _fmt_atom(term: Term) -> str:
    if term.is_variable:
        return term.name + ("'" if term.primed else "")  # type: ignore[attr-defined]
    if isinstance(term, Const):
        return term.name
    raise ValueError(f"not an atom: {term!r}")


def _fmt_message(term: Term) -> str:
    parts = uncat(term)
    return ".".join(_fmt_part(p) for p in parts)


def _fmt_part(term: Term) -> str:
    if isinstance(term, (AEnc, SEnc)):
        return "{" + _fmt_message(term.body) + "}_" + _fmt_atom(term.key)
    if isinstance(term, Concat):
        return "{" + _fmt_message(term) + "}"  # not produced by the subset
    return _fmt_atom(term)


def _fmt_decls(decls: tuple[tuple[str, str], ...], channel_suffix: str) -> list[str]:
    groups: list[tuple[list[str], str]] = []
    for name, kind in decls:
        if groups and groups[-1][1] == kind:
            groups[-1][0].append(name)
        else:
            groups.append(([name], kind))
    out = []
    for names, kind in groups:
        kind_txt = f"channel{channel_suffix}" if kind == "channel" else kind
        out.append(f"{','.join(names)}: {kind_txt}")
    return out


def _fmt_event(ev: Event) -> str:
    return (f"{ev.kind}({ev.actor},{ev.peer},{ev.protocol_id},"
            f"{_fmt_message(ev.value)})")


def pretty(model: SpecModel) -> str:
    """Normalized re-serialization of a parsed model."""
    lines: list[str] = []
    for role in model.basic_roles:
        lines.append(f"role {role.name}(")
        decls = _fmt_decls(role.params, "(dy)")
        for i, d in enumerate(decls):
            lines.append("  " + d + ("," if i + 1 < len(decls) else ")")
                         )
        lines.append(f"played_by {role.played_by} def=")
        if role.locals_:
            lines.append("  local")
            local_decls = _fmt_decls(role.locals_, "(dy)")
            for i, d in enumerate(local_decls):
                lines.append("    " + d + ("," if i + 1 < len(local_decls) else ""))
        lines.append("  init")
        lines.append(f"    {role.state_var} := {role.initial_state}")
        lines.append("  transition")
        for tr in role.transitions:
            lhs = [f"{role.state_var} = {tr.from_state}"]
            if tr.receive is not None:
                lhs.append(f"RCV({_fmt_message(tr.receive)})")
            lhs.extend(_fmt_event(ev) for ev in tr.events if ev.guard)
            rhs = [f"{role.state_var}' := {tr.to_state}"]
            rhs.extend(f"{v}' := new()" for v in tr.fresh)
            if tr.send is not None:
                rhs.append(f"SND({_fmt_message(tr.send)})")
            rhs.extend(_fmt_event(ev) for ev in tr.events if not ev.guard)
            lines.append(f"    {tr.label}. " + " /\\ ".join(lhs) + " =|>")
            lines.append("       " + " /\\ ".join(rhs))
        lines.append("end role")
        lines.append("")
    for srole in model.session_roles:
        lines.append(f"role {srole.name}(")
        decls = _fmt_decls(srole.params, "(dy)")
        for i, d in enumerate(decls):
            lines.append("  " + d + ("," if i + 1 < len(decls) else ")"))
        lines.append("def=")
        if srole.channel_locals:
            lines.append(f"  local {','.join(srole.channel_locals)}: channel(dy)")
        lines.append("  composition")
        comps = [f"{name}({','.join(args)})" for name, args in srole.composition]
        lines.append("    " + " /\\ ".join(comps))
        lines.append("end role")
        lines.append("")
    env = model.environment
    lines.append("role environment() def=")
    if env.consts:
        lines.append("  const")
        for i, decl in enumerate(env.consts):
            sep = "," if i + 1 < len(env.consts) else ""
            lines.append(f"    {','.join(decl.names)}: {decl.kind}{sep}")
    lines.append("  intruder_knowledge = {" + ",".join(env.intruder_knowledge) + "}")
    lines.append("  composition")
    comps = [f"{name}({','.join(args)})" for name, args in env.composition]
    lines.append("    " + " /\\ ".join(comps))
    lines.append("end role")
    lines.append("")
    lines.append("goal")
    for goal in model.goals:
        lines.append(f"  {goal.kind} {goal.protocol_id}")
    lines.append("end goal")
    lines.append("")
    lines.append(f"{model.entry}()")
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Lowering
# ---------------------------------------------------------------------------

def key_owner(const_name: str) -> str:
    """Owner of a public-key constant under the naming convention."""
    if const_name in _KEY_OWNER_ALIASES:
        return _KEY_OWNER_ALIASES[const_name]
    if len(const_name) > 1 and const_name.startswith("k"):
        return const_name[1:]
    return const_name


@dataclass(frozen=True, slots=True)
class LoweredModel:
    """Runnable shape of a parsed model: honest instances, roles absorbed by
    the intruder, goals, and the intruder's initial knowledge."""

    instances: tuple[_model.RoleInstance, ...]
    absorbed: tuple[tuple[str, int], ...]  # (role name, session) played by intruder
    goals: tuple[Goal, ...]
    intruder_knowledge: KnowledgeSet
    sessions: int


def _const_term(model: SpecModel, name: str) -> Term:
    kind = model.const_kind(name)
    if kind == "agent":
        return Agent(name)
    if kind == "public_key":
        return PubKey(key_owner(name))
    return Const(name)


def lower(model: SpecModel, sessions: int = 1, intruder: str = INTRUDER,
          include_intruder_privkey: bool = True) -> LoweredModel:
    """Instantiate the environment's composition for ``sessions`` parallel
    sessions and build the intruder's starting knowledge.

    Roles whose player is the intruder agent are not run; their parameter
    values and pattern-granted private keys join the intruder's knowledge.
    """
    if sessions < 1:
        raise ValueError("sessions must be >= 1")
    knowledge: set[Term] = set()
    for ident in model.environment.intruder_knowledge:
        kind = model.const_kind(ident)
        if kind == "public_key":
            owner = key_owner(ident)
            knowledge.add(PubKey(owner))
            if owner == intruder and include_intruder_privkey:
                knowledge.add(PrivKey(owner))
        else:
            knowledge.add(_const_term(model, ident))

    base = list(model.environment.composition)
    selected = [base[i % len(base)] for i in range(sessions)]

    instances: list[_model.RoleInstance] = []
    absorbed: list[tuple[str, int]] = []
    for session_id, (name, args) in enumerate(selected, start=1):
        srole = model.session_role(name)
        if srole is None:
            # direct basic-role instantiation
            spec = model.role(name)
            binding = {p: _const_term(model, a)
                       for (p, _k), a in zip(spec.params, args)}
            _place(model, spec, binding, session_id, intruder,
                   instances, absorbed, knowledge)
            continue
        sess_env: dict[str, Term] = {
            p: _const_term(model, a) for (p, _k), a in zip(srole.params, args)}
        for ch in srole.channel_locals:
            sess_env[ch] = Const(f"ch_{ch.lower()}")
        for rname, rargs in srole.composition:
            spec = model.role(rname)
            binding = {p: sess_env[a] for (p, _k), a in zip(spec.params, rargs)}
            _place(model, spec, binding, session_id, intruder,
                   instances, absorbed, knowledge)

    return LoweredModel(
        instances=tuple(instances),
        absorbed=tuple(absorbed),
        goals=model.goals,
        intruder_knowledge=KnowledgeSet(frozenset(knowledge)),
        sessions=sessions,
    )


def _place(model: SpecModel, spec: RoleSpec, binding: dict[str, Term],
           session_id: int, intruder: str, instances: list,
           absorbed: list, knowledge: set[Term]) -> None:
    player = binding.get(spec.played_by)
    inst = _model.instantiate(spec, binding, session_id)
    if isinstance(player, Agent) and player.name == intruder:
        absorbed.append((spec.name, session_id))
        knowledge.update(binding.values())
        knowledge.update(inst.keyring)
    else:
        instances.append(inst)
