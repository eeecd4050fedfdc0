"""Hand-written six-step ownership-transfer roles.

Message shapes, with ``kcks`` the key server's public key:

  m1  aenc(id_a . pw_a . n_a . otr, kcks)     seller's transfer request,
      where otr = aenc(id_a . id_b . n_b, kcks) introduces the buyer
  m2  ticket = aenc(xfer . id_a . id_b . n_a . n_b, kcks)   opaque to users
  m3  aenc(id_b . ticket . n_b, kcks)         buyer presents the ticket
  m4  senc(otc, n_a)                          confirmation, keyed to seller
  m5  aenc(otc, kcks)                         seller echoes the confirmation
  m6  senc(tempid, n_b)                       buyer's pseudonym, keyed to buyer

Both users operate the device under sale: the buyer enters their nonce
locally before m1 is built, the ticket stays in the device between m2 and
m3, and m4 reaches the seller by handing the device over.  Those hand-overs
are local events, never network messages.

The ticket binds (transfer id, both ids, both nonces) so the server can
correlate m3 and m5 with the originating request statelessly; neither user
can open it.  The confirmation payload is a single opaque constant carrying
the transfer id, standing in for the out-of-scope payment details.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .term import (
    AEnc, Agent, Const, Nonce, Password, PubKey, SEnc, Term, cat, uncat,
)


class ProtocolAbort(Exception):
    """A role detected an invalid message and aborted the transfer."""


class MessageFormat(ValueError):
    """A term does not have the expected message shape."""


@dataclass(frozen=True, slots=True)
class AuthEvent:
    """Witness/request claim attached to a protocol action."""

    kind: str  # "witness" | "request"
    actor: str
    peer: str
    protocol_id: str
    value: Term


@dataclass(frozen=True, slots=True)
class RoleOutput:
    message: Optional[Term]
    events: tuple[AuthEvent, ...] = ()


GOAL_SELLER_NONCE = "usera_server_na"
GOAL_BUYER_NONCE = "userb_server_nb"


# ---------------------------------------------------------------------------
# Message builders and openers
# ---------------------------------------------------------------------------

def build_otr(id_a: Term, id_b: Term, n_b: Term, pk_cks: Term) -> Term:
    """Buyer introduction: aenc(id_a . id_b . n_b, pk_cks)."""
    return AEnc(cat(id_a, id_b, n_b), pk_cks)


def open_otr(otr: Term) -> tuple[Term, Term, Term]:
    body = _open_aenc(otr, "otr")
    parts = uncat(body)
    if len(parts) != 3:
        raise MessageFormat(f"otr carries {len(parts)} fields, expected 3")
    return parts[0], parts[1], parts[2]


def build_m1(id_a: Term, pw_a: Term, n_a: Term, otr: Term, pk_cks: Term) -> Term:
    return AEnc(cat(id_a, pw_a, n_a, otr), pk_cks)


def open_m1(m1: Term) -> tuple[Term, Term, Term, Term]:
    body = _open_aenc(m1, "m1")
    parts = uncat(body)
    if len(parts) != 4 or not isinstance(parts[3], AEnc):
        raise MessageFormat("m1 must carry id, password, nonce and an otr")
    return parts[0], parts[1], parts[2], parts[3]


def build_ticket(transfer_id: str, id_a: Term, id_b: Term,
                 n_a: Term, n_b: Term, pk_cks: Term) -> Term:
    return AEnc(cat(Const(transfer_id), id_a, id_b, n_a, n_b), pk_cks)


def open_ticket(ticket: Term) -> tuple[str, Term, Term, Term, Term]:
    body = _open_aenc(ticket, "ticket")
    parts = uncat(body)
    if len(parts) != 5 or not isinstance(parts[0], Const):
        raise MessageFormat("ticket must carry a transfer id and 4 fields")
    return parts[0].name, parts[1], parts[2], parts[3], parts[4]


def build_m3(id_b: Term, ticket: Term, n_b: Term, pk_cks: Term) -> Term:
    return AEnc(cat(id_b, ticket, n_b), pk_cks)


def open_m3(m3: Term) -> tuple[Term, Term, Term]:
    body = _open_aenc(m3, "m3")
    parts = uncat(body)
    if len(parts) != 3 or not isinstance(parts[1], AEnc):
        raise MessageFormat("m3 must carry id, ticket and nonce")
    return parts[0], parts[1], parts[2]


def otc_payload(transfer_id: str) -> Term:
    """Opaque confirmation blob for one transfer (payment details elided)."""
    return Const(f"otc_{transfer_id}")


def build_m4(otc: Term, n_a: Term) -> Term:
    return SEnc(otc, n_a)


def open_m4(m4: Term, n_a: Term) -> Term:
    if not isinstance(m4, SEnc):
        raise MessageFormat("m4 must be symmetrically encrypted")
    if m4.key != n_a:
        raise ProtocolAbort("m4 is not keyed to this seller's nonce")
    return m4.body


def build_m5(otc: Term, pk_cks: Term) -> Term:
    return AEnc(otc, pk_cks)


def open_m5(m5: Term) -> Term:
    return _open_aenc(m5, "m5")


def build_m6(temp_id: str, n_b: Term) -> Term:
    return SEnc(Const(temp_id), n_b)


def open_m6(m6: Term, n_b: Term) -> Term:
    if not isinstance(m6, SEnc):
        raise MessageFormat("m6 must be symmetrically encrypted")
    if m6.key != n_b:
        raise ProtocolAbort("m6 is not keyed to this buyer's nonce")
    return m6.body


def _open_aenc(term: Term, what: str) -> Term:
    if not isinstance(term, AEnc) or not isinstance(term.key, PubKey):
        raise MessageFormat(f"{what} must be encrypted to a public key")
    return term.body


# ---------------------------------------------------------------------------
# Device-side role state machines
# ---------------------------------------------------------------------------

_A_PHASES = ("idle", "sent_request", "confirmed")
_B_PHASES = ("waiting", "presented", "done")


@dataclass(slots=True)
class UserA:
    """Seller side of the transfer, running on the device under sale."""

    user_id: str
    password: Password
    peer_id: str
    pk_cks: PubKey
    session: int
    phase: str = "idle"
    nonce: Optional[Nonce] = None
    otc: Optional[Term] = None

    def id_term(self) -> Agent:
        return Agent(self.user_id)


@dataclass(slots=True)
class UserB:
    """Buyer side of the transfer, running on the same device."""

    user_id: str
    pk_cks: PubKey
    session: int
    phase: str = "waiting"
    nonce: Optional[Nonce] = None
    ticket: Optional[Term] = None
    temp_id: Optional[Term] = None

    def id_term(self) -> Agent:
        return Agent(self.user_id)

    def enter_nonce(self) -> Nonce:
        """The buyer keys their nonce into the device before step 1."""
        if self.nonce is None:
            self.nonce = Nonce("nb", self.session)
        return self.nonce


def usera_run(role: UserA, event: tuple) -> RoleOutput:
    """Advance the seller. Events: ("start", buyer_nonce) and ("otc", m4)."""
    kind = event[0]
    if kind == "start":
        if role.phase != "idle":
            raise ProtocolAbort("transfer already started on this device")
        n_b = event[1]
        role.nonce = Nonce("na", role.session)
        otr = build_otr(role.id_term(), Agent(role.peer_id), n_b, role.pk_cks)
        m1 = build_m1(role.id_term(), role.password, role.nonce, otr, role.pk_cks)
        role.phase = "sent_request"
        return RoleOutput(m1)
    if kind == "otc":
        if role.phase != "sent_request" or role.nonce is None:
            raise ProtocolAbort("confirmation arrived out of order")
        role.otc = open_m4(event[1], role.nonce)
        role.phase = "confirmed"
        # echoing the confirmation is the seller's second signature on the deal
        m5 = build_m5(role.otc, role.pk_cks)
        request = AuthEvent("request", role.user_id, "cks",
                            GOAL_SELLER_NONCE, role.nonce)
        return RoleOutput(m5, (request,))
    raise ProtocolAbort(f"seller cannot handle event {kind!r}")


def userb_run(role: UserB, event: tuple) -> RoleOutput:
    """Advance the buyer.

    Events: ("ticket", m2) stores the ticket on the device, ("present", None)
    emits m3 from the stored ticket, ("tempid", m6) completes the transfer.
    """
    kind = event[0]
    if kind == "ticket":
        if role.phase != "waiting":
            raise ProtocolAbort("ticket arrived out of order")
        role.ticket = event[1]
        return RoleOutput(None)
    if kind == "present":
        if role.ticket is None:
            raise ProtocolAbort("no ticket in the device")
        if role.phase != "waiting":
            raise ProtocolAbort("ticket already presented")
        n_b = role.enter_nonce()
        role.phase = "presented"
        return RoleOutput(build_m3(role.id_term(), role.ticket, n_b, role.pk_cks))
    if kind == "tempid":
        if role.phase != "presented" or role.nonce is None:
            raise ProtocolAbort("pseudonym arrived out of order")
        role.temp_id = open_m6(event[1], role.nonce)
        role.phase = "done"
        request = AuthEvent("request", role.user_id, "cks",
                            GOAL_BUYER_NONCE, role.nonce)
        return RoleOutput(None, (request,))
    raise ProtocolAbort(f"buyer cannot handle event {kind!r}")
