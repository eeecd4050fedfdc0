"""Central key server: ownership records and transfer lifecycle.

The registry is the authority on who owns which device.  A transfer walks
one session through ticket_issued -> otc_sent -> finalized; any mismatch or
timeout aborts the session and locks the device record, after which neither
party can authenticate.  A locked device recovers only through a fresh,
fully valid transfer request from the recorded owner.

Finalization deletes the seller's credential digest, installs the buyer as
owner, and issues a fresh pseudonymous temp id.  The buyer's initial
credential is that temp id (delivered under the buyer's nonce in m6); no
other confidential value ever reaches the server from the buyer.

Persistence is line-delimited JSON, one record per line, written via atomic
replace.  Live session state is in-memory only: a record reloaded mid
transfer keeps its pending status, and any further protocol message for the
unknown session aborts into the locked state.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass
from typing import Optional

from . import roles
from .term import AEnc, Agent, Const, PubKey, Term, canonical_encode

STATUS_ACTIVE = "active"
STATUS_PENDING = "transfer_pending"
STATUS_LOCKED = "locked"

PHASE_TICKET = "ticket_issued"
PHASE_OTC = "otc_sent"
PHASE_FINAL = "finalized"
PHASE_ABORTED = "aborted"

DEFAULT_DEADLINE = 100

_RECORD_FIELDS = ("device", "owner", "pw_digest", "temp_id", "status", "session")


class RegistryReject(Exception):
    """Request refused; the addressed record is unchanged."""


class RegistryAbort(Exception):
    """Request invalidated a live session; the session is now aborted and
    the device record locked."""


class RegistryError(ValueError):
    """Bad registry state or file."""


def digest(password: Term) -> str:
    return hashlib.sha256(canonical_encode(password).encode()).hexdigest()


@dataclass(slots=True)
class OwnershipRecord:
    device: str
    owner: str
    pw_digest: str
    temp_id: Optional[str] = None
    status: str = STATUS_ACTIVE
    session: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps({f: getattr(self, f) for f in _RECORD_FIELDS},
                          separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "OwnershipRecord":
        obj = json.loads(line)
        if not isinstance(obj, dict) or set(obj) != set(_RECORD_FIELDS):
            raise ValueError("record fields mismatch")
        return cls(**obj)


@dataclass(slots=True)
class TransferSession:
    transfer_id: str
    device: str
    seller: str
    buyer: str
    n_a: Term
    n_b: Term
    otc: Term
    ticket: Term
    phase: str
    deadline: int


@dataclass(slots=True)
class RegistryEventRec:
    """What the server did, for the caller's trace."""

    action: str
    device: str
    session: Optional[str] = None
    detail: Optional[str] = None


class CksRegistry:
    """Single-writer ownership registry with a logical clock."""

    def __init__(self, seed: int = 0, deadline: int = DEFAULT_DEADLINE,
                 key_owner: str = "cks"):
        self.records: dict[str, OwnershipRecord] = {}
        self.sessions: dict[str, TransferSession] = {}
        self.pubkey = PubKey(key_owner)
        self.clock = 0
        self.deadline = deadline
        self._rng = random.Random(seed)
        self._xfer_counter = 0
        self.events: list[RegistryEventRec] = []
        self.auth_events: list[roles.AuthEvent] = []

    # -- provisioning ------------------------------------------------------

    def provision(self, device: str, owner: str, password: Term) -> None:
        """First-owner setup; outside the transfer protocol itself."""
        if device in self.records:
            raise RegistryError(f"device {device!r} already provisioned")
        self.records[device] = OwnershipRecord(device, owner, digest(password))

    # -- helpers -----------------------------------------------------------

    def _event(self, action: str, device: str, session: Optional[str] = None,
               detail: Optional[str] = None) -> None:
        self.events.append(RegistryEventRec(action, device, session, detail))

    def note(self, action: str, device: str, session: Optional[str] = None,
             detail: Optional[str] = None) -> None:
        """Record a caller-observed outcome (e.g. a rejected message)."""
        self._event(action, device, session, detail)

    def drain_events(self) -> list[RegistryEventRec]:
        out, self.events = self.events, []
        return out

    def drain_auth_events(self) -> list[roles.AuthEvent]:
        out, self.auth_events = self.auth_events, []
        return out

    def _fresh_transfer_id(self) -> str:
        self._xfer_counter += 1
        return f"xfer{self._xfer_counter}"

    def _require_own_key(self, message: Term, what: str) -> None:
        if not isinstance(message, AEnc) or message.key != self.pubkey:
            raise RegistryReject(f"{what} is not encrypted to this server")

    def _fresh_temp_id(self) -> str:
        return f"tid_{self._rng.getrandbits(32):08x}"

    def _live_session(self, device: str) -> Optional[TransferSession]:
        rec = self.records.get(device)
        if rec is None or rec.session is None:
            return None
        sess = self.sessions.get(rec.session)
        if sess is not None and sess.phase in (PHASE_TICKET, PHASE_OTC):
            return sess
        return None

    # -- protocol steps ----------------------------------------------------

    def begin_transfer(self, m1: Term, device: Optional[str] = None) -> Term:
        """Validate a transfer request (m1) and issue the ticket (m2).

        The wire messages never name the device, so the server correlates by
        the requesting owner's credentials; callers that know the originating
        device (the simulator does) may pass it explicitly.
        """
        self._require_own_key(m1, "m1")
        try:
            id_a, pw_a, n_a, otr = roles.open_m1(m1)
            otr_a, otr_b, n_b = roles.open_otr(otr)
        except roles.MessageFormat as exc:
            raise RegistryReject(f"malformed m1: {exc}") from exc
        if otr.key != self.pubkey:
            raise RegistryReject("otr is not encrypted to this server")
        if not isinstance(id_a, Agent) or otr_a != id_a or not isinstance(otr_b, Agent):
            raise RegistryReject("m1 identities are inconsistent")
        if n_a == n_b:
            raise RegistryReject("seller and buyer nonces must differ")

        rec = self._locate_record(id_a.name, pw_a, device)
        if self._live_session(rec.device) is not None:
            raise RegistryReject("a transfer is already in progress")
        # a locked device accepts a fully valid restart from its recorded owner
        xfer = self._fresh_transfer_id()
        ticket = roles.build_ticket(xfer, id_a, otr_b, n_a, n_b, self.pubkey)
        self.sessions[xfer] = TransferSession(
            transfer_id=xfer, device=rec.device, seller=id_a.name,
            buyer=otr_b.name, n_a=n_a, n_b=n_b,
            otc=roles.otc_payload(xfer), ticket=ticket,
            phase=PHASE_TICKET, deadline=self.clock + self.deadline)
        rec.status = STATUS_PENDING
        rec.session = xfer
        self._event("ticket_issued", rec.device, xfer)
        return ticket

    def _locate_record(self, owner: str, password: Term,
                       device: Optional[str]) -> OwnershipRecord:
        if device is not None:
            rec = self.records.get(device)
            candidates = [rec] if rec is not None else []
        else:
            candidates = [r for r in self.records.values() if r.owner == owner]
            if len(candidates) > 1:
                raise RegistryReject(
                    f"owner {owner!r} holds several devices; request is ambiguous")
        if not candidates:
            raise RegistryReject("unknown device")
        rec = candidates[0]
        if rec.owner != owner or rec.pw_digest != digest(password):
            raise RegistryReject("bad credentials")
        return rec

    def present_ticket(self, m3: Term) -> Term:
        """Validate the buyer's ticket presentation (m3) and send the
        confirmation (m4) keyed to the seller's nonce."""
        self._require_own_key(m3, "m3")
        try:
            id_b, ticket, n_b = roles.open_m3(m3)
            xfer, t_ida, t_idb, t_na, t_nb = roles.open_ticket(ticket)
        except roles.MessageFormat as exc:
            raise RegistryReject(f"malformed m3: {exc}") from exc
        sess = self.sessions.get(xfer)
        if sess is None:
            raise RegistryReject(f"unknown ticket {xfer!r}")
        if sess.phase == PHASE_OTC:
            # replayed m3 for a session already past this step: ignore
            raise RegistryReject(f"ticket {xfer!r} already presented")
        if sess.phase != PHASE_TICKET:
            raise RegistryReject(f"session {xfer!r} is {sess.phase}")
        if sess.ticket != ticket:
            self._abort(sess, "ticket fields were altered")
        if not isinstance(id_b, Agent) or id_b.name != sess.buyer or t_idb != id_b:
            self._abort(sess, "presenter is not the introduced buyer")
        if n_b != sess.n_b:
            self._abort(sess, "buyer nonce mismatch")
        sess.phase = PHASE_OTC
        sess.deadline = self.clock + self.deadline
        self._event("otc_sent", sess.device, xfer)
        self.auth_events.append(roles.AuthEvent(
            "witness", "cks", sess.seller, roles.GOAL_SELLER_NONCE, sess.n_a))
        return roles.build_m4(sess.otc, sess.n_a)

    def confirm(self, m5: Term) -> tuple[Term, OwnershipRecord]:
        """Validate the seller's echoed confirmation (m5), finalize the
        transfer, and issue the buyer's pseudonym (m6)."""
        self._require_own_key(m5, "m5")
        try:
            otc = roles.open_m5(m5)
        except roles.MessageFormat as exc:
            raise RegistryReject(f"malformed m5: {exc}") from exc
        if not isinstance(otc, Const) or not otc.name.startswith("otc_"):
            raise RegistryReject("m5 does not carry a confirmation payload")
        xfer = otc.name[len("otc_"):]
        sess = self.sessions.get(xfer)
        if sess is None:
            raise RegistryReject(f"confirmation for unknown session {xfer!r}")
        if sess.phase != PHASE_OTC:
            if sess.phase == PHASE_TICKET:
                self._abort(sess, "confirmation before ticket presentation")
            raise RegistryReject(f"session {xfer!r} is {sess.phase}")
        if otc != sess.otc:
            self._abort(sess, "confirmation payload mismatch")

        rec = self.records[sess.device]
        temp_id = self._fresh_temp_id()
        sess.phase = PHASE_FINAL
        # the seller's credentials are deleted, not superseded: the new
        # digest is derived from the freshly issued pseudonym
        rec.owner = sess.buyer
        rec.pw_digest = digest(Const(temp_id))
        rec.temp_id = temp_id
        rec.status = STATUS_ACTIVE
        rec.session = None
        self._event("finalized", rec.device, xfer, f"owner={rec.owner}")
        self.auth_events.append(roles.AuthEvent(
            "witness", "cks", sess.buyer, roles.GOAL_BUYER_NONCE, sess.n_b))
        return roles.build_m6(temp_id, sess.n_b), rec

    # -- queries and control -----------------------------------------------

    def authenticate_use(self, device: str, user: str, password: Term) -> bool:
        """Allow device use iff the record is active and credentials match."""
        rec = self.records.get(device)
        if rec is None or rec.status != STATUS_ACTIVE:
            return False
        return rec.owner == user and rec.pw_digest == digest(password)

    def abort(self, transfer_id: str, reason: str = "aborted") -> None:
        sess = self.sessions.get(transfer_id)
        if sess is None:
            raise RegistryError(f"unknown session {transfer_id!r}")
        if sess.phase == PHASE_FINAL:
            raise RegistryError(f"session {transfer_id!r} is finalized and immutable")
        if sess.phase == PHASE_ABORTED:
            return
        sess.phase = PHASE_ABORTED
        rec = self.records[sess.device]
        rec.status = STATUS_LOCKED
        rec.session = sess.transfer_id
        self._event("locked", sess.device, sess.transfer_id, reason)

    def _abort(self, sess: TransferSession, reason: str) -> None:
        self.abort(sess.transfer_id, reason)
        raise RegistryAbort(reason)

    def report_incomplete(self, device: str, reason: str) -> None:
        """Device-side report that a started transfer never completed.

        Trusted out-of-band signal enforcing the rule that an improperly
        finished process leaves the device unusable; it locks the record even
        when the server never saw the request, or saw it through to
        finalization while the pseudonym delivery failed.
        """
        rec = self.records.get(device)
        if rec is None:
            raise RegistryError(f"unknown device {device!r}")
        if rec.status == STATUS_LOCKED:
            return
        sess = self._live_session(device)
        if sess is not None:
            self.abort(sess.transfer_id, reason)
            return
        rec.status = STATUS_LOCKED
        self._event("locked", device, rec.session, reason)

    def tick(self, steps: int = 1) -> list[str]:
        """Advance the logical clock; expire and abort overdue sessions."""
        self.clock += steps
        expired = [s.transfer_id for s in self.sessions.values()
                   if s.phase in (PHASE_TICKET, PHASE_OTC) and s.deadline <= self.clock]
        for xfer in expired:
            self.abort(xfer, "deadline expired")
        return expired

    # -- persistence ---------------------------------------------------------

    def store(self, path: str) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for device in sorted(self.records):
                fh.write(self.records[device].to_json() + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str, seed: int = 0) -> "CksRegistry":
        reg = cls(seed=seed)
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.endswith("\n"):
                    raise RegistryError(f"{path}:{lineno}: truncated record")
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = OwnershipRecord.from_json(line)
                except (ValueError, TypeError) as exc:
                    raise RegistryError(f"{path}:{lineno}: corrupt record: {exc}") from exc
                if rec.device in reg.records:
                    raise RegistryError(f"{path}:{lineno}: duplicate device "
                                        f"{rec.device!r}")
                reg.records[rec.device] = rec
        return reg
