"""Plain-text message sequence charts from recorded traces.

Three lifelines (UA, CKS, UB) in the layout of the transfer diagram; any
other actors appearing in a trace get extra lanes on the right.  Each sent
message draws one arrow, labelled with its protocol tag when known and a
truncated canonical term otherwise.  An arrow gains ``*`` when the message
was intercepted and ``x`` when it was never delivered.  Registry actions
appear as side notes.
"""

from __future__ import annotations

from .netsim import Trace

_LANE_WIDTH = 26
_KNOWN = {"a": "UA", "cks": "CKS", "b": "UB", "i": "I"}
_PREFERRED = ["UA", "CKS", "UB"]


def _label_for(actor: str) -> str:
    return _KNOWN.get(actor, actor.upper())


def _short(term: str, limit: int = 16) -> str:
    return term if len(term) <= limit else term[:limit - 2] + ".."


def render(trace: Trace) -> str:
    actors: list[str] = []
    for ev in trace.events:
        for actor in (ev.sender, ev.recipient):
            if actor and actor != "*" and actor not in actors:
                actors.append(actor)
    labels = [_label_for(a) for a in actors]
    order = sorted(range(len(labels)),
                   key=lambda i: (_PREFERRED.index(labels[i])
                                  if labels[i] in _PREFERRED else len(_PREFERRED) + i))
    actors = [actors[i] for i in order]
    labels = [labels[i] for i in order]
    lane = {a: i for i, a in enumerate(actors)}
    width = _LANE_WIDTH * max(len(actors), 1)

    def pos(i: int) -> int:
        return 2 + i * _LANE_WIDTH

    def baseline() -> list[str]:
        row = [" "] * width
        for i in range(len(actors)):
            row[pos(i)] = "|"
        return row

    lines: list[str] = []
    header = [" "] * width
    for i, label in enumerate(labels):
        for j, ch in enumerate(label):
            if pos(i) + j < width:
                header[pos(i) + j] = ch
    lines.append("".join(header).rstrip())
    lines.append("".join(baseline()).rstrip())

    delivered = [ev for ev in trace.events if ev.kind == "delivered"]
    intercepted = {ev.term for ev in trace.events if ev.kind == "intercepted"}

    for ev in trace.events:
        if ev.kind in ("sent", "delivered"):
            if ev.sender not in lane or ev.recipient not in lane:
                continue
            src, dst = lane[ev.sender], lane[ev.recipient]
            label = ev.msg or _short(ev.term or "")
            if ev.term in intercepted:
                label += " *"
            if not any(d.term == ev.term and d.recipient == ev.recipient
                       for d in delivered):
                label += " x"
            row = baseline()
            lo, hi = sorted((pos(src), pos(dst)))
            for col in range(lo + 1, hi):
                row[col] = "-"
            if dst > src:
                row[hi - 1] = ">"
            else:
                row[lo + 1] = "<"
            text = label[:hi - lo - 3]
            start = lo + 1 + ((hi - lo - 1) - len(text)) // 2
            for j, ch in enumerate(text):
                row[start + j] = ch
            lines.append("".join(row).rstrip())
            lines.append("".join(baseline()).rstrip())
        elif ev.kind == "registry":
            note = f"-- cks: {ev.action} {ev.device}"
            if ev.session:
                note += f" ({ev.session})"
            if ev.detail:
                note += f": {ev.detail}"
            lines.append(note)
    return "\n".join(lines) + "\n"
