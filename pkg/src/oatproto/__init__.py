"""Ownership-transfer protocol toolkit.

Symbolic term algebra with Dolev-Yao deduction, an executable model of the
six-step device ownership transfer (roles, key-server registry, simulated
network with intruder scenarios), a front-end for the role-based protocol
description language, and a bounded model checker for authentication and
secrecy goals.
"""

from .term import (
    AEnc, Agent, Concat, Const, KnowledgeSet, Nonce, Password, PrivKey,
    PubKey, SEnc, Term, Var, analyze, can_derive, canonical_encode, cat,
    derivation, parse_term, uncat,
)
from .model import RoleInstance, RoleSpec, Transition, instantiate, step
from .hlpsl import SpecModel, lower, parse_hlpsl, pretty
from .checker import Attack, Bounds, Safe, check_correspondence, check_secrecy, explore
from .netsim import ChannelConfig, Trace, TransferSetup, run, run_session
from .registry import CksRegistry

__version__ = "0.1.0"

__all__ = [
    "AEnc", "Agent", "Concat", "Const", "KnowledgeSet", "Nonce", "Password",
    "PrivKey", "PubKey", "SEnc", "Term", "Var", "analyze", "can_derive",
    "canonical_encode", "cat", "derivation", "parse_term", "uncat",
    "RoleInstance", "RoleSpec", "Transition", "instantiate", "step",
    "SpecModel", "lower", "parse_hlpsl", "pretty",
    "Attack", "Bounds", "Safe", "check_correspondence", "check_secrecy",
    "explore", "ChannelConfig", "Trace", "TransferSetup", "run",
    "run_session", "CksRegistry",
]
