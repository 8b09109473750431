"""Attribute-gated firmware dissemination over a consortium ledger.

The package stacks four layers:

- pairing and signature primitives (``bn254``, ``bls``, ``mimc``),
- decentralized attribute-based encryption with policy compilation
  (``policy``, ``maabe``),
- the firmware exchange protocol and its on-chain settlement
  (``exchange``, ``chain``),
- agent behaviours and the discrete-event network simulator
  (``agents``, ``simulator``).
"""

__version__ = "0.1.0"
