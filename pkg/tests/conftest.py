"""Shared fixtures: a session key pool and the worked-example zone setup.

Key generation dominates test time, so tests draw RSA-1024 keys from one
session-scoped pool instead of generating their own. 1024-bit keys are
fine here: nothing in the tests depends on key strength, only on the
signing and hashing relationships.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import pytest

from onhs import crypto
from onhs.crypto import PublicKey, SecretKey
from onhs.handles import Handle, HandleLabel, parse_handle
from onhs import server as srv

ROOT = "handleroot.example.org"
TEST_BITS = 1024
FIXED_NOW = "20260816120000"


class KeyPool:
    """Hands out deterministic-size RSA keys, generating lazily."""

    def __init__(self, bits: int = TEST_BITS):
        self.bits = bits
        self._keys: List[Tuple[PublicKey, SecretKey]] = []

    def key(self, index: int) -> Tuple[PublicKey, SecretKey]:
        while len(self._keys) <= index:
            self._keys.append(crypto.generate_keypair(crypto.RSA_SHA1, bits=self.bits))
        return self._keys[index]

    def fresh(self) -> Tuple[PublicKey, SecretKey]:
        pair = crypto.generate_keypair(crypto.RSA_SHA1, bits=self.bits)
        self._keys.append(pair)
        return pair


@pytest.fixture(scope="session")
def keypool() -> KeyPool:
    return KeyPool()


@dataclass
class ExampleZones:
    """The three-owner setup from the worked examples, with live keys.

    Owner 1 has addresses below an intermediate handle, and one child that
    was transferred to owner 3. Owner 2's key is compromised. Addresses
    reuse the documented values so tests read like the examples.
    """

    root: str
    server: srv.HandleServer
    secrets: Dict[str, SecretKey]
    apex1: Handle
    apex2: Handle
    apex3: Handle
    leaf_2_3: Handle       # h0k2.h0k3.<apex1> -> 192.253.254.63
    leaf_3_3: Handle       # h0k3.h0k3.<apex1> -> 192.253.254.65
    transferred: Handle    # h0k1.<apex1> -> DNAME h0k427.<apex3>
    new_home: Handle       # h0k427.<apex3> -> 192.253.254.77
    new_leaf: Handle       # h0k5.h0k427.<apex3> -> 192.253.254.78
    old_leaf: Handle       # h0k5.h0k1.<apex1>, reachable only via rewrite
    under_compromised: Handle  # h0k9.<apex2>, created before the compromise


def build_example_zones(keypool: KeyPool, now: str = FIXED_NOW) -> ExampleZones:
    _, sec1 = keypool.key(0)
    _, sec2 = keypool.key(1)
    _, sec3 = keypool.key(2)
    server = srv.HandleServer(ROOT)

    claim1 = srv.make_claim(sec1, ROOT, 16, 1, now=now)
    claim2 = srv.make_claim(sec2, ROOT, 16, 1, now=now)
    claim3 = srv.make_claim(sec3, ROOT, 16, 1, now=now)
    for claim in (claim1, claim2, claim3):
        verdict = server.apply_update(claim, now=now)
        assert verdict.accepted, verdict
    apex1 = parse_handle(claim1.target, ROOT)
    apex2 = parse_handle(claim2.target, ROOT)
    apex3 = parse_handle(claim3.target, ROOT)

    ia = HandleLabel.ia
    mid = apex1.child(ia("3"))
    leaf_2_3 = mid.child(ia("2"))
    leaf_3_3 = mid.child(ia("3"))
    transferred = apex1.child(ia("1"))
    old_leaf = transferred.child(ia("5"))
    new_home = apex3.child(ia("427"))
    new_leaf = new_home.child(ia("5"))
    under_compromised = apex2.child(ia("9"))

    steps = [
        srv.make_create_child(sec1, mid, 2, now=now),
        srv.make_create_child(sec1, leaf_2_3, 3, now=now),
        srv.make_assign(sec1, leaf_2_3, "192.253.254.63", 4, now=now),
        srv.make_create_child(sec1, leaf_3_3, 5, now=now),
        srv.make_assign(sec1, leaf_3_3, "192.253.254.65", 6, now=now),
        srv.make_create_child(sec1, transferred, 7, now=now),
        srv.make_create_child(sec2, under_compromised, 2, now=now),
        srv.make_assign(sec2, under_compromised, "192.253.254.80", 3, now=now),
        srv.make_create_child(sec3, new_home, 2, now=now),
        srv.make_assign(sec3, new_home, "192.253.254.77", 3, now=now),
        srv.make_create_child(sec3, new_leaf, 4, now=now),
        srv.make_assign(sec3, new_leaf, "192.253.254.78", 5, now=now),
        srv.make_transfer(sec1, transferred, new_home, 8, now=now),
        srv.make_compromise(sec2, apex2, "01/04/2003", 4, now=now),
    ]
    for msg in steps:
        verdict = server.apply_update(msg, now=now)
        assert verdict.accepted, (msg.action, msg.target, verdict)

    return ExampleZones(
        root=ROOT,
        server=server,
        secrets={"k1": sec1, "k2": sec2, "k3": sec3},
        apex1=apex1,
        apex2=apex2,
        apex3=apex3,
        leaf_2_3=leaf_2_3,
        leaf_3_3=leaf_3_3,
        transferred=transferred,
        new_home=new_home,
        new_leaf=new_leaf,
        old_leaf=old_leaf,
        under_compromised=under_compromised,
    )


@pytest.fixture()
def example_zones(keypool) -> ExampleZones:
    return build_example_zones(keypool)
