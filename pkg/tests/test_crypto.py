"""Keys, label derivation, and record-set signatures.

The label derivation tests check the package against the from-scratch
SHA-1 in oracles.py, so a digest bug in either implementation shows up as
a disagreement rather than a shared blind spot.
"""

import hashlib
import random

import pytest

from oracles import sha1_hex, SHA1_VECTORS

from onhs import crypto
from onhs.crypto import (
    PublicKey,
    RecordSignature,
    SignatureParams,
    canonical_rrset_bytes,
    derive_pk_label,
    generate_keypair,
    sign_rrset,
    verify_key_matches_label,
    verify_rrset,
)
from onhs.errors import (
    KeyFormatError,
    ParamsMismatchError,
    SuffixLengthError,
    UnsupportedAlgorithmError,
    WrongLabelKindError,
)
from onhs.handles import HandleLabel, parse_label
from onhs.records import ResourceRecord

NOW = "20260816120000"


def test_oracle_agrees_with_its_pinned_vectors():
    for data, want in SHA1_VECTORS:
        assert sha1_hex(data) == want


def make_record(owner="h0k1.h1g5kAABBCCDDEEFF0011.example.org",
                ttl=3600, rtype="A", rdata="10.0.0.1"):
    return ResourceRecord(owner=owner, ttl=ttl, rtype=rtype, rdata=rdata)


def make_params(secret, owner, ttl=3600,
                inception="20260816000000", expiration="20260830000000"):
    return SignatureParams(
        algorithm=secret.algorithm,
        label_count=len(owner.rstrip(".").split(".")),
        original_ttl=ttl,
        expiration=expiration,
        inception=inception,
        signer="h1g5kAABBCCDDEEFF0011.example.org",
    )


class TestLabelDerivation:
    def test_suffix_matches_independent_sha1_for_many_keys(self, keypool):
        rng = random.Random(11)
        for index in range(40):
            public, _ = keypool.key(index)
            suffix_len = rng.randint(14, 40)
            label = derive_pk_label(public, suffix_len)
            want = sha1_hex(public.key_bytes)[-suffix_len:]
            assert label.key_suffix == want
            assert label.kind == "PK"
            assert label.algorithm_code == public.algorithm
            assert verify_key_matches_label(public, label)

    def test_suffix_length_bounds(self, keypool):
        public, _ = keypool.key(0)
        with pytest.raises(SuffixLengthError):
            derive_pk_label(public, 13)
        with pytest.raises(SuffixLengthError):
            derive_pk_label(public, 41)
        assert len(derive_pk_label(public, 14).key_suffix) == 14
        assert len(derive_pk_label(public, 40).key_suffix) == 40

    def test_full_hash_suffix_is_whole_digest(self, keypool):
        public, _ = keypool.key(1)
        label = derive_pk_label(public, 40)
        assert label.key_suffix == hashlib.sha1(public.key_bytes).hexdigest().upper()

    def test_leading_zero_digest_chars_kept(self, keypool):
        # scan the pool for a key whose relevant suffix starts with 0;
        # the label must keep that zero (labels are text, not numbers)
        for index in range(60):
            public, _ = keypool.key(index)
            digest = sha1_hex(public.key_bytes)
            if digest[-16] == "0":
                label = derive_pk_label(public, 16)
                assert label.key_suffix.startswith("0")
                assert label.encode().endswith(label.key_suffix)
                return
        pytest.skip("pool produced no digest with a zero at position -16")

    def test_wrong_key_does_not_match_label(self, keypool):
        pub_a, _ = keypool.key(0)
        pub_b, _ = keypool.key(1)
        label = derive_pk_label(pub_a, 16)
        assert not verify_key_matches_label(pub_b, label)

    def test_wrong_algorithm_code_does_not_match(self, keypool):
        public, _ = keypool.key(0)
        label = derive_pk_label(public, 16)
        other = HandleLabel.pk(8, label.key_suffix)
        assert not verify_key_matches_label(public, other)

    def test_non_pk_label_is_a_usage_error(self, keypool):
        public, _ = keypool.key(0)
        with pytest.raises(WrongLabelKindError):
            verify_key_matches_label(public, parse_label("h0k2"))

    def test_distinct_keys_distinct_hashes(self, keypool):
        hashes = {keypool.key(i)[0].key_hash_hex() for i in range(20)}
        assert len(hashes) == 20


class TestKeyMaterial:
    def test_key_bytes_header(self, keypool):
        public, _ = keypool.key(0)
        assert public.key_bytes[:4] == bytes([1, 0, 3, public.algorithm])

    def test_from_key_bytes_round_trip(self, keypool):
        public, _ = keypool.key(0)
        again = PublicKey.from_key_bytes(public.key_bytes)
        assert again == public

    def test_bad_header_rejected(self, keypool):
        public, _ = keypool.key(0)
        mangled = b"\x00\x00" + public.key_bytes[2:]
        with pytest.raises(KeyFormatError):
            PublicKey.from_key_bytes(mangled)

    def test_unknown_algorithm_rejected(self):
        with pytest.raises(UnsupportedAlgorithmError):
            generate_keypair(99)

    def test_both_algorithms_sign_and_verify(self):
        for alg in (crypto.RSA_SHA1, crypto.RSA_SHA256):
            public, secret = generate_keypair(alg, bits=1024)
            sig = secret.sign(b"hello")
            assert public.verify(sig, b"hello")
            assert not public.verify(sig, b"hellp")

    def test_key_files_round_trip(self, keypool, tmp_path):
        public, secret = keypool.key(2)
        pub_path = tmp_path / "k.pub"
        sec_path = tmp_path / "k.sec"
        crypto.save_public_key(pub_path, public)
        crypto.save_secret_key(sec_path, secret)
        assert crypto.load_public_key(pub_path) == public
        loaded = crypto.load_secret_key(sec_path)
        assert loaded.public_key() == public
        # the secret file carries the public half on line two
        assert crypto.load_public_key(sec_path) == public

    def test_key_file_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.key"
        path.write_text("5\nnot base64!!\n")
        with pytest.raises(KeyFormatError):
            crypto.load_public_key(path)
        path.write_text("hello\n")
        with pytest.raises(KeyFormatError):
            crypto.load_public_key(path)


class TestTimestamps:
    def test_stamp_shape_enforced(self):
        crypto.check_stamp("20050415223412")
        for bad in ("2005041522341", "200504152234120", "2005-04-15T22:34",
                    "abcdefghijklmn", ""):
            with pytest.raises(ParamsMismatchError):
                crypto.check_stamp(bad)

    def test_stamp_add_rolls_calendar(self):
        assert crypto.stamp_add("20050401223412", 14 * 86400) == "20050415223412"
        assert crypto.stamp_add("20231231235959", 1) == "20240101000000"

    def test_stamps_compare_as_strings(self):
        assert "20050401223412" < "20050415223412" < "20260816000000"


class TestSignatures:
    def test_sign_verify_closure(self, keypool):
        public, secret = keypool.key(0)
        record = make_record()
        params = make_params(secret, record.owner)
        sig = sign_rrset([record], secret, params)
        assert verify_rrset([record], sig, public, NOW).ok

    def test_verify_fails_with_other_key(self, keypool):
        public_b, _ = keypool.key(1)
        _, secret = keypool.key(0)
        record = make_record()
        sig = sign_rrset([record], secret, make_params(secret, record.owner))
        result = verify_rrset([record], sig, public_b, NOW)
        assert not result.ok
        assert result.reason == crypto.REJECT_BAD_SIGNATURE

    def test_expiration_boundary_is_exclusive(self, keypool):
        public, secret = keypool.key(0)
        record = make_record()
        params = make_params(
            secret, record.owner,
            inception="20050401223412", expiration="20050415223412",
        )
        sig = sign_rrset([record], secret, params)
        assert verify_rrset([record], sig, public, "20050415223411").ok
        at_edge = verify_rrset([record], sig, public, "20050415223412")
        assert not at_edge.ok and at_edge.reason == crypto.REJECT_EXPIRED

    def test_inception_boundary_is_inclusive(self, keypool):
        public, secret = keypool.key(0)
        record = make_record()
        params = make_params(
            secret, record.owner,
            inception="20050401223412", expiration="20050415223412",
        )
        sig = sign_rrset([record], secret, params)
        assert verify_rrset([record], sig, public, "20050401223412").ok
        early = verify_rrset([record], sig, public, "20050401223411")
        assert not early.ok and early.reason == crypto.REJECT_NOT_YET_VALID

    def test_inception_after_expiration_rejected(self, keypool):
        _, secret = keypool.key(0)
        with pytest.raises(ParamsMismatchError):
            SignatureParams(
                algorithm=secret.algorithm, label_count=4, original_ttl=60,
                expiration="20050401223412", inception="20050415223412",
                signer="x.example",
            )

    def test_signature_covers_ttl(self, keypool):
        public, secret = keypool.key(0)
        record = make_record(ttl=3600)
        sig = sign_rrset([record], secret, make_params(secret, record.owner))
        slower = make_record(ttl=60)
        result = verify_rrset([slower], sig, public, NOW)
        assert not result.ok

    def test_record_order_does_not_matter(self, keypool):
        public, secret = keypool.key(0)
        rec_a = make_record(rdata="10.0.0.1")
        rec_b = make_record(rdata="10.0.0.2")
        params = make_params(secret, rec_a.owner)
        assert canonical_rrset_bytes([rec_a, rec_b], params) == canonical_rrset_bytes(
            [rec_b, rec_a], params
        )
        sig = sign_rrset([rec_a, rec_b], secret, params)
        assert verify_rrset([rec_b, rec_a], sig, public, NOW).ok

    def test_label_count_must_match_owner(self, keypool):
        _, secret = keypool.key(0)
        record = make_record()
        params = make_params(secret, record.owner)
        wrong = SignatureParams(
            algorithm=params.algorithm, label_count=params.label_count + 1,
            original_ttl=params.original_ttl, expiration=params.expiration,
            inception=params.inception, signer=params.signer,
        )
        with pytest.raises(ParamsMismatchError):
            sign_rrset([record], secret, wrong)

    def test_params_mutation_detected(self, keypool):
        public, secret = keypool.key(0)
        record = make_record()
        params = make_params(secret, record.owner)
        sig = sign_rrset([record], secret, params)
        bumped = SignatureParams(
            algorithm=params.algorithm, label_count=params.label_count,
            original_ttl=params.original_ttl + 1, expiration=params.expiration,
            inception=params.inception, signer=params.signer,
        )
        forged = RecordSignature(params=bumped, signature_bytes=sig.signature_bytes)
        result = verify_rrset([record], forged, public, NOW)
        assert not result.ok

    def test_signer_mutation_detected(self, keypool):
        public, secret = keypool.key(0)
        record = make_record()
        params = make_params(secret, record.owner)
        sig = sign_rrset([record], secret, params)
        moved = SignatureParams(
            algorithm=params.algorithm, label_count=params.label_count,
            original_ttl=params.original_ttl, expiration=params.expiration,
            inception=params.inception, signer="h1g5kAABBCCDDEEFF0012.example.org",
        )
        forged = RecordSignature(params=moved, signature_bytes=sig.signature_bytes)
        assert not verify_rrset([record], forged, public, NOW).ok

    def test_every_single_octet_flip_in_signature_fails(self, keypool):
        public, secret = keypool.key(0)
        record = make_record()
        sig = sign_rrset([record], secret, make_params(secret, record.owner))
        rng = random.Random(3)
        raw = bytearray(sig.signature_bytes)
        for _ in range(40):
            pos = rng.randrange(len(raw))
            flipped = bytearray(raw)
            flipped[pos] ^= 1 + rng.randrange(255)
            forged = RecordSignature(params=sig.params, signature_bytes=bytes(flipped))
            assert not verify_rrset([record], forged, public, NOW).ok

    def test_rdata_mutation_fails(self, keypool):
        public, secret = keypool.key(0)
        record = make_record(rdata="10.0.0.1")
        sig = sign_rrset([record], secret, make_params(secret, record.owner))
        swapped = make_record(rdata="10.0.0.2")
        assert not verify_rrset([swapped], sig, public, NOW).ok

    def test_signing_is_deterministic(self, keypool):
        _, secret = keypool.key(0)
        record = make_record()
        params = make_params(secret, record.owner)
        sig1 = sign_rrset([record], secret, params)
        sig2 = sign_rrset([record], secret, params)
        assert sig1.signature_bytes == sig2.signature_bytes
