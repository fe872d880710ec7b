"""Name grammar: parsing, rendering, and the rewrite algebra."""

import random

import pytest

from onhs.errors import (
    HandleStructureError,
    InvalidLabelError,
    LabelLengthError,
    LabelSyntaxError,
    LeadingZeroError,
    NotUnderRootError,
)
from onhs.handles import (
    Handle,
    HandleLabel,
    parse_handle,
    parse_handle_guess_root,
    parse_label,
)

ROOT = "handleroot.example.org"

GOLDEN_APEX = "h1g5k0061A38F9A3540B9.handleroot.example.org."
GOLDEN_LEAF = "h0k2.h0k3.h1g5k0061A38F9A3540B9.handleroot.example.org"


class TestGoldenNames:
    def test_apex_with_trailing_dot_round_trips_exactly(self):
        handle = parse_handle(GOLDEN_APEX, ROOT)
        assert handle.fqdn() == GOLDEN_APEX

    def test_leaf_without_trailing_dot_round_trips_exactly(self):
        handle = parse_handle(GOLDEN_LEAF, ROOT)
        assert handle.fqdn() == GOLDEN_LEAF

    def test_apex_label_fields(self):
        handle = parse_handle(GOLDEN_APEX, ROOT)
        label = handle.apex_label
        assert label.kind == "PK"
        assert label.algorithm_code == 5
        assert label.key_suffix == "0061A38F9A3540B9"

    def test_leaf_label_fields(self):
        handle = parse_handle(GOLDEN_LEAF, ROOT)
        # labels are stored apex first
        kinds = [lab.kind for lab in handle.labels]
        ordinals = [lab.ordinal for lab in handle.labels]
        assert kinds == ["PK", "IA", "IA"]
        assert ordinals == [None, "3", "2"]

    def test_leading_zeros_in_hex_suffix_survive(self):
        handle = parse_handle(GOLDEN_APEX, ROOT)
        assert handle.apex_label.key_suffix.startswith("00")

    def test_case_insensitive_parse_canonicalizes_hex_upper(self):
        lower = GOLDEN_APEX.lower()
        handle = parse_handle(lower, ROOT)
        assert handle.apex_label.key_suffix == "0061A38F9A3540B9"
        # grammar letters render lowercase, hex renders uppercase
        assert handle.labels[0].encode() == "h1g5k0061A38F9A3540B9"

    def test_mixed_case_equal_to_canonical(self):
        a = parse_handle(GOLDEN_APEX, ROOT)
        b = parse_handle("H0K2.h0k3.h1g5k0061a38f9a3540b9.HandleRoot.Example.Org",
                         ROOT)
        assert a == b.apex()
        assert b.name_key().endswith("handleroot.example.org")


class TestLabelGrammar:
    def test_pk_parses(self):
        label = parse_label("h1g5k0061A38F9A3540B9")
        assert (label.kind, label.algorithm_code) == ("PK", 5)

    def test_ia_and_oa_parse(self):
        assert parse_label("h0k2").kind == "IA"
        assert parse_label("h2k427").kind == "OA"

    def test_ordinal_zero_allowed(self):
        assert parse_label("h0k0").ordinal == "0"

    def test_ordinal_leading_zero_rejected(self):
        with pytest.raises(LeadingZeroError):
            parse_label("h0k01")

    def test_algorithm_code_leading_zero_rejected(self):
        with pytest.raises(LeadingZeroError):
            parse_label("h1g05k0061A38F9A3540B9")

    def test_algorithm_code_zero_rejected(self):
        with pytest.raises(LabelSyntaxError):
            parse_label("h1g0k0061A38F9A3540B9")

    def test_algorithm_code_too_big_rejected(self):
        with pytest.raises(LabelSyntaxError):
            parse_label("h1g256k0061A38F9A3540B9")

    def test_suffix_below_minimum_rejected(self):
        with pytest.raises(LabelLengthError):
            parse_label("h1g5k" + "A" * 13)

    def test_suffix_at_bounds_accepted(self):
        assert parse_label("h1g5k" + "A" * 14).key_suffix == "A" * 14
        assert parse_label("h1g5k" + "B" * 40).key_suffix == "B" * 40

    def test_suffix_above_maximum_rejected(self):
        with pytest.raises(LabelLengthError):
            parse_label("h1g5k" + "A" * 41)

    def test_ordinal_length_bounds(self):
        assert parse_label("h0k" + "9" * 60).ordinal == "9" * 60
        with pytest.raises(LabelLengthError):
            parse_label("h0k" + "9" * 61)

    def test_junk_rejected(self):
        for bad in ("", "h", "h3k1", "h0k", "h1g5k", "h0k2x", "www", "h1k5kABC",
                    "h0k-1", "h1g5kGG61A38F9A3540", "h0k1 "):
            with pytest.raises(InvalidLabelError):
                parse_label(bad)


class TestHandleStructure:
    def test_apex_must_be_pk(self):
        with pytest.raises(HandleStructureError):
            parse_handle(f"h0k2.{ROOT}", ROOT)

    def test_pk_below_apex_rejected(self):
        with pytest.raises(HandleStructureError):
            parse_handle(f"h1g5k{'A' * 14}.h1g5k{'B' * 14}.{ROOT}", ROOT)

    def test_root_itself_is_not_a_handle(self):
        with pytest.raises(HandleStructureError):
            parse_handle(ROOT, ROOT)

    def test_other_domain_rejected(self):
        with pytest.raises(NotUnderRootError):
            parse_handle("h1g5k0061A38F9A3540B9.elsewhere.example", ROOT)

    def test_name_length_limit(self):
        deep = ".".join(["h0k" + "9" * 58] * 4) + f".h1g5k{'A' * 14}.{ROOT}"
        with pytest.raises(HandleStructureError):
            parse_handle(deep, ROOT)

    def test_guess_root(self):
        handle = parse_handle_guess_root(GOLDEN_LEAF)
        assert handle.root_suffix_no_dot() == ROOT
        assert handle.fqdn() == GOLDEN_LEAF

    def test_guess_root_needs_some_root(self):
        with pytest.raises(NotUnderRootError):
            parse_handle_guess_root("h0k2.h1g5k" + "A" * 14)


class TestHandleAlgebra:
    def setup_method(self):
        self.apex = parse_handle(GOLDEN_APEX, ROOT)
        self.leaf = parse_handle(GOLDEN_LEAF, ROOT)

    def test_apex_and_parent(self):
        assert self.leaf.apex() == self.apex
        assert self.leaf.parent().fqdn_no_dot() == (
            "h0k3.h1g5k0061A38F9A3540B9.handleroot.example.org"
        )
        assert self.apex.parent() is None

    def test_child(self):
        child = self.apex.child(HandleLabel.ia("7"))
        assert child.fqdn_no_dot().startswith("h0k7.")
        assert child.parent() == self.apex

    def test_ancestry_runs_apex_to_leaf(self):
        chain = list(self.leaf.ancestry())
        assert chain[0] == self.apex
        assert chain[-1] == self.leaf
        assert len(chain) == 3

    def test_is_under(self):
        assert self.leaf.is_under(self.apex)
        assert not self.apex.is_under(self.leaf)
        assert not self.leaf.is_under(self.leaf)

    def test_replace_prefix_rewrites_suffix_branch(self):
        other = parse_handle(f"h1g5k{'C' * 16}.{ROOT}", ROOT)
        moved = self.leaf.replace_prefix(self.apex, other)
        assert moved.fqdn_no_dot() == f"h0k2.h0k3.h1g5k{'C' * 16}.{ROOT}"

    def test_replace_prefix_onto_deeper_target(self):
        other = parse_handle(f"h0k427.h1g5k{'C' * 16}.{ROOT}", ROOT)
        moved = self.leaf.replace_prefix(self.leaf.parent(), other)
        assert moved.fqdn_no_dot() == f"h0k2.h0k427.h1g5k{'C' * 16}.{ROOT}"

    def test_replace_prefix_of_self_is_target(self):
        other = parse_handle(f"h1g5k{'C' * 16}.{ROOT}", ROOT)
        assert self.leaf.replace_prefix(self.leaf, other) == other


class TestRandomizedGrammar:
    def test_valid_labels_round_trip(self):
        rng = random.Random(20260816)
        hexdigits = "0123456789ABCDEF"
        for _ in range(400):
            kind = rng.choice(["PK", "IA", "OA"])
            if kind == "PK":
                code = rng.randint(1, 255)
                suffix = "".join(rng.choice(hexdigits) for _ in range(rng.randint(14, 40)))
                text = f"h1g{code}k{suffix}"
            else:
                head = "h0k" if kind == "IA" else "h2k"
                length = rng.randint(1, 60)
                if length == 1:
                    ordinal = rng.choice("0123456789")
                else:
                    ordinal = rng.choice("123456789") + "".join(
                        rng.choice("0123456789") for _ in range(length - 1)
                    )
                text = head + ordinal
            label = parse_label(text)
            assert label.encode() == text
            # and parse is case-insensitive over the whole label
            assert parse_label(text.lower()).encode() == text

    def test_single_character_corruptions_never_parse_as_same_label(self):
        rng = random.Random(96)
        base = "h1g5k0061A38F9A3540B9"
        parsed = parse_label(base)
        for _ in range(300):
            pos = rng.randrange(len(base))
            repl = rng.choice("ghk0123456789XYZ.-")
            if repl.upper() == base[pos].upper():
                continue
            mutated = base[:pos] + repl + base[pos + 1:]
            try:
                other = parse_label(mutated)
            except InvalidLabelError:
                continue
            assert other != parsed

    def test_random_handles_round_trip(self):
        rng = random.Random(5)
        hexdigits = "0123456789ABCDEF"
        for _ in range(200):
            suffix = "".join(rng.choice(hexdigits) for _ in range(16))
            parts = [f"h1g5k{suffix}"]
            for _ in range(rng.randint(0, 3)):
                head = rng.choice(["h0k", "h2k"])
                parts.insert(0, head + str(rng.randint(0, 10 ** 6)))
            dot = rng.choice(["", "."])
            text = ".".join(parts) + f".{ROOT}{dot}"
            handle = parse_handle(text, ROOT)
            assert handle.fqdn() == text
