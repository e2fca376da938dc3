import base64
import json
import random
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnscovert.dns_model import QType, parse_record, split_hostname, format_log
from dnscovert.exceptions import UnsupportedCodec
from dnscovert.traffic_gen import (
    CODECS,
    BASE128_ALPHABET,
    BenignProfile,
    ToolProfile,
    decode_payload,
    encode_payload,
    encode_text,
    generate_benign,
    generate_covert,
    get_profile,
    ground_truth_document,
    is_keepalive,
    load_profile,
    merge_streams,
    rc4,
    write_generated,
)


class TestCodecs:
    @pytest.mark.parametrize("codec", CODECS)
    def test_roundtrip_100_payloads(self, codec):
        rng = random.Random(codec)
        for _ in range(100):
            data = bytes(rng.getrandbits(8) for _ in range(rng.randint(1, 300)))
            labels = encode_payload(data, codec, label_len=rng.randint(1, 63))
            assert all(1 <= len(lab) <= 63 for lab in labels)
            assert decode_payload(labels, codec) == data

    @pytest.mark.parametrize("codec", CODECS)
    def test_empty_payload(self, codec):
        assert encode_payload(b"", codec) == []

    def test_hex_hello(self):
        assert encode_payload(b"hello", "hex") == ["68656c6c6f"]

    def test_against_stdlib(self):
        data = b"\x00\xffcovert channel payload\x10"
        assert encode_text(data, "base32") == base64.b32encode(data).decode().rstrip("=").lower()
        assert encode_text(data, "base64url") == base64.urlsafe_b64encode(data).decode().rstrip("=")

    def test_rc4_known_vector(self):
        # classic published test vector
        assert rc4(b"Key", b"Plaintext").hex() == "bbf316e8d940af0ad3"

    def test_base128_alphabet_is_single_label_safe(self):
        assert len(BASE128_ALPHABET) == 128 and len(set(BASE128_ALPHABET)) == 128
        assert "." not in BASE128_ALPHABET

    def test_unsupported(self):
        with pytest.raises(UnsupportedCodec):
            encode_payload(b"x", "rot13")
        with pytest.raises(UnsupportedCodec):
            ToolProfile(name="x", codec="rot13", qtypes=("A",), domain="example.com")


@given(st.binary(max_size=400), st.sampled_from(CODECS), st.integers(1, 63))
@settings(max_examples=300)
def test_codec_roundtrip_property(data, codec, label_len):
    assert decode_payload(encode_payload(data, codec, label_len), codec) == data


class TestCovert:
    def test_iodine_ten_minutes(self):
        recs = generate_covert(get_profile("iodine"), 600, seed=7)
        assert len(recs) == 600
        assert all(len(r.qname) <= 253 for r in recs)
        assert all(len(lab) <= 63 for r in recs for lab in r.qname.split("."))
        assert len({r.qname for r in recs}) == len(recs)
        assert {r.qtype for r in recs} == {QType.NULL}

    def test_dnscat2_hex(self):
        prof = get_profile("dnscat2")
        for r in generate_covert(prof, 300, seed=1):
            sub = r.qname[: -len(prof.domain) - 1].replace(".", "")
            assert set(sub) <= set("0123456789abcdef")

    def test_dnscapy_keepalive_fraction(self):
        prof = get_profile("dnscapy")
        recs = generate_covert(prof, 3600, seed=3)
        frac = sum(is_keepalive(r, prof) for r in recs) / len(recs)
        assert abs(frac - prof.keepalive_fraction) < 0.03

    def test_all_profiles_valid_and_under_domain(self):
        from dnscovert.traffic_gen import ALL_PROFILES

        for name, prof in ALL_PROFILES.items():
            recs = generate_covert(prof, 120, seed=2)
            assert recs, name
            for r in recs:
                assert r.qname.endswith("." + prof.domain)
                split_hostname(r.qname)

    def test_payload_recoverable(self):
        prof = ToolProfile(name="t", codec="base32", qtypes=("TXT",), domain="lab.example.com", payload=b"secret!")
        rec = generate_covert(prof, 60, seed=0)[0]
        labels = rec.qname[: -len(prof.domain) - 1].split(".")
        raw = decode_payload(labels, "base32")
        assert raw[:4] == (0).to_bytes(4, "big")
        assert raw[4:11] == b"secret!"

    def test_deterministic(self):
        prof = get_profile("dns2tcp")
        assert generate_covert(prof, 300, seed=5) == generate_covert(prof, 300, seed=5)
        assert generate_covert(prof, 300, seed=5) != generate_covert(prof, 300, seed=6)

    def test_profile_json_roundtrip(self, tmp_path):
        prof = get_profile("dnscapy")
        path = tmp_path / "p.json"
        path.write_text(json.dumps(prof.to_dict()))
        assert load_profile(path) == prof

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            ToolProfile(name="x", codec="hex", qtypes=("A",), domain="example.com", hostname_budget=254)
        with pytest.raises(ValueError):
            ToolProfile(name="x", codec="hex", qtypes=(), domain="example.com")
        with pytest.raises(KeyError):
            get_profile("nope")


class TestBenign:
    def test_full_repeat_gives_single_name(self):
        recs = generate_benign(BenignProfile(query_rate=2000, repeat_factor=1.0), 600, seed=1)
        assert len({(r.qname, r.qtype) for r in recs}) == 1

    def test_deterministic(self):
        prof = BenignProfile(query_rate=3000)
        assert generate_benign(prof, 900, seed=4) == generate_benign(prof, 900, seed=4)

    def test_unique_ratio_one_hour(self):
        recs = generate_benign(BenignProfile(), 3600, seed=0)
        assert len(recs) == 25_000
        ratio = len({(r.qname.lower(), r.qtype) for r in recs}) / len(recs)
        target = 791 / 25_000
        assert abs(ratio - target) <= 0.1 * target

    def test_records_parse_back(self):
        recs = generate_benign(BenignProfile(query_rate=5000), 600, seed=2)
        recs = merge_streams(recs, generate_covert(get_profile("iodine"), 600, seed=2))
        for fmt in ("csv", "jsonl"):
            lines = format_log(recs, fmt).splitlines()
            back = [parse_record(line, format=fmt) for line in lines if not line.startswith("timestamp,")]
            assert back == recs
        assert all(a.timestamp <= b.timestamp for a, b in zip(recs, recs[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            BenignProfile(repeat_factor=1.5)
        with pytest.raises(ValueError):
            BenignProfile(qtype_mix=(("A", 0.5),))


def test_write_generated_with_truth(tmp_path):
    prof = get_profile("dnscat2")
    out = tmp_path / "g.csv"
    write_generated(generate_covert(prof, 60, seed=1), out, "csv", ground_truth_document([prof], ["10.0.66.6"]))
    truth = json.loads((tmp_path / "g.csv.truth.json").read_text())
    assert truth["attacker_domains"] == ["dnscat-c2.com"]
    assert out.read_text().count("\n") >= 30


def test_labels_random_looking():
    text = encode_text(bytes(range(256)), "base64")
    assert set(text) <= set(string.ascii_letters + string.digits + "-+")
