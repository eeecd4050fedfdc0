import json
from pathlib import Path

from oatproto.cli import main

from helpers import FIXTURES

GOLDEN = Path(__file__).parent / "golden"


def test_verify_transfer_model_is_safe(capsys):
    rc = main(["verify", str(FIXTURES / "oat.hlpsl"), "--sessions", "1",
               "--depth", "12"])
    out = capsys.readouterr()
    assert rc == 0
    assert out.out.startswith("SAFE (bounded)")
    assert "usera_server_na" in out.out and "userb_server_nb" in out.out
    assert "warning" in out.err  # the two documented quirks surface


def test_verify_vulnerable_fixture_reports_attack(capsys):
    rc = main(["verify", str(FIXTURES / "nspk.hlpsl"), "--sessions", "2",
               "--depth", "12"])
    out = capsys.readouterr()
    assert rc == 2
    assert out.out.startswith("ATTACK on bob_alice_na")
    assert '"kind":"delivered"' in out.out  # counterexample trace follows


def test_verify_fixed_fixture_is_safe(capsys):
    rc = main(["verify", str(FIXTURES / "nsl.hlpsl"), "--sessions", "2",
               "--depth", "12"])
    assert rc == 0
    assert capsys.readouterr().out.startswith("SAFE (bounded)")


def test_verify_parallel_jobs_flag(capsys):
    rc = main(["verify", str(FIXTURES / "oat.hlpsl"), "--jobs", "4"])
    assert rc == 0
    assert capsys.readouterr().out.startswith("SAFE (bounded)")


def test_verify_injective_flag_parses(capsys):
    rc = main(["verify", str(FIXTURES / "oat.hlpsl"), "--injective", "false"])
    assert rc == 0
    assert capsys.readouterr().out.startswith("SAFE (bounded)")


def test_verify_secret_flags(capsys):
    rc = main(["verify", str(FIXTURES / "oat.hlpsl"), "--secret", "pwa",
               "--secret", "na", "--secret", "nb"])
    assert rc == 0
    capsys.readouterr()
    rc = main(["verify", str(FIXTURES / "oat.hlpsl"), "--secret", "tempid"])
    out = capsys.readouterr()
    assert rc == 2
    assert out.out.startswith("ATTACK on secrecy_tempid")


def test_verify_missing_file_is_usage_error(capsys):
    rc = main(["verify", "no/such/file.hlpsl"])
    assert rc == 1
    assert "cannot read" in capsys.readouterr().err


def test_verify_parse_error_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.hlpsl"
    bad.write_text("role broken( end role")
    rc = main(["verify", str(bad)])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_run_writes_trace_and_registry(tmp_path, capsys):
    trace_path = tmp_path / "trace.jsonl"
    reg_path = tmp_path / "reg.jsonl"
    rc = main(["run", "--registry", str(FIXTURES / "registry.seed.json"),
               "--trace", str(trace_path), "--registry-out", str(reg_path),
               "--seed", "0"])
    assert rc == 0
    assert trace_path.exists() and reg_path.exists()
    owners = {json.loads(line)["device"]: json.loads(line)["owner"]
              for line in reg_path.read_text().splitlines()}
    assert owners["dev1"] == "b"


def test_run_golden_trace_bytes(tmp_path):
    trace_path = tmp_path / "trace.jsonl"
    rc = main(["run", "--registry", str(FIXTURES / "registry.seed.json"),
               "--trace", str(trace_path), "--seed", "0"])
    assert rc == 0
    assert trace_path.read_bytes() == (GOLDEN / "honest_trace.jsonl").read_bytes()


def test_run_with_drop_exits_aborted(tmp_path, capsys):
    rc = main(["run", "--registry", str(FIXTURES / "registry.seed.json"),
               "--trace", str(tmp_path / "t.jsonl"), "--drop-after", "3"])
    assert rc == 2
    assert "aborted" in capsys.readouterr().err


def test_attack_mitm_forward_shows_six_interceptions(tmp_path, capsys):
    trace_path = tmp_path / "t.jsonl"
    rc = main(["attack", "--scenario", "mitm-forward", "--seed", "7",
               "--registry", str(FIXTURES / "registry.seed.json"),
               "--trace", str(trace_path)])
    out = capsys.readouterr()
    assert rc == 0
    assert "6 interceptions" in out.err and "completed" in out.err
    kinds = [json.loads(line)["kind"]
             for line in trace_path.read_text().splitlines()]
    assert kinds.count("intercepted") == 6


def test_attack_drop_scenario_exits_two(tmp_path, capsys):
    rc = main(["attack", "--scenario", "drop-at-4", "--seed", "7",
               "--registry", str(FIXTURES / "registry.seed.json"),
               "--trace", str(tmp_path / "t.jsonl")])
    assert rc == 2


def test_attack_unknown_scenario_is_usage_error(capsys):
    rc = main(["attack", "--scenario", "quantum", "--trace", "-"])
    assert rc == 1


def test_msc_matches_golden(capsys):
    rc = main(["msc", str(GOLDEN / "honest_trace.jsonl")])
    out = capsys.readouterr().out
    assert rc == 0
    assert out == (GOLDEN / "honest.msc").read_text()


def test_msc_shows_six_arrows_in_order(capsys):
    main(["msc", str(GOLDEN / "honest_trace.jsonl")])
    out = capsys.readouterr().out
    arrows = [line for line in out.splitlines()
              if ("->" in line or "<-" in line) and not line.startswith("--")]
    labels = []
    for line in arrows:
        for tag in ("m1", "m2", "m3", "m4", "m5", "m6"):
            if tag in line:
                labels.append(tag)
    assert labels == ["m1", "m2", "m3", "m4", "m5", "m6"]
    header = out.splitlines()[0]
    assert header.index("UA") < header.index("CKS") < header.index("UB")


def test_msc_missing_trace_is_usage_error(capsys):
    rc = main(["msc", "no/such/trace.jsonl"])
    assert rc == 1


def test_msc_corrupt_trace_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "t.jsonl"
    bad.write_text('{"i": 0, "kind": "sent"\n')
    rc = main(["msc", str(bad)])
    assert rc == 1


def test_msc_empty_trace_renders_nothing(tmp_path, capsys):
    empty = tmp_path / "t.jsonl"
    empty.write_text("")
    rc = main(["msc", str(empty)])
    assert rc == 0
