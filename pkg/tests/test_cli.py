import json
import shutil
from pathlib import Path

import pytest

from hmgsim import cli, grid, lora


def run(args):
    return cli.main(args)


def test_unknown_subcommand_exits_1():
    with pytest.raises(SystemExit) as exc:
        run(["bogus"])
    assert exc.value.code == cli.EXIT_INPUT


def test_no_subcommand_exits_1(capsys):
    assert run([]) == cli.EXIT_INPUT
    assert "usage" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path, capsys):
    code = run(["detect", "--replay", str(tmp_path / "nope.csv"),
                "--out", str(tmp_path)])
    assert code == cli.EXIT_INPUT
    assert "not found" in capsys.readouterr().err


def test_detect_reproduces_published_decision_column(tmp_path, capsys):
    code = run(["detect", "--out", str(tmp_path), "--no-figures"])
    assert code == 0
    rows = (tmp_path / "decisions.csv").read_text().strip().splitlines()
    assert rows[0].startswith("# seed=")
    header = rows[1].split(",")
    decisions = [r.split(",")[header.index("decision")] for r in rows[2:]]
    assert decisions == ["No decision", "No attack", "No decision",
                         "No attack", "No decision", "Attack"]


def test_detect_renders_figure(tmp_path):
    assert run(["detect", "--out", str(tmp_path)]) == 0
    fig = tmp_path / "sprt_walk.png"
    assert fig.exists() and fig.stat().st_size > 1000


def test_detect_byte_identical_reruns(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run(["detect", "--out", str(out1), "--no-figures", "--seed", "3"]) == 0
    assert run(["detect", "--out", str(out2), "--no-figures", "--seed", "3"]) == 0
    assert (out1 / "decisions.csv").read_bytes() == (out2 / "decisions.csv").read_bytes()


def test_detect_json_matches_csv_values(tmp_path):
    assert run(["detect", "--out", str(tmp_path / "c"), "--no-figures"]) == 0
    assert run(["detect", "--out", str(tmp_path / "j"), "--no-figures",
                "--format", "json"]) == 0
    csv_rows = (tmp_path / "c" / "decisions.csv").read_text().strip().splitlines()[2:]
    payload = json.loads((tmp_path / "j" / "decisions.json").read_text())
    json_rows = [",".join(str(v) for v in row) for row in payload["rows"]]
    assert csv_rows == json_rows


def test_schedule_emits_expected_shape(tmp_path):
    code = run(["schedule", "--out", str(tmp_path), "--iterations", "5",
                "--population", "6", "--seed", "1", "--no-figures"])
    assert code == 0
    rows = (tmp_path / "schedule.csv").read_text().strip().splitlines()
    assert rows[1] == "hour,unit_id,committed,p_kw,p_conv_kw,cost_cum"
    data = rows[2:]
    assert len(data) == 24 * 9  # 24 hours x 9 units
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[1] == "power_loss_kwh,total_cost,max_voltage_deviation_pu,feasible"


def test_schedule_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("HMGSIM_SEED", "9")
    code = run(["schedule", "--out", str(tmp_path), "--iterations", "2",
                "--population", "4", "--no-figures"])
    assert code == 0
    head = (tmp_path / "schedule.csv").read_text().splitlines()[0]
    assert "seed=9" in head


def test_attack_emits_table_and_totals(tmp_path):
    code = run(["attack", "--out", str(tmp_path), "--iterations", "5",
                "--population", "6", "--seed", "1", "--no-figures"])
    assert code == 0
    text = (tmp_path / "attack.csv").read_text()
    assert "load_shedding_kw" in text.splitlines()[1]
    assert "# total_shed_kwh=" in text
    assert "# ens_cost=" in text


def test_train_writes_model_and_metrics(tmp_path):
    code = run(["train", "--out", str(tmp_path), "--epochs", "1", "--seed", "0",
                "--no-figures"])
    assert code == 0
    model = json.loads((tmp_path / "model.json").read_text())
    assert model["arch"]["window"] == 14
    metrics = (tmp_path / "metrics.csv").read_text()
    for name in ("BLSTM", "LSTM", "ANN"):
        assert name in metrics


def test_calibrate_roundtrip(tmp_path, capsys):
    data = tmp_path / "hist.csv"
    ratios = [0.01, 0.02, 0.015, 0.03, 0.01, 0.02, 0.04, 0.01, 0.02, 0.01,
              0.12, 0.02]
    data.write_text("ratio\n" + "\n".join(str(r) for r in ratios) + "\n")
    assert run(["calibrate", "--data", str(data), "--out", str(tmp_path)]) == 0
    params = json.loads((tmp_path / "params.json").read_text())
    assert 0 < params["p0"] < 1
    assert params["ue"] >= max(ratios)


def test_codec_inspect_golden(capsys):
    golden = str(Path(grid._data_path("golden_reading.hex")))
    assert run(["codec-inspect", "--frame", golden]) == 0
    out = capsys.readouterr().out
    assert "meter 7" in out
    assert "PV  : absent" in out


def test_codec_inspect_sealed_frame(tmp_path, capsys):
    keys = lora.SessionKeys(nwk_key=bytes(range(16)), app_key=bytes(range(16, 32)))
    reading = lora.decode_reading(bytes.fromhex(
        Path(grid._data_path("golden_reading.hex")).read_text().strip()))
    frame = lora.seal(lora.AppFrame(dev_addr=b"\xaa\xbb\xcc\xdd", fcnt=3,
                                    fport=10,
                                    frm_payload=lora.encode_reading(reading)),
                      keys)
    frame_path = tmp_path / "frame.hex"
    frame_path.write_text(frame.to_bytes().hex())
    keys_path = tmp_path / "keys.json"
    keys_path.write_text(json.dumps({"nwk_key": keys.nwk_key.hex(),
                                     "app_key": keys.app_key.hex()}))
    assert run(["codec-inspect", "--frame", str(frame_path),
                "--keys", str(keys_path)]) == 0
    out = capsys.readouterr().out
    assert "UNCONFIRMED_DATA_UP" in out
    assert "fport=10" in out


def test_codec_inspect_rejects_non_hex(tmp_path, capsys):
    bad = tmp_path / "bad.hex"
    bad.write_text("zz-not-hex")
    assert run(["codec-inspect", "--frame", str(bad)]) == cli.EXIT_INPUT
