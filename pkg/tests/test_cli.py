"""End-to-end runs of the experiment command line on tiny configs."""

import os

import numpy as np
import yaml

from uwlink.cli import main
from uwlink.metrics import load_metrics_csv
from uwlink.wavebank import load_wavebank


def _base_config(out_dir) -> dict:
    return {
        "experiment": "exp",
        "profile": "watermark-8k",
        "seed": 5,
        "trials": 2,
        "out": str(out_dir),
        "codebook": {"synthetic": {"n_clusters": 4, "cluster_size": 4, "seed": 2}},
        "wavebank": {"init": {"L": 8, "seed": 3}},
        "channels": [
            {"id": "ideal", "kind": "ideal"},
            {"id": "awgn", "kind": "awgn"},
        ],
        "snr_grid": [10.0, 30.0],
        "systems": [
            {"id": "wb", "type": "wavebank"},
            {"id": "raw", "type": "digital", "modulation": "bpsk"},
        ],
        "eval": {"n_tokens": 32},
    }


def _write(tmp_path, cfg, name="exp.yaml") -> str:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def _tree_bytes(root) -> dict:
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in sorted(names):
            full = os.path.join(dirpath, name)
            out[os.path.relpath(full, root)] = open(full, "rb").read()
    return out


def test_info_writes_profile_summary(tmp_path, capsys):
    cfg = _base_config(tmp_path / "out")
    assert main(["info", "--config", _write(tmp_path, cfg)]) == 0
    text = (tmp_path / "out" / "exp" / "info.txt").read_text()
    assert "raw rate: 2309.8" in text
    assert "L=10" in text and "14.44" in text
    assert capsys.readouterr().out == text


def test_eval_grid_rows_and_ideal_accuracy(tmp_path):
    cfg = _base_config(tmp_path / "out")
    cfg["systems"].append({"id": "analog", "type": "softcast", "budget": 300})
    cfg["eval"]["image"] = {"n": 32, "seed": 3, "sigma": 3.0}
    assert main(["eval", "--config", _write(tmp_path, cfg)]) == 0

    exp = tmp_path / "out" / "exp"
    with open(exp / "summary.csv") as fh:
        rows = fh.read().strip().split("\n")
    assert len(rows) - 1 == 3 * 2 * 2  # systems x channels x snrs

    for system in ("wb", "raw"):
        for record in load_metrics_csv(str(exp / system / "ideal.csv")):
            assert record.token_accuracy == 1.0
            assert record.semantic_l2 == 0.0
    analog = load_metrics_csv(str(exp / "analog" / "ideal.csv"))
    assert len(analog) == 2
    for record in analog:
        assert record.psnr_db is not None and record.psnr_db > 20.0
        assert record.ssim is not None and 0.0 < record.ssim <= 1.0


def test_eval_trials_flag_overrides_config(tmp_path):
    cfg = _base_config(tmp_path / "out")
    cfg["channels"] = [{"id": "ideal", "kind": "ideal"}]
    cfg["snr_grid"] = [30.0]
    path = _write(tmp_path, cfg)
    assert main(["eval", "--config", path, "--trials", "1"]) == 0
    with open(tmp_path / "out" / "exp" / "summary.csv") as fh:
        rows = fh.read().strip().split("\n")[1:]
    assert all(row.split(",")[3] == "1" for row in rows)


def test_missing_codebook_file_exits_2(tmp_path, capsys):
    cfg = _base_config(tmp_path / "out")
    cfg["codebook"] = {"path": str(tmp_path / "missing.swcb")}
    assert main(["eval", "--config", _write(tmp_path, cfg)]) == 2
    assert "codebook.path" in capsys.readouterr().err


def test_unknown_synthetic_key_exits_2(tmp_path, capsys):
    cfg = _base_config(tmp_path / "out")
    cfg["codebook"] = {"synthetic": {"K": 16}}
    assert main(["eval", "--config", _write(tmp_path, cfg)]) == 2
    assert "codebook.synthetic.K" in capsys.readouterr().err


def test_train_then_eval_reads_back_the_bank(tmp_path):
    cfg = _base_config(tmp_path / "out")
    cfg["train"] = {
        "steps": 5,
        "channel": "awgn",
        "learning_rate": 0.003,
        "batch_frames": 2,
        "snr_schedule": [[15.0, 1.0]],
        "checkpoint_every": 3,
    }
    assert main(["train", "--config", _write(tmp_path, cfg)]) == 0

    tdir = tmp_path / "out" / "exp" / "train"
    bank = load_wavebank(str(tdir / "final.swwb"))
    assert bank.K == 16 and bank.L == 8
    with open(tdir / "history.csv") as fh:
        assert len(fh.read().strip().split("\n")) - 1 == 5
    assert (tdir / "checkpoints" / "step_000003.swwb").exists()

    cfg2 = _base_config(tmp_path / "out2")
    cfg2["channels"] = [{"id": "ideal", "kind": "ideal"}]
    cfg2["snr_grid"] = [30.0]
    cfg2["systems"] = [
        {"id": "wbt", "type": "wavebank",
         "bank": {"path": str(tdir / "final.swwb")}}
    ]
    assert main(["eval", "--config", _write(tmp_path, cfg2, "eval.yaml")]) == 0
    records = load_metrics_csv(str(tmp_path / "out2" / "exp" / "wbt" / "ideal.csv"))
    assert records[0].token_accuracy == 1.0


def test_train_same_seed_byte_identical(tmp_path):
    cfg = _base_config(tmp_path / "a")
    cfg["train"] = {"steps": 4, "channel": "awgn", "batch_frames": 2}
    path_a = _write(tmp_path, cfg, "a.yaml")
    cfg["out"] = str(tmp_path / "b")
    path_b = _write(tmp_path, cfg, "b.yaml")
    assert main(["train", "--config", path_a]) == 0
    assert main(["train", "--config", path_b]) == 0
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


def test_eval_byte_identical_across_runs_and_jobs(tmp_path):
    cfg = _base_config(tmp_path / "a")
    path = _write(tmp_path, cfg)
    assert main(["eval", "--config", path]) == 0
    assert main(["eval", "--config", path, "--out", str(tmp_path / "b")]) == 0
    assert main(["eval", "--config", path, "--out", str(tmp_path / "c"),
                 "--jobs", "2"]) == 0
    ref = _tree_bytes(tmp_path / "a")
    assert _tree_bytes(tmp_path / "b") == ref
    assert _tree_bytes(tmp_path / "c") == ref


def test_multicast_rows_and_aggregate(tmp_path):
    cfg = _base_config(tmp_path / "out")
    cfg["channels"] += [
        {"id": "fir-a", "kind": "fir", "taps": [[1.0, 0.0], [0.35, -0.2]],
         "group": "pod"},
        {"id": "fir-b", "kind": "fir", "taps": [[1.0, 0.0], [0.1, 0.3]],
         "group": "pod"},
    ]
    cfg["multicast"] = {"group": "pod", "system": "wb", "snr_db": 25.0,
                        "n_tokens": 48}
    assert main(["multicast", "--config", _write(tmp_path, cfg)]) == 0

    records = load_metrics_csv(
        str(tmp_path / "out" / "exp" / "multicast" / "pod.csv")
    )
    assert [r.channel_id for r in records] == ["fir-a", "fir-b", "pod:mean"]
    assert all(r.system_id == "wb" for r in records)
    members = records[:-1]
    agg = records[-1]
    assert agg.token_accuracy == np.mean([r.token_accuracy for r in members])
    assert agg.ber == np.mean([r.ber for r in members])


def test_ber_schema_and_fec_gain(tmp_path):
    cfg = _base_config(tmp_path / "out")
    cfg["channels"] = [{"id": "awgn", "kind": "awgn"}]
    cfg["snr_grid"] = [5.0]
    cfg["ber"] = {"modulations": ["bpsk"], "fec_rates": [None, 0.5],
                  "n_tokens": 150, "fec_n": 256}
    assert main(["ber", "--config", _write(tmp_path, cfg)]) == 0

    with open(tmp_path / "out" / "exp" / "ber" / "awgn.csv") as fh:
        lines = fh.read().strip().split("\n")
    assert lines[0] == "channel,snr_db,modulation,fec,ber_pre,ber_post"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 2
    uncoded, coded = rows
    assert uncoded[3] == "" and uncoded[4] == uncoded[5]
    assert coded[3] == "0.5" and float(coded[5]) <= float(coded[4])


def test_gradcheck_report_and_corrupt_negative(tmp_path):
    cfg = _base_config(tmp_path / "out")
    cfg["channels"].append(
        {"id": "fir", "kind": "fir", "taps": [[1.0, 0.0], [0.3, 0.2]]}
    )
    cfg["gradcheck"] = {"K": 8, "L": 8, "n_coords": 8,
                        "channels": ["ideal", "fir"]}
    path = _write(tmp_path, cfg)
    assert main(["gradcheck", "--config", path]) == 0
    report = (tmp_path / "out" / "exp" / "gradcheck" / "report.txt").read_text()
    lines = report.strip().split("\n")
    assert len(lines) == 2 and all("PASS" in line for line in lines)

    cfg["gradcheck"]["corrupt_adjoint"] = True
    assert main(["gradcheck", "--config", _write(tmp_path, cfg)]) == 3
