import json
import os

import numpy as np
import pytest

from mcseg.cli import main
from mcseg.evaluation import confusion, global_error
from mcseg.volume import load_volume

MEANS = [[0.0, 0.0, 0.0], [2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    return str(path)


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Phantom data + a trained model, produced through the CLI itself."""
    root = tmp_path_factory.mktemp("cliws")
    spec = _write_json(
        root / "spec.json",
        {
            "shape": [24, 24, 24],
            "class_means": MEANS,
            "noise_sigma": 0.75,
            "smoothness": 0.2,
            "seed": 3,
        },
    )
    data = str(root / "data")
    assert main([
        "phantom", "--spec", spec, "--subjects", "2",
        "--deform-amplitude", "1.2", "--extra-noise", "0.3", "--out", data,
    ]) == 0
    train_cfg = _write_json(
        root / "train.json",
        {
            "template_volume": f"{data}/template",
            "template_labels": f"{data}/template_labels",
            "per_class_cap": 150,
        },
    )
    model_dir = str(root / "model")
    assert main(["train", "--config", train_cfg, "--out", model_dir]) == 0
    return {
        "root": root,
        "data": data,
        "model": f"{model_dir}/model",
        "spec": spec,
    }


def _seg_cfg(ws, path, **extra):
    doc = {
        "model": ws["model"],
        "subject_volume": f"{ws['data']}/subject_00",
        "solver": {"tol": 1e-3, "max_iters": 400},
    }
    doc.update(extra)
    return _write_json(path, doc)


# --- phantom ------------------------------------------------------------------


def test_phantom_files_load_back(ws):
    data = ws["data"]
    vol = load_volume(f"{data}/template")
    lab = load_volume(f"{data}/template_labels")
    assert vol.shape.as_tuple() == (24, 24, 24)
    assert vol.channels == 3
    assert lab.shape == vol.shape
    assert set(np.unique(lab.labels)) <= {0, 1, 2, 3}
    for i in range(2):
        sv = load_volume(f"{data}/subject_{i:02d}")
        sl = load_volume(f"{data}/subject_{i:02d}_labels")
        assert sv.shape == vol.shape and sl.shape == vol.shape
    # spec echo is itself a loadable spec
    assert json.load(open(f"{data}/spec.json"))["seed"] == 3


def test_phantom_deterministic(ws, tmp_path):
    out = str(tmp_path / "again")
    assert main([
        "phantom", "--spec", ws["spec"], "--subjects", "1",
        "--deform-amplitude", "1.2", "--extra-noise", "0.3", "--out", out,
    ]) == 0
    for stem in ("template", "template_labels", "subject_00", "subject_00_labels"):
        assert _read_bytes(f"{out}/{stem}.mcv.raw") == _read_bytes(
            f"{ws['data']}/{stem}.mcv.raw"
        )


def test_phantom_canonical(tmp_path):
    out = str(tmp_path / "canon")
    assert main(["phantom", "--canonical", "--out", out]) == 0
    vol = load_volume(f"{out}/template")
    assert vol.shape.as_tuple() == (64, 64, 64)


def test_phantom_arg_validation(tmp_path, capsys):
    assert main(["phantom", "--out", str(tmp_path)]) == 2
    assert main(["phantom", "--canonical", "--spec", "x", "--out", str(tmp_path)]) == 2
    assert "input error" in capsys.readouterr().err


# --- train --------------------------------------------------------------------


def test_train_manifest(ws, capsys):
    manifest = json.load(open(ws["model"] + ".model.json"))
    assert manifest["type"] == "knn"
    assert manifest["k"] == 3
    assert manifest["cols"] == 27
    assert manifest["num_labels"] == 4


def test_train_missing_labels_exits_2(ws, tmp_path, capsys):
    cfg = _write_json(
        tmp_path / "bad.json",
        {
            "template_volume": f"{ws['data']}/template",
            "template_labels": f"{ws['data']}/nonexistent",
        },
    )
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "input error" in err and "nonexistent" in err


def test_train_retrain_byte_identical(ws, tmp_path):
    cfg = _write_json(
        tmp_path / "train.json",
        {
            "template_volume": f"{ws['data']}/template",
            "template_labels": f"{ws['data']}/template_labels",
            "per_class_cap": 150,
        },
    )
    out = str(tmp_path / "m2")
    assert main(["train", "--config", cfg, "--out", out]) == 0
    for suffix in (".model.json", ".model.raw"):
        assert _read_bytes(f"{out}/model{suffix}") == _read_bytes(
            ws["model"] + suffix
        )


def test_train_parzen_manifest(ws, tmp_path):
    cfg = _write_json(
        tmp_path / "train.json",
        {
            "template_volume": f"{ws['data']}/template",
            "template_labels": f"{ws['data']}/template_labels",
            "per_class_cap": 100,
        },
    )
    out = str(tmp_path / "pz")
    assert main(["train", "--config", cfg, "--out", out,
                 "--classifier", "parzen", "--h", "0.2"]) == 0
    manifest = json.load(open(f"{out}/model.model.json"))
    assert manifest["type"] == "parzen"
    assert manifest["h"] == 0.2


# --- classify / segment --------------------------------------------------------


def test_classify_outputs(ws, tmp_path):
    cfg = _seg_cfg(ws, tmp_path / "c.json")
    out = str(tmp_path / "out")
    assert main(["classify", "--config", cfg, "--out", out]) == 0
    labels = load_volume(f"{out}/labels_wta")
    post = load_volume(f"{out}/posterior")
    assert post.channels == 4
    sums = post.data.sum(axis=0)
    np.testing.assert_allclose(sums, 1.0, atol=1e-5)
    flat = np.argmax(post.data, axis=0)
    assert np.array_equal(flat.astype(np.uint8), labels.labels)


def test_segment_deterministic_byte_identical(ws, tmp_path):
    cfg = _seg_cfg(ws, tmp_path / "s.json")
    outs = [str(tmp_path / f"run{i}") for i in (1, 2)]
    for out in outs:
        assert main(["segment", "--config", cfg, "--lambda", "1.0",
                     "--out", out]) == 0
    for name in ("labels.mcv.raw", "labels.mcv.json", "diagnostics.csv"):
        assert _read_bytes(f"{outs[0]}/{name}") == _read_bytes(f"{outs[1]}/{name}")


def test_segment_improves_on_classify(ws, tmp_path):
    cfg = _seg_cfg(ws, tmp_path / "s.json")
    seg_out, cls_out = str(tmp_path / "seg"), str(tmp_path / "cls")
    assert main(["segment", "--config", cfg, "--lambda", "1.0", "--out", seg_out]) == 0
    assert main(["classify", "--config", cfg, "--out", cls_out]) == 0
    ref = load_volume(f"{ws['data']}/subject_00_labels", num_labels=4)
    seg = load_volume(f"{seg_out}/labels", num_labels=4)
    wta = load_volume(f"{cls_out}/labels_wta", num_labels=4)
    assert global_error(confusion(seg, ref)) < global_error(confusion(wta, ref))


def test_segment_lambda_flag_overrides_config(ws, tmp_path, capsys):
    cfg = _seg_cfg(ws, tmp_path / "s.json",
                   solver={"lambda": 0.25, "tol": 1e-3, "max_iters": 400})
    out = str(tmp_path / "o")
    assert main(["segment", "--config", cfg, "--lambda", "2.0", "--out", out]) == 0
    assert "lambda=2.0" in capsys.readouterr().out


def test_segment_tv_mode_2d(ws, tmp_path, capsys):
    cfg = _seg_cfg(ws, tmp_path / "s.json")
    out = str(tmp_path / "o")
    assert main(["segment", "--config", cfg, "--tv-mode", "2d", "--out", out]) == 0
    assert "converged=True" in capsys.readouterr().out


def test_segment_w_zero_matches_plain(ws, tmp_path):
    plain_cfg = _seg_cfg(ws, tmp_path / "p.json")
    out_plain = str(tmp_path / "plain")
    assert main(["segment", "--config", plain_cfg, "--out", out_plain]) == 0
    w_cfg = _seg_cfg(ws, tmp_path / "w.json",
                     prior_labels=f"{ws['data']}/template_labels")
    out_w = str(tmp_path / "w0")
    assert main(["segment", "--config", w_cfg, "--w", "0.0", "--out", out_w]) == 0
    assert _read_bytes(f"{out_plain}/labels.mcv.raw") == _read_bytes(
        f"{out_w}/labels.mcv.raw"
    )


def test_segment_w_without_prior_exits_2(ws, tmp_path, capsys):
    cfg = _seg_cfg(ws, tmp_path / "s.json")
    assert main(["segment", "--config", cfg, "--w", "0.5",
                 "--out", str(tmp_path / "o")]) == 2
    assert "prior_labels" in capsys.readouterr().err


def test_segment_save_posterior_flag(ws, tmp_path):
    cfg = _seg_cfg(ws, tmp_path / "s.json")
    out = str(tmp_path / "o")
    assert main(["segment", "--config", cfg, "--out", out]) == 0
    assert not os.path.exists(f"{out}/posterior.mcv.json")  # off by default
    out2 = str(tmp_path / "o2")
    assert main(["segment", "--config", cfg, "--save-posterior",
                 "--out", out2]) == 0
    assert os.path.exists(f"{out2}/posterior.mcv.json")


def test_classify_matches_tiny_lambda_segment(ws, tmp_path):
    cfg = _seg_cfg(ws, tmp_path / "s.json",
                   solver={"tol": 1e-4, "max_iters": 600})
    cls_out, seg_out = str(tmp_path / "cls"), str(tmp_path / "seg")
    assert main(["classify", "--config", cfg, "--out", cls_out]) == 0
    assert main(["segment", "--config", cfg, "--lambda", "1e-8",
                 "--out", seg_out]) == 0
    post = load_volume(f"{cls_out}/posterior")
    srt = np.sort(post.data, axis=0)
    unique = srt[-1] - srt[-2] > 1e-3  # voxels with a clear argmax winner
    wta = load_volume(f"{cls_out}/labels_wta")
    seg = load_volume(f"{seg_out}/labels")
    assert unique.mean() > 0.9
    assert np.array_equal(wta.labels[unique], seg.labels[unique])


# --- evaluate -------------------------------------------------------------------


def test_evaluate_self_is_perfect(ws, tmp_path, capsys):
    ref = f"{ws['data']}/subject_00_labels"
    out = str(tmp_path / "o")
    assert main(["evaluate", ref, ref, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "global error     : 0.00%" in text
    assert "TP rate (nuclei) : 100.00%" in text
    assert os.path.exists(f"{out}/confusion.csv")
    assert os.path.exists(f"{out}/metrics.txt")


def test_evaluate_with_mask_and_config(ws, tmp_path):
    cfg = _write_json(
        tmp_path / "e.json",
        {
            "pred_labels": f"{ws['data']}/subject_00_labels",
            "ref_labels": f"{ws['data']}/template_labels",
            "mask_labels": f"{ws['data']}/template_labels",
        },
    )
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    # masked evaluation counts only foreground reference voxels
    lines = open(tmp_path / "o" / "metrics.txt").read()
    ref = load_volume(f"{ws['data']}/template_labels")
    assert f"evaluated voxels : {int((ref.labels != 0).sum())}" in lines


def test_evaluate_missing_file_exits_2(tmp_path, capsys):
    assert main(["evaluate", "no_such", "files", "--out", str(tmp_path)]) == 2
    assert "input error" in capsys.readouterr().err


# --- sweep ----------------------------------------------------------------------


def test_sweep_lambda_row_per_value(ws, tmp_path):
    cfg = _seg_cfg(ws, tmp_path / "s.json",
                   subject_labels=f"{ws['data']}/subject_00_labels",
                   lambdas=[0.5, 1.0, 2.0, 4.0])
    out = str(tmp_path / "o")
    assert main(["sweep", "lambda", "--config", cfg, "--out", out]) == 0
    lines = open(f"{out}/sweep_lambda.csv").read().strip().splitlines()
    assert lines[0] == "lambda,error_pct,status"
    assert len(lines) == 5
    assert all(line.endswith(",ok") for line in lines[1:])


def test_sweep_w_rows(ws, tmp_path):
    cfg = _write_json(
        tmp_path / "w.json",
        {
            "model": ws["model"],
            "subjects": [
                {
                    "volume": f"{ws['data']}/subject_{i:02d}",
                    "labels": f"{ws['data']}/subject_{i:02d}_labels",
                }
                for i in range(2)
            ],
            "prior_labels": f"{ws['data']}/template_labels",
            "ws": [0.0, 0.5, 1.0],
            "solver": {"tol": 1e-3, "max_iters": 400},
        },
    )
    out = str(tmp_path / "o")
    assert main(["sweep", "w", "--config", cfg, "--out", out]) == 0
    lines = open(f"{out}/sweep_w.csv").read().strip().splitlines()
    assert lines[0] == "w,mean_error_pct,sem,status"
    assert len(lines) == 4


def test_sweep_contrasts_seven_rows(ws, tmp_path):
    cfg = _write_json(
        tmp_path / "c.json",
        {
            "template_volume": f"{ws['data']}/template",
            "template_labels": f"{ws['data']}/template_labels",
            "subjects": [
                {
                    "volume": f"{ws['data']}/subject_00",
                    "labels": f"{ws['data']}/subject_00_labels",
                }
            ],
            "per_class_cap": 100,
            "solver": {"tol": 1e-3, "max_iters": 400},
        },
    )
    out = str(tmp_path / "o")
    assert main(["sweep", "contrasts", "--config", cfg, "--out", out]) == 0
    lines = open(f"{out}/sweep_contrasts.csv").read().strip().splitlines()
    assert lines[0] == "channels,mean_error_pct,status"
    assert len(lines) == 8
    assert lines[1].startswith("0,") and lines[-1].startswith("0+1+2,")


def test_sweep_marks_failed_rows_and_continues(ws, tmp_path, capsys):
    cfg = _seg_cfg(ws, tmp_path / "s.json",
                   subject_labels=f"{ws['data']}/subject_00_labels",
                   lambdas=[-1.0, 1.0])
    out = str(tmp_path / "o")
    assert main(["sweep", "lambda", "--config", cfg, "--out", out]) == 0
    lines = open(f"{out}/sweep_lambda.csv").read().strip().splitlines()
    assert "failed" in lines[1] and lines[2].endswith(",ok")
    assert "row lambda=-1.0 failed" in capsys.readouterr().err


def test_sweep_all_rows_failed_exits_nonzero(ws, tmp_path):
    cfg = _seg_cfg(ws, tmp_path / "s.json",
                   subject_labels=f"{ws['data']}/subject_00_labels",
                   lambdas=[-1.0, -2.0])
    assert main(["sweep", "lambda", "--config", cfg,
                 "--out", str(tmp_path / "o")]) == 2


# --- export-slices ---------------------------------------------------------------


def test_export_labels_ppm(tmp_path):
    from mcseg.volume import GridShape, LabelVolume, save_volume

    labels = np.zeros((4, 5, 3), np.uint8)
    labels[1, 2, 1] = 1
    labels[2, 3, 1] = 2
    labels[3, 0, 1] = 3
    lab = LabelVolume(GridShape(4, 5, 3), labels, 4)
    save_volume(lab, str(tmp_path / "toy"))
    out = str(tmp_path / "o")
    assert main(["export-slices", "--labels", str(tmp_path / "toy"),
                 "--axis", "z", "--indices", "0,1", "--out", out]) == 0
    payload = _read_bytes(f"{out}/labels_z001.ppm")
    header = b"P6\n5 4\n255\n"
    assert payload.startswith(header)
    body = np.frombuffer(payload[len(header):], np.uint8).reshape(4, 5, 3)
    palette = np.array(
        [(0, 0, 0), (255, 0, 0), (0, 255, 0), (0, 255, 255)], np.uint8
    )
    assert np.array_equal(body, palette[labels[:, :, 1]])
    # slice 0 carries no labels: all black
    black = _read_bytes(f"{out}/labels_z000.ppm")
    assert black.startswith(header)
    assert set(black[len(header):]) == {0}


def test_export_volume_pgm_rescale_oracle(ws, tmp_path):
    out = str(tmp_path / "o")
    assert main(["export-slices", "--volume", f"{ws['data']}/template",
                 "--axis", "x", "--indices", "6", "--out", out]) == 0
    vol = load_volume(f"{ws['data']}/template")
    for ch in range(3):
        payload = _read_bytes(f"{out}/volume_c{ch}_x006.pgm")
        header = b"P5\n24 24\n255\n"
        assert payload.startswith(header)
        plane = vol.data[ch][6]
        lo, hi = plane.min(), plane.max()
        want = np.rint((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)
        got = np.frombuffer(payload[len(header):], np.uint8).reshape(24, 24)
        assert np.array_equal(got, want)


def test_export_slices_validation(ws, tmp_path, capsys):
    base = ["--axis", "z", "--indices", "0", "--out", str(tmp_path)]
    assert main(["export-slices"] + base) == 2
    assert main(["export-slices", "--labels", f"{ws['data']}/template_labels",
                 "--axis", "z", "--indices", "99", "--out", str(tmp_path)]) == 2
    assert main(["export-slices", "--volume", f"{ws['data']}/template",
                 "--labels", f"{ws['data']}/template_labels"] + base[:-2]
                + ["--out", str(tmp_path)]) == 2
    assert "input error" in capsys.readouterr().err


# --- config plumbing --------------------------------------------------------------


def test_unknown_config_key_exits_2(ws, tmp_path, capsys):
    cfg = _write_json(tmp_path / "bad.json", {"modle": ws["model"]})
    assert main(["segment", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_malformed_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    assert main(["segment", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["segment", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path)]) == 2
    assert "input error" in capsys.readouterr().err


def test_malformed_volume_header_exits_2(ws, tmp_path, capsys):
    raw = _read_bytes(f"{ws['data']}/template_labels.mcv.raw")
    bad = tmp_path / "bad"
    (tmp_path / "bad.mcv.json").write_text('{"dims": [24, 24')
    with open(tmp_path / "bad.mcv.raw", "wb") as fh:
        fh.write(raw)
    assert main(["evaluate", str(bad), str(bad), "--out", str(tmp_path)]) == 2
    assert "malformed volume header" in capsys.readouterr().err
