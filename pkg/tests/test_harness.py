import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from loopgen import checkpoint
from loopgen.cli import main
from loopgen.config import load_schema, load_stage_config, parse_config_text
from loopgen.data import (
    frame_files,
    gen_synthetic,
    load_dataset,
    read_frames,
    read_manifest,
    write_manifest,
)
from loopgen.errors import ConfigError, DataError, ParameterError
from loopgen.model import NetConfig, init_unet
from loopgen.synth import SyntheticSpec, positions, rasterize, render
from loopgen.train import StageConfig


# -- synthetic generator ------------------------------------------------------------


@pytest.mark.parametrize("trajectory", ["circular", "loopable-sine"])
def test_loopable_trajectory_closes(trajectory):
    spec = SyntheticSpec(length=43, trajectory=trajectory, seed=3)
    frames, masks = render(spec)
    assert np.array_equal(positions(spec)[0], positions(spec)[-1])
    assert frames[0].tobytes() == frames[42].tobytes()
    assert masks[0].tobytes() == masks[42].tobytes()


def test_linear_trajectory_does_not_loop():
    spec = SyntheticSpec(length=10, trajectory="linear")
    assert not spec.loopable
    assert not np.array_equal(positions(spec)[0], positions(spec)[-1])


@pytest.mark.parametrize("shape,radius", [("disk", 8.0), ("disk", 5.5), ("square", 6.0)])
def test_mask_area_matches_rasterizer_recount(shape, radius):
    spec = SyntheticSpec(shape=shape, radius=radius, length=5, seed=1)
    _, masks = render(spec)
    for m, (cx, cy) in zip(masks, positions(spec)):
        count = 0
        for y in range(spec.height):
            for x in range(spec.width):
                dx, dy = x + 0.5 - cx, y + 0.5 - cy
                if shape == "disk":
                    count += dx * dx + dy * dy <= radius * radius
                else:
                    count += abs(dx) <= radius and abs(dy) <= radius
        assert int(m.sum()) == count


def test_generation_is_deterministic(tmp_path):
    spec = SyntheticSpec(length=4, seed=9)
    gen_synthetic(spec, tmp_path / "a", "v")
    gen_synthetic(spec, tmp_path / "b", "v")
    for fa, fb in zip(frame_files(tmp_path / "a/v/frames"), frame_files(tmp_path / "b/v/frames")):
        assert fa.read_bytes() == fb.read_bytes()


def test_caption_template():
    assert SyntheticSpec(color="red", shape="disk", trajectory="circular").caption() == "a red disk moving in a circle"


@pytest.mark.parametrize("kw", [dict(width=60), dict(length=1), dict(shape="star"), dict(color="plaid"), dict(radius=0)])
def test_spec_validation(kw):
    with pytest.raises(ParameterError):
        SyntheticSpec(**kw)


def test_frames_round_trip_exactly(tmp_path):
    spec = SyntheticSpec(length=3, background="gradient", seed=2)
    frames, masks = render(spec)
    gen_synthetic(spec, tmp_path, "v")
    back = read_frames(tmp_path / "v/frames")
    np.testing.assert_array_equal(np.round(back * 255).astype(np.uint8), frames.transpose(0, 3, 1, 2))


# -- manifest ------------------------------------------------------------------------


def test_manifest_round_trip(tmp_path):
    recs = [gen_synthetic(SyntheticSpec(length=3, seed=i), tmp_path, f"v{i}") for i in range(2)]
    write_manifest(tmp_path / "m.jsonl", recs)
    assert read_manifest(tmp_path / "m.jsonl") == recs
    clips = load_dataset(tmp_path / "m.jsonl")
    assert [c.id for c in clips] == ["v0", "v1"] and clips[0].masks.shape == (3, 64, 64)


def test_manifest_rejects_count_mismatch(tmp_path):
    rec = gen_synthetic(SyntheticSpec(length=3), tmp_path, "v")
    write_manifest(tmp_path / "m.jsonl", [dataclasses.replace(rec, length=4)])
    with pytest.raises(DataError):
        read_manifest(tmp_path / "m.jsonl")
    (tmp_path / "v/masks/mask_00002.png").unlink()
    write_manifest(tmp_path / "m.jsonl", [rec])
    with pytest.raises(DataError):
        read_manifest(tmp_path / "m.jsonl")


def test_manifest_rejects_garbage(tmp_path):
    (tmp_path / "m.jsonl").write_text('{"id": "x"}\n')
    with pytest.raises(DataError):
        read_manifest(tmp_path / "m.jsonl")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "absent.jsonl")


# -- config files --------------------------------------------------------------------


def test_schema_covers_stage_config():
    assert set(load_schema()) == {f.name for f in dataclasses.fields(StageConfig)}


def test_config_parsing(tmp_path):
    (tmp_path / "s.conf").write_text("stage = 3\nlr = 1e-5  # tuned\ntrainable = conv_in, TEMM.Q\nmanifest = data/m.jsonl\n")
    cfg = load_stage_config(tmp_path / "s.conf", iterations=7)
    assert cfg.stage == 3 and cfg.f == 18 and cfg.lr == 1e-5 and cfg.iterations == 7
    assert cfg.trainable == {"conv_in", "TEMM.Q"}
    assert cfg.manifest == str(tmp_path / "data/m.jsonl")


@pytest.mark.parametrize("text", ["lr = 1e-4\nlrr = 2", "f = eight", "f = 8\nf = 9", "just words", "f = 19"])
def test_config_errors(text, tmp_path):
    (tmp_path / "bad.conf").write_text(text)
    with pytest.raises(ConfigError):
        load_stage_config(tmp_path / "bad.conf")


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for stage in (1, 2, 3):
        cfg = load_stage_config(root / f"stage{stage}.conf")
        assert cfg.stage == stage and cfg.f == (8, 11, 18)[stage - 1]


# -- command line ----------------------------------------------------------------------


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, [json.loads(x) for x in out.out.splitlines() if x.startswith("{")], out.err


def test_cli_alss_sample(capsys):
    code, recs, _ = run_cli(capsys, "alss-sample", "--f", "8", "--s", "6", "--count", "20", "--seed", "1")
    assert code == 0 and len(recs) == 20
    assert all(len(r["indices"]) == 15 and r["indices"][0] == r["indices"][-1] == 0 for r in recs)
    _, again, _ = run_cli(capsys, "alss-sample", "--f", "8", "--count", "20", "--seed", "1")
    assert again == recs


def test_cli_params(capsys):
    code, (rec,), _ = run_cli(capsys, "params")
    g = rec["groups"]
    assert code == 0 and g["TEMM.Q"] == g["TEMM.K"] == g["TEMM.V"]
    assert rec["stage_trainable"]["3"] == g["conv_in"] + g["TEMM.Q"] + g["TEMM.V"]


def test_cli_usage_errors(capsys):
    assert run_cli(capsys, "bogus")[0] == 1
    assert run_cli(capsys, "alss-sample", "--nope")[0] == 1
    assert run_cli(capsys, "alss-sample", "--f", "1")[0] == 1
    assert run_cli(capsys, "train", "--stage", "1")[0] == 1


def test_cli_missing_files(capsys, tmp_path):
    assert run_cli(capsys, "evaluate", "--video-dir", str(tmp_path / "none"))[0] == 2
    assert run_cli(capsys, "params", "--checkpoint", str(tmp_path / "none.ckpt"))[0] == 2
    code, _, err = run_cli(capsys, "train", "--stage", "1", "--manifest", str(tmp_path / "m.jsonl"))
    assert code == 2 and "m.jsonl" in err


def test_cli_pipeline_and_generate_35_frames(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "gen-data", "--out", str(tmp_path / "d"), "--count", "2", "--length", "43", "--size", "32")
    assert code == 0
    (tmp_path / "s1.conf").write_text("width = 8\nctx_dim = 8\n")
    code, (rec,), _ = run_cli(
        capsys, "train", "--stage", "1", "--config", str(tmp_path / "s1.conf"),
        "--manifest", str(tmp_path / "d/manifest.jsonl"), "--iterations", "2", "--out", str(tmp_path / "run"),
    )
    assert code == 0 and rec["iterations"] == 2
    ckpt = tmp_path / "run/stage1_final.ckpt"
    img = tmp_path / "d/video_0000/frames/frame_00000.png"
    code, (gen,), _ = run_cli(
        capsys, "generate", "--checkpoint", str(ckpt), "--image", str(img), "--caption", "a disk",
        "--out", str(tmp_path / "out"), "--steps", "2", "--f", "18",
    )
    assert code == 0 and gen["frames"] == 35 and len(frame_files(tmp_path / "out")) == 35
    code, (ev,), _ = run_cli(
        capsys, "evaluate", "--video-dir", str(tmp_path / "out"), "--input-image", str(img),
        "--report", str(tmp_path / "r.jsonl"),
    )
    assert code == 0 and ev["frames"] == 35
    assert json.loads((tmp_path / "r.jsonl").read_text()) == ev


def test_cli_generate_is_seed_deterministic(capsys, tmp_path):
    net = init_unet(NetConfig(8, 8))
    checkpoint.save(tmp_path / "n.ckpt", net, {"f": 2})
    gen_synthetic(SyntheticSpec(width=32, height=32, length=2), tmp_path, "v")
    img = str(tmp_path / "v/frames/frame_00000.png")
    for out in ("a", "b"):
        run_cli(capsys, "generate", "--checkpoint", str(tmp_path / "n.ckpt"), "--image", img,
                "--out", str(tmp_path / out), "--steps", "3", "--seed", "4")
    fa, fb = frame_files(tmp_path / "a"), frame_files(tmp_path / "b")
    assert len(fa) == 3 and [p.read_bytes() for p in fa] == [p.read_bytes() for p in fb]


def test_console_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "loopgen", "alss-sample", "--f", "2"], capture_output=True, text=True, check=True
    )
    assert json.loads(out.stdout)["indices"] == [0, 6, 0]
