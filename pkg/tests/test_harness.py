import json
import os

import pytest

from carpetlab.harness import (
    ExperimentConfig,
    config_from_sources,
    config_hash,
    export_report,
    parse_config_file,
    run_suite,
)


def tiny_config(tmp_path, **kw) -> ExperimentConfig:
    base = dict(
        levels=(2, 4),
        experiments=("build", "harnack", "hitting", "couple", "resist"),
        trials=60,
        output_dir=str(tmp_path),
    )
    base.update(kw)
    return ExperimentConfig(**base)


# -------------------------------------------------------------------- config


def test_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.d == 2 and cfg.k == 3 and cfg.a == 1
    assert cfg.levels == (2, 3, 4)
    assert cfg.experiments == ("build", "harnack", "heat", "hitting", "couple", "resist")
    assert cfg.seed == 42
    assert config_hash(cfg) == "eaa01555ec798ff5"


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# survey setup\n"
        "k = 3\n"
        "levels = 2, 3\n"
        "experiments = build, resist\n"
        "tolerance = 1e-8\n"
        "seed=7\n"
    )
    cfg = config_from_sources(str(path))
    assert cfg.levels == (2, 3)
    assert cfg.experiments == ("build", "resist")
    assert cfg.tolerance == 1e-8
    assert cfg.seed == 7
    assert cfg.d == 2  # untouched default


def test_config_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 7\njobs = 4\n")
    cfg = config_from_sources(str(path), overrides={"seed": 9, "jobs": None})
    assert cfg.seed == 9
    assert cfg.jobs == 4  # None override means "not given"


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("levles = 2, 3\n")
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config_file(str(path))
    path.write_text("just words\n")
    with pytest.raises(ValueError, match="key=value"):
        parse_config_file(str(path))


def test_config_hash_ignores_plumbing():
    a = ExperimentConfig(output_dir="here", jobs=1)
    b = ExperimentConfig(output_dir="there", jobs=8)
    assert config_hash(a) == config_hash(b)
    c = ExperimentConfig(seed=43)
    assert config_hash(a) != config_hash(c)
    echo = a.echo_dict()
    assert "output_dir" not in echo and "jobs" not in echo
    assert echo["seed"] == 42


def test_config_validates_params(tmp_path):
    with pytest.raises(ValueError):
        run_suite(tiny_config(tmp_path, k=4))  # a + k odd


# --------------------------------------------------------------------- suite


@pytest.fixture(scope="module")
def suite_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    cfg = tiny_config(out)
    manifest = run_suite(cfg)
    return cfg, manifest


def test_suite_all_green(suite_run):
    cfg, manifest = suite_run
    assert set(manifest.experiments) == set(cfg.experiments)
    for name, entry in manifest.experiments.items():
        assert entry["status"] == "ok", (name, entry)
        assert entry["checks"], name
        assert all(entry["checks"].values()), (name, entry["checks"])


def test_suite_artifacts_exist(suite_run):
    cfg, manifest = suite_run
    assert manifest.artifacts
    for name in manifest.artifacts:
        assert name == os.path.basename(name)  # portable names only
        assert os.path.exists(os.path.join(cfg.output_dir, name))
    on_disk = json.load(open(os.path.join(cfg.output_dir, "manifest.json")))
    assert on_disk["config_hash"] == config_hash(cfg)
    assert on_disk["experiments"].keys() == manifest.experiments.keys()


def test_suite_artifacts_embed_config_echo(suite_run):
    cfg, manifest = suite_run
    payload = json.load(open(os.path.join(cfg.output_dir, "build.json")))
    assert payload["config"] == cfg.echo_dict()
    assert "output_dir" not in payload["config"]


def test_suite_records_failures_and_continues(tmp_path):
    # The heat experiment needs a level >= 4 build; at (2, 3) it must fail
    # loudly in the manifest while later experiments still run.
    cfg = tiny_config(tmp_path, levels=(2, 3), experiments=("build", "heat", "resist"))
    manifest = run_suite(cfg)
    assert manifest.experiments["heat"]["status"] == "failed"
    assert "error" in manifest.experiments["heat"]
    assert manifest.experiments["resist"]["status"] == "ok"


def test_suite_fail_fast_stops(tmp_path):
    cfg = tiny_config(tmp_path, levels=(2, 3), experiments=("build", "heat", "resist"))
    manifest = run_suite(cfg, fail_fast=True)
    assert manifest.experiments["heat"]["status"] == "failed"
    assert "resist" not in manifest.experiments


def test_suite_empty_selection(tmp_path):
    cfg = tiny_config(tmp_path, experiments=())
    manifest = run_suite(cfg)
    assert manifest.experiments == {}
    assert manifest.artifacts == []
    assert os.path.exists(os.path.join(str(tmp_path), "manifest.json"))


# -------------------------------------------------------------- determinism


def _artifact_bytes(outdir):
    out = {}
    for name in sorted(os.listdir(outdir)):
        if name == "manifest.json":
            continue
        with open(os.path.join(outdir, name), "rb") as fh:
            out[name] = fh.read()
    return out


def test_suite_is_deterministic(tmp_path):
    cfg_a = tiny_config(tmp_path / "a")
    cfg_b = tiny_config(tmp_path / "b", jobs=2)
    for c in (cfg_a, cfg_b):
        os.makedirs(c.output_dir, exist_ok=True)
    run_suite(cfg_a)
    run_suite(cfg_b)
    bytes_a = _artifact_bytes(cfg_a.output_dir)
    bytes_b = _artifact_bytes(cfg_b.output_dir)
    assert bytes_a.keys() == bytes_b.keys()
    for name in bytes_a:
        assert bytes_a[name] == bytes_b[name], f"{name} differs across runs"
    # Manifests agree up to wall clock and plumbing.
    man_a = json.load(open(os.path.join(cfg_a.output_dir, "manifest.json")))
    man_b = json.load(open(os.path.join(cfg_b.output_dir, "manifest.json")))
    for man in (man_a, man_b):
        man.pop("wall_clock_seconds")
        man["config"].pop("output_dir")
        man["config"].pop("jobs")
    assert man_a == man_b


# ------------------------------------------------------------------- report


def test_export_report(suite_run):
    cfg, _ = suite_run
    manifest_path = os.path.join(cfg.output_dir, "manifest.json")
    text, gaps = export_report(manifest_path)
    assert gaps == []
    assert "harnack" in text
    assert "C_H" in text
    assert "resistance" in text.lower()
    # Rendered tables land next to the manifest.
    written = os.listdir(cfg.output_dir)
    assert any(n.startswith("report_") for n in written)


def test_export_report_names_gaps(tmp_path):
    cfg = tiny_config(tmp_path, experiments=("build",))
    run_suite(cfg)
    os.remove(os.path.join(str(tmp_path), "build.csv"))
    text, gaps = export_report(os.path.join(str(tmp_path), "manifest.json"))
    assert gaps == ["build.csv"]
    assert "build.csv" in text or gaps  # the gap list is the contract


def test_export_report_shows_failures(tmp_path):
    cfg = tiny_config(tmp_path, levels=(2, 3), experiments=("build", "heat"))
    run_suite(cfg)
    text, gaps = export_report(os.path.join(str(tmp_path), "manifest.json"))
    assert gaps == []  # a failed experiment wrote nothing, so nothing is missing
    assert "status=failed" in text
