import numpy as np
import pytest

from raft.agents import TrainConfig
from raft.cli import (
    ConfigError,
    RunConfig,
    build_parser,
    main,
    parse_config,
    run_search,
    write_outputs,
)
from raft.dataset import (
    TaskKind,
    evaluate_lineage,
    load_csv,
    parse_lineage,
)
from raft.evaluator import ForestConfig, MetricKind, downstream_score
from raft.info_metrics import PairwiseDistanceKind
from raft.state_repr import EncoderKind, EncoderConfig, encoder_length
from raft.synthetic import squared_sum_regression, two_class_blobs, write_fixture


@pytest.fixture()
def small_csv(tmp_path):
    fs = squared_sum_regression(m=80, n_distractors=3, seed=11)
    return write_fixture(fs, tmp_path / "data.csv")


def small_config(small_csv, tmp_path, **train_kwargs):
    defaults = dict(episodes=1, steps=2, seed=5)
    defaults.update(train_kwargs)
    return RunConfig(input_path=str(small_csv), target="y",
                     out_dir=str(tmp_path / "out"), train=TrainConfig(**defaults))


# ---------------------------------------------------------------------------
# parse_config
# ---------------------------------------------------------------------------

def test_cli_flag_overrides_config_file(tmp_path, small_csv):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("distance = euclidean\nepisodes = 4\n", encoding="utf-8")
    cfg = parse_config([
        "run", "--input", str(small_csv), "--target", "y", "--out", str(tmp_path / "o"),
        "--config", str(cfgfile), "--distance", "cosine",
    ])
    assert cfg.train.distance is PairwiseDistanceKind.COSINE
    assert cfg.train.episodes == 4  # file value survives where no flag was given


def test_encoder_flag_sets_state_length(small_csv, tmp_path):
    cfg = parse_config([
        "run", "--input", str(small_csv), "--target", "y", "--out", str(tmp_path / "o"),
        "--encoder", "gae", "--k", "8",
    ])
    assert cfg.train.encoder is EncoderKind.GAE
    length = encoder_length(EncoderConfig(kind=cfg.train.encoder, k=cfg.train.k,
                                          d=cfg.train.d))
    assert length == 8


def test_unknown_flag_exits_with_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["run", "--nonsense", "1"])
    assert exc.value.code == 2


def test_unknown_config_key_rejected(tmp_path, small_csv):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("mystery = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(["run", "--input", str(small_csv), "--target", "y",
                      "--out", str(tmp_path / "o"), "--config", str(cfgfile)])


def test_bad_config_value_type(tmp_path, small_csv):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("episodes = soon\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="bad int value"):
        parse_config(["run", "--input", str(small_csv), "--target", "y",
                      "--out", str(tmp_path / "o"), "--config", str(cfgfile)])


def test_missing_required_option():
    with pytest.raises(ConfigError, match="missing required option --input"):
        parse_config(["run", "--target", "y", "--out", "o"])


def test_exit_codes(tmp_path, small_csv, capsys):
    assert main(["run", "--target", "y", "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--input", str(tmp_path / "missing.csv"), "--target", "y",
                 "--out", str(tmp_path / "o"), "--episodes", "1", "--steps", "1"]) == 3
    assert main(["run", "--input", str(small_csv), "--target", "nope",
                 "--out", str(tmp_path / "o"), "--episodes", "1", "--steps", "1"]) == 3
    assert main(["run", "--input", str(small_csv), "--target", "y",
                 "--out", str(tmp_path / "o"), "--metric", "f1_macro",
                 "--episodes", "1", "--steps", "1"]) == 2  # metric/task mismatch


# ---------------------------------------------------------------------------
# run_search — loop arithmetic and artifacts
# ---------------------------------------------------------------------------

def test_one_episode_one_step_records_three_transitions(tmp_path):
    fs = squared_sum_regression(m=40, n_distractors=2, seed=3)
    path = write_fixture(fs, tmp_path / "tiny.csv")
    cfg = RunConfig(input_path=str(path), target="y", out_dir=str(tmp_path / "o"),
                    train=TrainConfig(episodes=1, steps=1, seed=1))
    result = run_search(cfg)
    assert result.n_transitions == 3
    assert len(result.trace) == 1
    assert np.isfinite(result.best_score)
    assert result.best_fs.n_cols >= 1


def test_two_runs_same_seed_byte_identical_outputs(small_csv, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        cfg = RunConfig(input_path=str(small_csv), target="y", out_dir=str(out),
                        train=TrainConfig(episodes=2, steps=2, seed=9))
        write_outputs(run_search(cfg), cfg)
    for name in ("transformed.csv", "trace.tsv", "report.txt", "config.echo"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_emitted_features_reevaluate_from_lineage(small_csv, tmp_path):
    cfg = RunConfig(input_path=str(small_csv), target="y",
                    out_dir=str(tmp_path / "out"),
                    train=TrainConfig(episodes=2, steps=3, seed=2))
    result = run_search(cfg)
    paths = write_outputs(result, cfg)
    original = load_csv(small_csv, "y")
    originals = original.original_columns()
    emitted = load_csv(paths["transformed"], "y")
    report_lines = paths["report"].read_text().splitlines()
    feature_lines = report_lines[report_lines.index(
        "name\tlineage_tree\timportance_share\torigin") + 1:]
    assert len(feature_lines) == emitted.n_cols
    for i, line in enumerate(feature_lines):
        name = line.split("\t")[0]
        expr = parse_lineage(name)
        recomputed = evaluate_lineage(expr, originals)
        np.testing.assert_array_equal(recomputed, emitted.values[:, i],
                                      err_msg=f"feature {name}")


def test_reported_score_matches_recomputation(small_csv, tmp_path):
    cfg = RunConfig(input_path=str(small_csv), target="y",
                    out_dir=str(tmp_path / "out"),
                    train=TrainConfig(episodes=1, steps=3, seed=4))
    result = run_search(cfg)
    paths = write_outputs(result, cfg)
    emitted = load_csv(paths["transformed"], "y")
    again = downstream_score(emitted, result.split_seed, result.metric,
                             ForestConfig(seed=result.forest_seed))
    assert again == result.best_score


def test_trace_is_monotone_in_episode(small_csv, tmp_path):
    cfg = RunConfig(input_path=str(small_csv), target="y",
                    out_dir=str(tmp_path / "out"),
                    train=TrainConfig(episodes=3, steps=2, seed=6))
    result = run_search(cfg)
    episodes = [row.episode for row in result.trace]
    assert episodes == sorted(episodes)
    assert len(result.trace) == 6


def test_importance_shares_sum_to_one(small_csv, tmp_path):
    cfg = RunConfig(input_path=str(small_csv), target="y",
                    out_dir=str(tmp_path / "out"),
                    train=TrainConfig(episodes=1, steps=2, seed=7))
    result = run_search(cfg)
    paths = write_outputs(result, cfg)
    lines = paths["report"].read_text().splitlines()
    shares = [float(line.split("\t")[2]) for line in lines[lines.index(
        "name\tlineage_tree\timportance_share\torigin") + 1:]]
    assert sum(shares) == pytest.approx(1.0, abs=1e-9)


def test_bench_mode_runs_without_learning(small_csv, tmp_path):
    cfg = RunConfig(input_path=str(small_csv), target="y",
                    out_dir=str(tmp_path / "out"), bench=True,
                    train=TrainConfig(episodes=2, steps=2, seed=8))
    result = run_search(cfg)
    assert result.n_transitions == 0
    assert len(result.trace) == 4
    assert np.isfinite(result.best_score)


def test_classification_run_all_original_report(tmp_path):
    fs = two_class_blobs(m=60, n_features=3, seed=21)
    path = write_fixture(fs, tmp_path / "clf.csv")
    cfg = RunConfig(input_path=str(path), target="label",
                    out_dir=str(tmp_path / "out"),
                    train=TrainConfig(episodes=1, steps=2, seed=3))
    result = run_search(cfg)
    assert result.task is TaskKind.CLASSIFICATION
    assert result.metric is MetricKind.F1_MACRO
    paths = write_outputs(result, cfg)
    lines = paths["report"].read_text().splitlines()
    start = lines.index("name\tlineage_tree\timportance_share\torigin") + 1
    for line in lines[start:]:
        name, tree, share, origin = line.split("\t")
        if origin == "original":
            assert parse_lineage(name).name == name  # bare identifiers


def test_carry_features_persists_across_episodes(small_csv, tmp_path):
    cfg = RunConfig(input_path=str(small_csv), target="y",
                    out_dir=str(tmp_path / "out"),
                    train=TrainConfig(episodes=2, steps=2, seed=10,
                                      carry_features=True))
    result = run_search(cfg)
    assert len(result.trace) == 4


def test_cli_end_to_end_exit_zero(small_csv, tmp_path, capsys):
    code = main(["run", "--input", str(small_csv), "--target", "y",
                 "--out", str(tmp_path / "cli_out"), "--episodes", "1",
                 "--steps", "2", "--seed", "3"])
    assert code == 0
    captured = capsys.readouterr()
    assert "one_minus_rae" in captured.out
    assert (tmp_path / "cli_out" / "transformed.csv").exists()
    assert (tmp_path / "cli_out" / "config.echo").exists()
