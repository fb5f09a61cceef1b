import os

import numpy as np
import pytest

from tonekd import cli, evaluation

DOCUMENTED_FLAGS = {"--config", "--out", "--stage", "--seed", "--snr-db",
                    "--lambda", "--mu", "--alpha", "--tau", "--epochs", "--set"}

TINY = [
    "--set", "data.n_train=10", "--set", "data.n_val=4", "--set", "data.n_test=10",
]
SMALL_MODELS = [
    "--set", "teacher.n_blocks=2", "--set", "teacher.d_model=16",
    "--set", "student.n_blocks=1", "--set", "student.d_model=12",
    "--set", "quant.block_size=16",
]


def run_cli(*argv):
    return cli.run(list(argv))


class TestUsage:
    def test_unknown_subcommand_exits_1(self, capsys):
        assert run_cli("frobnicate") == 1
        err = capsys.readouterr().err
        assert "usage" in err.lower()

    def test_no_subcommand_exits_1(self):
        assert run_cli() == 1

    def test_unknown_flag_exits_1(self):
        assert run_cli("datagen", "--bogus", "x") == 1

    def test_help_exits_zero(self):
        assert run_cli("--help") == 0

    @pytest.mark.parametrize("sub", ["datagen", "train", "evaluate", "report"])
    def test_help_lists_exactly_the_documented_flags(self, sub, capsys):
        parser = cli.build_parser()
        sub_parser = None
        for action in parser._actions:
            if hasattr(action, "choices") and action.choices:
                sub_parser = action.choices[sub]
        flags = set()
        for action in sub_parser._actions:
            for opt in action.option_strings:
                if opt.startswith("--"):
                    flags.add(opt)
        assert flags - {"--help"} == DOCUMENTED_FLAGS


class TestErrors:
    def test_unknown_config_key_exits_2(self, tmp_path):
        assert run_cli("datagen", "--out", str(tmp_path / "c.dql"),
                       "--set", "no.such.key=1") == 2

    def test_bad_config_file_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense without equals\n")
        assert run_cli("datagen", "--config", str(cfg)) == 2

    def test_missing_config_file_exits_2(self, tmp_path):
        assert run_cli("datagen", "--config", str(tmp_path / "nope.cfg")) == 2

    def test_distill_without_teacher_exits_2(self, tmp_path, capsys):
        corpus_path = str(tmp_path / "c.dql")
        assert run_cli("datagen", "--out", corpus_path, *TINY) == 0
        code = run_cli("train", "--stage", "distill", "--out", str(tmp_path),
                       "--epochs", "1", "--set", f"corpus={corpus_path}",
                       *SMALL_MODELS)
        assert code == 2
        assert "teacher" in capsys.readouterr().err

    def test_evaluate_without_model_exits_2(self):
        assert run_cli("evaluate") == 2

    def test_report_without_inputs_exits_2(self):
        assert run_cli("report") == 2

    def test_divergence_exits_3(self, tmp_path, capsys):
        corpus_path = str(tmp_path / "c.dql")
        assert run_cli("datagen", "--out", corpus_path, *TINY) == 0
        code = run_cli("train", "--stage", "teacher", "--epochs", "2",
                       "--out", str(tmp_path), "--set", f"corpus={corpus_path}",
                       "--set", "learning_rate=1e18", *SMALL_MODELS)
        assert code == 3
        assert "numeric" in capsys.readouterr().err.lower()

    def test_every_value_flag_maps_to_a_config_key(self):
        from tonekd.cli import _FLAG_KEYS
        from tonekd.config import SCHEMA
        assert set(_FLAG_KEYS.values()) <= set(SCHEMA)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus_path = str(root / "c.dql")
    assert run_cli("datagen", "--out", corpus_path, *TINY) == 0
    common = ["--set", f"corpus={corpus_path}", "--out", str(root),
              *SMALL_MODELS]
    assert run_cli("train", "--stage", "teacher", "--epochs", "3",
                   *common) == 0
    assert run_cli("train", "--stage", "student_base", "--epochs", "2",
                   *common) == 0
    assert run_cli("train", "--stage", "distill", "--epochs", "3",
                   *common) == 0
    return root, corpus_path


class TestPipeline:
    def test_full_chain_produces_report(self, workdir, capsys):
        root, corpus_path = workdir
        metrics_path = str(root / "distill.metrics.tsv")
        assert run_cli("evaluate", "--out", metrics_path,
                       "--set", f"corpus={corpus_path}",
                       "--set", f"eval.model={root}/distill.ckpt",
                       "--set", "eval.name=student distill") == 0
        assert run_cli("report", "--out", str(root / "report.txt"),
                       "--set", f"report.inputs={metrics_path}") == 0
        out = capsys.readouterr().out
        assert "WER (Noisy)" in out
        assert "student distill" in out
        parsed = evaluation.parse_report((root / "report.txt").read_text())
        assert parsed[0][0] == "student distill"

    def test_flag_overrides_config_file(self, workdir, tmp_path):
        root, corpus_path = workdir
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("stage = teacher\nepochs = 1\n"
                       f"corpus = {corpus_path}\n"
                       "teacher.n_blocks = 2\nteacher.d_model = 16\n")
        out_dir = str(tmp_path / "run")
        assert run_cli("train", "--config", str(cfg), "--stage", "student_base",
                       "--out", out_dir, "--set", "student.n_blocks=1",
                       "--set", "student.d_model=12") == 0
        assert os.path.exists(os.path.join(out_dir, "student_base.ckpt"))
        assert not os.path.exists(os.path.join(out_dir, "teacher.ckpt"))


class TestDeterminism:
    def test_identical_invocations_identical_bytes(self, tmp_path):
        outputs = []
        for tag in ("x", "y"):
            root = tmp_path / tag
            root.mkdir()
            corpus_path = str(root / "c.dql")
            assert run_cli("datagen", "--out", corpus_path, *TINY) == 0
            assert run_cli("train", "--stage", "teacher", "--epochs", "2",
                           "--out", str(root), "--set", f"corpus={corpus_path}",
                           *SMALL_MODELS) == 0
            outputs.append(root)
        a, b = outputs
        assert (a / "c.dql").read_bytes() == (b / "c.dql").read_bytes()
        assert (a / "teacher.ckpt").read_bytes() == (b / "teacher.ckpt").read_bytes()
        strip = lambda p: ["\t".join(line.split("\t")[:-1])
                           for line in p.read_text().splitlines()]
        assert strip(a / "teacher.trainlog.tsv") == strip(b / "teacher.trainlog.tsv")
