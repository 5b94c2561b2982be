# tests/test_cli.py
"""
命令行入口单元测试
"""
import io
import os
import sys
import json
import shutil
import tempfile
import unittest
from unittest.mock import patch

import torch
import yaml

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

import cli
from config.config_manager import ConfigManager, RunConfig, TrainingConfig
from corpus.synthetic import synth_corpus, write_corpus
from fusion_gen.model import ES4RModel
from fusion_gen.trainer import load_checkpoint
from verification.gradient_check import ComponentResult, GradcheckReport

SMALL_MODEL = {
    "seed": 7,
    "attention": {"model_dim": 32, "n_heads": 2, "seed": 7},
    "encoder": {"depth": 1, "ff_dim": 64},
    "adapter": {"in_dim": 32, "hidden_dim": 64, "out_dim": 32},
    "lm": {"model_dim": 32, "n_heads": 2, "n_layers": 1, "ff_dim": 64, "seed": 7},
    "lora": {"rank": 4, "alpha": 8.0, "dropout": 0.0},
    "training": {"steps": 2, "batch_size": 2, "lm_warmup_steps": 2, "max_new_tokens": 4},
}


def _config(corpus, output=None, checkpoint=None):
    config = RunConfig.from_dict(SMALL_MODEL)
    config.paths.corpus = corpus
    config.paths.output = output
    config.paths.checkpoint = checkpoint
    return config


def _run(argv):
    """在干净的配置单例上运行 main，返回 (退出码, 标准输出)"""
    ConfigManager._instance = None
    ConfigManager._config = None
    with patch('sys.stdout', new_callable=io.StringIO) as stdout:
        code = cli.main(argv)
    ConfigManager._instance = None
    ConfigManager._config = None
    return code, stdout.getvalue()


class CliTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.root = tempfile.mkdtemp()
        cls.corpus_dir = os.path.join(cls.root, "corpus")
        write_corpus(cls.corpus_dir, synth_corpus(3, seed=7))
        cls.run_dir = os.path.join(cls.root, "run")
        cls.train_result = cli.cmd_train(_config(cls.corpus_dir, cls.run_dir))
        cls.config_path = os.path.join(cls.root, "config.yaml")
        with open(cls.config_path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(SMALL_MODEL, fh)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.root, ignore_errors=True)


class TestCommands(CliTestCase):
    """测试各子命令"""

    def test_train_outputs(self):
        result = self.train_result
        self.assertEqual(len(result.reports), 2)
        self.assertTrue(os.path.exists(result.checkpoint_path))
        with open(result.log_path, encoding="utf-8") as fh:
            self.assertEqual(len(fh.readlines()), 2)
        with open(os.path.join(self.run_dir, "train_summary.json"), encoding="utf-8") as fh:
            summary = json.load(fh)
        self.assertEqual(summary["steps"], 2)
        self.assertEqual(summary["run_config"]["seed"], 7)

    def test_train_is_deterministic(self):
        other = os.path.join(self.root, "run-again")
        cli.cmd_train(_config(self.corpus_dir, other))
        with open(self.train_result.log_path, encoding="utf-8") as a, \
                open(os.path.join(other, "train_log.jsonl"), encoding="utf-8") as b:
            self.assertEqual(a.read(), b.read())

    def test_train_zero_learning_rate_keeps_initial_weights(self):
        """--lr 0 训练后检查点与初始模型逐位相同（含默认的文本预热步数）"""
        out = os.path.join(self.root, "lr-zero")
        config = _config(self.corpus_dir, out)
        config.training.lr = 0.0
        config.training.lm_warmup_steps = TrainingConfig().lm_warmup_steps
        initial = ES4RModel(config).state_dict()
        result = cli.cmd_train(config)
        trained, _, _ = load_checkpoint(result.checkpoint_path)
        for key, value in trained.state_dict().items():
            with self.subTest(tensor=key):
                self.assertTrue(torch.equal(value, initial[key]))

    def test_respond_gives_three_strategies(self):
        out = os.path.join(self.root, "respond")
        config = _config(self.corpus_dir, out, self.train_result.checkpoint_path)
        results = cli.cmd_respond(config)
        self.assertEqual([r.record.strategy for r in results], ["comfort", "encourage", "neutral"])
        for result in results:
            self.assertLessEqual(len(result.tokens), 4)
            path = os.path.join(out, f"control_{result.dialogue_id}.json")
            with open(path, encoding="utf-8") as fh:
                self.assertEqual(fh.read(), result.control.serialized)
        with open(os.path.join(out, "responses.jsonl"), encoding="utf-8") as fh:
            self.assertEqual(len(fh.readlines()), 3)

        again = cli.cmd_respond(config)
        self.assertEqual([r.control.serialized for r in again], [r.control.serialized for r in results])
        self.assertEqual([r.text for r in again], [r.text for r in results])

    def test_synth_control_uses_target_text(self):
        config = _config(self.corpus_dir)
        dialogue_id = synth_corpus(3, seed=7)[1].dialogue_id
        results = cli.cmd_synth_control(config, dialogue_id)
        self.assertEqual(len(results), 1)
        self.assertEqual(results[0].decision.strategy, "encourage")
        self.assertEqual(results[0].record.response_text, synth_corpus(3, seed=7)[1].target.text)

    def test_eval_identity_and_output(self):
        out = os.path.join(self.root, "eval")
        path = os.path.join(self.root, "preds.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("I'm here for you.\nThat is great news!\n")
        report = cli.cmd_eval(_config(None, out), path, path)
        self.assertEqual(report.bleu, (1.0, 1.0, 1.0, 1.0))
        with open(os.path.join(out, "metrics.json"), encoding="utf-8") as fh:
            self.assertIn("run_config", json.load(fh))

    def test_resolve_corpus(self):
        self.assertEqual(len(cli.resolve_corpus(_config(None), n_dialogues=2)), 2)
        self.assertEqual(len(cli.resolve_corpus(_config(self.corpus_dir))), 3)
        self.assertEqual(len(cli.resolve_corpus(_config(os.path.join(self.corpus_dir, "manifest.jsonl")))), 3)

    def test_flag_overrides(self):
        args = cli.build_parser().parse_args(["train", "--steps", "5", "--lambda-kl", "0.5", "--seed", "3"])
        self.assertEqual(cli.flag_overrides(args),
                         {"seed": 3, "training": {"steps": 5}, "distill": {"lambda_kl": 0.5}})


class TestMain(CliTestCase):
    """测试退出码"""

    def test_synth_control_success(self):
        code, stdout = _run(["synth-control", "--config", self.config_path, "--corpus", self.corpus_dir])
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(stdout.count('"version": 1'), 3)

    def test_train_via_main(self):
        out = os.path.join(self.root, "main-train")
        code, stdout = _run(["train", "--config", self.config_path, "--corpus", self.corpus_dir,
                             "--out", out, "--steps", "1"])
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(json.loads(stdout.strip().splitlines()[-1])["step"], 1)

    def test_validation_errors_exit_one(self):
        empty = os.path.join(self.root, "empty.txt")
        open(empty, "w").close()
        cases = [
            ["eval", "--predictions", empty, "--references", empty],
            ["synth-control", "--corpus", self.corpus_dir, "--dialogue", "no-such-dialogue"],
            ["synth-control", "--corpus", self.corpus_dir, "--epsilon", "0"],
            ["gradcheck", "--config", os.path.join(self.root, "missing.yaml")],
        ]
        for argv in cases:
            with self.subTest(argv=argv):
                code, _ = _run(argv)
                self.assertEqual(code, cli.EXIT_VALIDATION)

    def test_runtime_errors_exit_two(self):
        code, _ = _run(["respond", "--corpus", self.corpus_dir,
                        "--checkpoint", os.path.join(self.root, "missing.pt")])
        self.assertEqual(code, cli.EXIT_RUNTIME)

    def test_gradcheck_failure_exit_two(self):
        failing = GradcheckReport(1e-4, 1e-6, [ComponentResult("adapter", False, error="boom")])
        with patch('cli.run_gradcheck', return_value=failing):
            code, stdout = _run(["gradcheck"])
        self.assertEqual(code, cli.EXIT_RUNTIME)
        self.assertIn('"failures"', stdout)


if __name__ == '__main__':
    unittest.main()
