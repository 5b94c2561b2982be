# src/cli.py
"""
命令行入口：train / respond / synth-control / eval / gradcheck / synth-corpus

退出码：0 成功，1 配置或输入校验错误，2 运行期失败
"""
import os
import sys
import json
import logging
import argparse
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

from config.config_manager import ConfigManager, ConfigValidationError, RunConfig, configure_logging, validate_config
from corpus.dialogue import CorpusError, DialogueHistory, load_corpus
from corpus.synthetic import synth_corpus, write_corpus
from corpus.templates import TemplateError
from evalkit.metrics import MetricError, MetricReport, evaluate_corpus, format_report_table
from evalkit.prompts import PromptError, ScoreParseError
from fusion_gen.generation import ResponsePipeline, ResponseResult
from fusion_gen.losses import LossReport
from fusion_gen.model import ES4RModel, prepare_example
from fusion_gen.trainer import Trainer
from speech_features.mel import FeatureExtractor
from synth_control.controller import ControlResult, SynthController
from verification.gradient_check import GradcheckReport, run_gradcheck

# 设置日志
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

SYNTH_CORPUS = "synth"
DEFAULT_SYNTH_DIALOGUES = 64
DEFAULT_OUTPUT_DIR = "runs"

VALIDATION_ERRORS = (ConfigValidationError, CorpusError, TemplateError, MetricError, PromptError, ScoreParseError)


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    reports: List[LossReport]


def output_dir(config: RunConfig) -> str:
    directory = config.paths.output or DEFAULT_OUTPUT_DIR
    os.makedirs(directory, exist_ok=True)
    return directory


def checkpoint_path(config: RunConfig) -> str:
    return config.paths.checkpoint or os.path.join(config.paths.output or DEFAULT_OUTPUT_DIR, "checkpoint.pt")


def write_json(path: str, data: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, ensure_ascii=False)


def resolve_corpus(config: RunConfig, n_dialogues: int = DEFAULT_SYNTH_DIALOGUES) -> List[DialogueHistory]:
    """paths.corpus 为空或 "synth" 时生成合成语料，否则读取 manifest（.json / .jsonl）"""
    path = config.paths.corpus
    if path in (None, SYNTH_CORPUS):
        return synth_corpus(n_dialogues, seed=config.seed)
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.jsonl")
    manifest_format = "json" if path.endswith(".json") else "jsonl"
    result = load_corpus(path, manifest_format)
    if result.errors:
        raise CorpusError("Corpus validation failed: " + "; ".join(str(e) for e in result.errors))
    if not result.dialogues:
        raise CorpusError(f"Corpus {path} contains no dialogues")
    return result.dialogues


def select_dialogues(dialogues: Sequence[DialogueHistory], dialogue_id: Optional[str]) -> List[DialogueHistory]:
    if dialogue_id is None:
        return list(dialogues)
    selected = [d for d in dialogues if d.dialogue_id == dialogue_id]
    if not selected:
        raise CorpusError(f"Dialogue not found: {dialogue_id}")
    return selected


def cmd_train(config: RunConfig) -> TrainResult:
    """训练并写出检查点、逐步 JSONL 日志与运行摘要"""
    problems = validate_config(config)
    if problems:
        raise ConfigValidationError(problems)

    dialogues = resolve_corpus(config)
    extractor = FeatureExtractor(config.features)
    examples = [prepare_example(d, extractor, config.training.template_format) for d in dialogues]

    out = output_dir(config)
    log_path = os.path.join(out, "train_log.jsonl")
    ckpt = checkpoint_path(config)
    model = ES4RModel(config)
    trainer = Trainer(model, config, log_path=log_path, checkpoint_path=ckpt)
    reports = trainer.fit(examples)

    write_json(os.path.join(out, "train_summary.json"), {
        "run_config": config.to_dict(),
        "steps": len(reports),
        "first": reports[0].to_dict() if reports else None,
        "last": reports[-1].to_dict() if reports else None,
        "checkpoint": ckpt,
    })
    return TrainResult(ckpt, log_path, reports)


def cmd_respond(config: RunConfig, dialogue_id: Optional[str] = None) -> List[ResponseResult]:
    """从检查点生成回复并附第三阶段控制记录"""
    pipeline = ResponsePipeline.from_checkpoint(checkpoint_path(config), overrides=config)
    dialogues = select_dialogues(resolve_corpus(config), dialogue_id)
    echo = config.to_dict()
    results = [pipeline.respond(d, run_config=echo) for d in dialogues]

    if config.paths.output:
        out = output_dir(config)
        for result in results:
            with open(os.path.join(out, f"control_{result.dialogue_id}.json"), "w", encoding="utf-8") as fh:
                fh.write(result.control.serialized)
        with open(os.path.join(out, "responses.jsonl"), "w", encoding="utf-8") as fh:
            for result in results:
                fh.write(json.dumps({"dialogue_id": result.dialogue_id, "text": result.text,
                                     "run_config": echo}, ensure_ascii=False) + "\n")
    return results


def cmd_synth_control(config: RunConfig, dialogue_id: Optional[str] = None) -> List[ControlResult]:
    """只跑第三阶段：以目标文本作为回复文本"""
    controller = SynthController(config.synth_control, FeatureExtractor(config.features))
    echo = config.to_dict()
    results = []
    for dialogue in select_dialogues(resolve_corpus(config), dialogue_id):
        result = controller.run(dialogue, dialogue.target.text, run_config=echo)
        results.append(result)
        if config.paths.output:
            path = os.path.join(output_dir(config), f"control_{dialogue.dialogue_id}.json")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(result.serialized)
    return results


def read_lines(path: str) -> List[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def cmd_eval(config: RunConfig, predictions: str, references: str) -> MetricReport:
    """逐行对齐的预测/参考文件 -> MetricReport"""
    preds, refs = read_lines(predictions), read_lines(references)
    if not preds:
        raise MetricError(f"Prediction file {predictions} is empty")
    report = evaluate_corpus(preds, refs)
    report.run_config = config.to_dict()
    if config.paths.output:
        write_json(os.path.join(output_dir(config), "metrics.json"), report.to_dict())
    return report


def cmd_gradcheck(config: RunConfig) -> GradcheckReport:
    report = run_gradcheck(seed=config.seed)
    report.run_config = config.to_dict()
    if config.paths.output:
        with open(os.path.join(output_dir(config), "gradcheck.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    return report


def cmd_synth_corpus(config: RunConfig, n_dialogues: int = DEFAULT_SYNTH_DIALOGUES) -> str:
    """把合成语料（manifest + WAV）写到 paths.output"""
    dialogues = synth_corpus(n_dialogues, seed=config.seed)
    manifest = write_corpus(output_dir(config), dialogues)
    write_json(os.path.join(output_dir(config), "run_config.json"), config.to_dict())
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="es4r", description="Empathetic speech-dialogue pipeline (desk scale)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--corpus", help="manifest path, corpus directory or 'synth'")
    common.add_argument("--checkpoint", help="checkpoint file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", dest="template_format", choices=["qwen", "llama"])
    common.add_argument("--log-level")

    sub = parser.add_subparsers(dest="command", required=True)
    train = sub.add_parser("train", parents=[common], help="train Stage 1 + Stage 2")
    train.add_argument("--steps", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--lambda-kl", type=float)
    train.add_argument("--kd-temp", type=float)

    for name, help_text in (("respond", "generate responses with control records"),
                            ("synth-control", "Stage-3 control records only")):
        command = sub.add_parser(name, parents=[common], help=help_text)
        command.add_argument("--dialogue", help="dialogue id (default: all)")
        command.add_argument("--trend-tol", type=float)
        command.add_argument("--epsilon", type=float)

    evaluate = sub.add_parser("eval", parents=[common], help="automatic text metrics")
    evaluate.add_argument("--predictions", required=True)
    evaluate.add_argument("--references", required=True)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")

    corpus = sub.add_parser("synth-corpus", parents=[common], help="write a synthetic corpus")
    corpus.add_argument("--n-dialogues", type=int, default=DEFAULT_SYNTH_DIALOGUES)
    return parser


# 命令行参数 -> 配置路径
_FLAG_KEYS = {
    "corpus": ("paths", "corpus"),
    "checkpoint": ("paths", "checkpoint"),
    "out": ("paths", "output"),
    "template_format": ("training", "template_format"),
    "log_level": ("logging", "level"),
    "steps": ("training", "steps"),
    "lr": ("training", "lr"),
    "lambda_kl": ("distill", "lambda_kl"),
    "kd_temp": ("distill", "temperature"),
    "trend_tol": ("synth_control", "trend_tol"),
    "epsilon": ("synth_control", "epsilon"),
}


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """收集显式给出的命令行参数（命令行优先于配置文件）"""
    overrides: Dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for flag, (section, key) in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manager = ConfigManager(args.config)
        config = manager.apply_overrides(flag_overrides(args))
        configure_logging(config.logging)

        if args.command == "train":
            result = cmd_train(config)
            print(json.dumps(result.reports[-1].to_log_record() if result.reports else {}))
        elif args.command == "respond":
            for result in cmd_respond(config, args.dialogue):
                print(result.text)
                print(result.control.serialized)
        elif args.command == "synth-control":
            for result in cmd_synth_control(config, args.dialogue):
                print(result.serialized)
        elif args.command == "eval":
            print(format_report_table(cmd_eval(config, args.predictions, args.references)))
        elif args.command == "gradcheck":
            report = cmd_gradcheck(config)
            print(report.to_json())
            if not report.passed:
                return EXIT_RUNTIME
        elif args.command == "synth-corpus":
            print(cmd_synth_corpus(config, args.n_dialogues))
    except VALIDATION_ERRORS as e:
        logger.error(str(e))
        return EXIT_VALIDATION
    except Exception as e:
        logger.exception(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
