# src/fusion_gen/trainer.py
import os
import json
import math
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch

from config.config_manager import ConfigValidationError, RunConfig
from fusion_gen.losses import LossError, LossReport, ce_loss, kl_distill_loss, total_loss
from fusion_gen.model import ES4RModel, PreparedExample
from fusion_gen.toy_lm import TEXT_PATH, ToyLM, lm_forward

# 设置日志
logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class TrainingError(Exception):
    """训练步失败（如损失非有限）"""
    pass


class CheckpointError(Exception):
    """检查点读写错误"""
    pass


def _grad_norm(parameters: Sequence[torch.nn.Parameter]) -> float:
    grads = [p.grad.detach().flatten() for p in parameters if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(torch.cat(grads)))


def warmup_text_lm(lm: ToyLM, examples: Sequence[PreparedExample], steps: int,
                   lr: float = 3e-3, seed: int = 42) -> List[float]:
    """
    文本路径上的短程语言模型拟合，作为预训练骨干的替身

    在全部下一个 token 上计算交叉熵，只更新基座参数（不含低秩增量）。

    Returns:
        每步损失
    """
    if steps <= 0 or not examples:
        return []
    torch.manual_seed(seed)
    params = [p for p in lm.base_parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=lr, weight_decay=0.0)
    lm.train()
    losses = []
    for step in range(steps):
        example = examples[step % len(examples)]
        tokens = example.tokens
        dists = lm_forward(tokens[:-1], TEXT_PATH, lm)
        valid = torch.ones(tokens.shape[0] - 1, dtype=torch.bool)
        loss = ce_loss(dists, tokens[1:], valid)
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, 1.0)
        optimizer.step()
        losses.append(float(loss))
    logger.info(f"Text LM warmup: {steps} steps, loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return losses


class Trainer:
    """双路径训练循环：AdamW + 全局梯度裁剪 + JSONL 日志 + 定期检查点"""

    def __init__(self, model: ES4RModel, config: Optional[RunConfig] = None,
                 log_path: Optional[str] = None, checkpoint_path: Optional[str] = None):
        self.model = model
        self.config = config or model.config
        self.log_path = log_path
        self.checkpoint_path = checkpoint_path
        self.optimizer: Optional[torch.optim.Optimizer] = None
        self.step = 0
        self.history: List[LossReport] = []

    def _ensure_optimizer(self) -> torch.optim.Optimizer:
        if self.optimizer is None:
            params = self.model.trainable_parameters()
            if not params:
                raise TrainingError("model has no trainable parameters")
            training = self.config.training
            self.optimizer = torch.optim.AdamW(params, lr=training.lr, weight_decay=training.weight_decay)
        return self.optimizer

    def train_step(self, batch: Sequence[PreparedExample]) -> LossReport:
        """
        一步训练：第一阶段 -> 跨模态注意力 -> 两条路径 -> L_total -> 裁剪 -> AdamW

        Raises:
            TrainingError: 损失非有限
        """
        if not batch:
            raise TrainingError("empty batch")
        optimizer = self._ensure_optimizer()
        distill = self.config.distill
        self.model.train()

        outputs = [self.model(example) for example in batch]
        p_spch = torch.cat([o.p_spch for o in outputs])
        p_text = torch.cat([o.p_text for o in outputs])
        targets = torch.cat([o.targets for o in outputs])
        valid = torch.ones(targets.shape[0], dtype=torch.bool)

        try:
            ce = ce_loss(p_spch, targets, valid, distill.prob_floor)
            kl = kl_distill_loss(p_spch, p_text, valid, distill.temperature, distill.direction, distill.prob_floor)
        except LossError as e:
            raise TrainingError(f"step {self.step + 1}: {e}")
        loss = total_loss(ce, kl, distill.lambda_kl)

        if not torch.isfinite(loss):
            ids = ", ".join(example.dialogue_id for example in batch)
            raise TrainingError(
                f"non-finite loss at step {self.step + 1}: ce={float(ce)}, kl={float(kl)}, dialogues=[{ids}]"
            )

        optimizer.zero_grad()
        loss.backward()
        params = [p for group in optimizer.param_groups for p in group["params"]]
        raw_norm = float(torch.nn.utils.clip_grad_norm_(params, self.config.training.grad_clip))
        clipped_norm = _grad_norm(params)
        optimizer.step()

        self.step += 1
        report = LossReport(
            ce=float(ce), kl=float(kl), total=float(loss), n_valid=int(valid.sum()),
            temperature=distill.temperature, weight=distill.lambda_kl,
            grad_norm=clipped_norm, grad_norm_raw=raw_norm, step=self.step,
        )
        self.history.append(report)
        self._write_log(report)
        return report

    def _write_log(self, report: LossReport) -> None:
        if not self.log_path:
            return
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(report.to_log_record()) + "\n")

    def batches(self, examples: Sequence[PreparedExample], epoch: int) -> List[List[PreparedExample]]:
        """按 (seed, epoch) 固定打乱后切分批次"""
        generator = torch.Generator().manual_seed(self.config.seed + epoch)
        order = torch.randperm(len(examples), generator=generator).tolist()
        size = self.config.training.batch_size
        return [[examples[i] for i in order[k:k + size]] for k in range(0, len(order), size)]

    def fit(self, examples: Sequence[PreparedExample], steps: Optional[int] = None,
            warmup: bool = True) -> List[LossReport]:
        """
        训练到指定步数（或 epochs 个轮次）

        Args:
            examples: 预处理后的样本
            steps: 总步数；None 时使用 config.training.steps，再为 None 时按 epochs
            warmup: 是否先做文本路径预热并冻结基座；training.lr 为 0 时不预热，参数保持初始值

        Returns:
            每步的 LossReport
        """
        if not examples:
            raise TrainingError("no training examples")
        training = self.config.training
        torch.manual_seed(self.config.seed)

        if warmup and self.step == 0 and training.lr > 0:
            warmup_text_lm(self.model.lm, examples, training.lm_warmup_steps,
                           training.lm_warmup_lr, self.config.seed)
        if training.freeze_base_lm:
            self.model.lm.freeze_base()

        steps = steps if steps is not None else training.steps
        if steps is None:
            steps = training.epochs * math.ceil(len(examples) / training.batch_size)
        if self.log_path:
            open(self.log_path, "w").close()

        reports = []
        epoch = 0
        while len(reports) < steps:
            for batch in self.batches(examples, epoch):
                if len(reports) >= steps:
                    break
                report = self.train_step(batch)
                reports.append(report)
                logger.debug(f"step {report.step}: ce={report.ce:.4f} kl={report.kl:.4f} total={report.total:.4f}")
                if (self.checkpoint_path and training.checkpoint_interval > 0
                        and report.step % training.checkpoint_interval == 0):
                    save_checkpoint(self.checkpoint_path, self.model, self.config, report.step)
            epoch += 1

        if self.checkpoint_path:
            save_checkpoint(self.checkpoint_path, self.model, self.config, self.step)
        if reports:
            logger.info(f"Trained {len(reports)} steps: total {reports[0].total:.4f} -> {reports[-1].total:.4f}")
        return reports


def save_checkpoint(path: str, model: ES4RModel, config: RunConfig, step: int) -> None:
    """保存检查点：{format_version, state_dict, run_config, step, seed}"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    payload: Dict[str, Any] = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "state_dict": model.state_dict(),
        "run_config": config.to_dict(),
        "step": step,
        "seed": config.seed,
    }
    torch.save(payload, path)
    logger.info(f"Saved checkpoint at step {step} to {path}")


def load_checkpoint(path: str) -> Tuple[ES4RModel, RunConfig, int]:
    """读取检查点并重建模型

    Raises:
        CheckpointError: 文件缺失、格式版本不符或内容损坏
    """
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        version = payload.get("format_version") if isinstance(payload, dict) else None
        raise CheckpointError(f"Unsupported checkpoint format version {version!r} in {path}")

    try:
        config = RunConfig.from_dict(payload["run_config"])
        model = ES4RModel(config)
        model.load_state_dict(payload["state_dict"])
    except (KeyError, ConfigValidationError, RuntimeError) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}")
    model.eval()
    return model, config, int(payload.get("step", 0))
