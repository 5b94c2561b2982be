# src/verification/gradient_check.py
import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import torch

from config.config_manager import AdapterConfig, AttentionConfig, PartialAdapterConfig
from affect_context.adapter import ModalityAdapter, modality_adapter
from affect_context.attention import (
    EmbeddingSequence, MultiHeadAttention, SPEECH, TEXT,
    concat_history, inter_turn_attention, intra_turn_attention,
)
from fusion_gen.cross_attention import CrossModalAttention, cross_modal_attention
from fusion_gen.lora import PartialLoRALinear, partial_low_rank_forward
from fusion_gen.losses import ce_loss, kl_distill_loss

# 设置日志
logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-6
ABS_FLOOR = 1e-8

# 返回 (标量损失闭包, {张量名: 叶子张量})
Builder = Callable[[torch.Generator], Tuple[Callable[[], torch.Tensor], Dict[str, torch.Tensor]]]


@dataclass
class GradComponent:
    name: str
    build: Builder


@dataclass
class TensorCheck:
    component: str
    tensor: str
    numel: int
    max_abs_error: float
    rel_error: float
    passed: bool


@dataclass
class ComponentResult:
    name: str
    passed: bool
    tensors: List[TensorCheck] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class GradcheckReport:
    """有限差分检查报告（可直接序列化为 JSON）"""
    tolerance: float
    step: float
    components: List[ComponentResult]
    run_config: Optional[Dict[str, Any]] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.components)

    def failures(self) -> List[str]:
        """失败的张量名（component.tensor）"""
        names = []
        for component in self.components:
            if component.error:
                names.append(component.name)
            names.extend(f"{t.component}.{t.tensor}" for t in component.tensors if not t.passed)
        return names

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["passed"] = self.passed
        data["failures"] = self.failures()
        if self.run_config is None:
            data.pop("run_config")
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _rand(generator: torch.Generator, *shape: int, requires_grad: bool = True) -> torch.Tensor:
    return torch.randn(*shape, generator=generator, dtype=torch.float64).requires_grad_(requires_grad)


def _weighted_sum(generator: torch.Generator, shape: Sequence[int]) -> Callable[[torch.Tensor], torch.Tensor]:
    # 随机投影成标量，避免对称的和把梯度抵消
    weights = torch.randn(*shape, generator=generator, dtype=torch.float64)
    return lambda out: (out * weights).sum()


def _trainable(prefix: str, module: torch.nn.Module) -> Dict[str, torch.Tensor]:
    """模块中全部可训练张量（权重与偏置）"""
    return {f"{prefix}.{name}": p for name, p in module.named_parameters() if p.requires_grad}


def _intra_mhsa(generator: torch.Generator):
    cfg = AttentionConfig(model_dim=8, n_heads=2, seed=11)
    params = MultiHeadAttention.from_config(cfg).double()
    x = _rand(generator, 5, 8)
    project = _weighted_sum(generator, (5, 8))

    def loss() -> torch.Tensor:
        return project(intra_turn_attention(EmbeddingSequence(x, SPEECH), cfg, params).values)

    tensors = {"input": x}
    tensors.update(_trainable("params", params))
    return loss, tensors


def _inter_mhsa(generator: torch.Generator):
    cfg = AttentionConfig(model_dim=8, n_heads=2, seed=12)
    params = MultiHeadAttention.from_config(cfg).double()
    turns = [_rand(generator, 3, 8), _rand(generator, 3, 8)]
    project = _weighted_sum(generator, (6, 8))

    def loss() -> torch.Tensor:
        history = concat_history([EmbeddingSequence(t, SPEECH) for t in turns])
        return project(inter_turn_attention(history, cfg, params).values)

    tensors = {"turn_0": turns[0], "turn_1": turns[1]}
    tensors.update(_trainable("params", params))
    return loss, tensors


def _cross_attention(generator: torch.Generator):
    params = CrossModalAttention(8, 2, seed=13).double()
    speech, text = _rand(generator, 4, 8), _rand(generator, 6, 8)
    project = _weighted_sum(generator, (4, 8))

    def loss() -> torch.Tensor:
        fused = cross_modal_attention(EmbeddingSequence(speech, SPEECH), EmbeddingSequence(text, TEXT), params)
        return project(fused.values)

    tensors = {"speech": speech, "text": text}
    tensors.update(_trainable("params", params))
    return loss, tensors


def _partial_low_rank(generator: torch.Generator):
    cfg = PartialAdapterConfig(rank=4, alpha=8.0, dropout=0.0)
    layer = PartialLoRALinear(8, 8, cfg, seed=14).double()
    with torch.no_grad():
        layer.delta.lora_B.copy_(torch.randn(8, 4, generator=generator, dtype=torch.float64))
    x = _rand(generator, 6, 8)
    mask = torch.tensor([False, True, True, False, True, False])
    project = _weighted_sum(generator, (6, 8))

    def loss() -> torch.Tensor:
        out = partial_low_rank_forward(EmbeddingSequence(x, SPEECH), mask, layer.base, layer.delta)
        return project(out.values)

    tensors = {"input": x}
    tensors.update(_trainable("params", layer))
    return loss, tensors


def _adapter(generator: torch.Generator):
    cfg = AdapterConfig(in_dim=8, hidden_dim=8, out_dim=8)
    params = ModalityAdapter(cfg, seed=15).double()
    x = _rand(generator, 6, 8)
    project = _weighted_sum(generator, (1, 8))

    def loss() -> torch.Tensor:
        return project(modality_adapter(EmbeddingSequence(x, SPEECH), cfg, params).values)

    tensors = {"input": x}
    tensors.update(_trainable("params", params))
    return loss, tensors


def _ce(generator: torch.Generator):
    logits = _rand(generator, 6, 8)
    targets = torch.randint(0, 8, (6,), generator=generator)
    valid = torch.tensor([False, False, True, True, True, True])

    def loss() -> torch.Tensor:
        return ce_loss(torch.softmax(logits, dim=-1), targets, valid)

    return loss, {"logits": logits}


def _kl(generator: torch.Generator):
    student = _rand(generator, 6, 8)
    teacher = _rand(generator, 6, 8, requires_grad=False)
    valid = torch.tensor([False, True, True, True, True, True])

    def loss() -> torch.Tensor:
        return kl_distill_loss(torch.softmax(student, -1), torch.softmax(teacher, -1), valid, temperature=2.0)

    return loss, {"student_logits": student}


DEFAULT_COMPONENTS: Tuple[GradComponent, ...] = (
    GradComponent("intra_mhsa", _intra_mhsa),
    GradComponent("inter_mhsa", _inter_mhsa),
    GradComponent("cross_attention", _cross_attention),
    GradComponent("partial_low_rank", _partial_low_rank),
    GradComponent("adapter", _adapter),
    GradComponent("ce_loss", _ce),
    GradComponent("kl_loss", _kl),
)


def _numeric_grad(loss: Callable[[], torch.Tensor], tensor: torch.Tensor, step: float) -> torch.Tensor:
    """中心差分 (f(x+h) − f(x−h)) / 2h，逐元素"""
    grad = torch.zeros_like(tensor)
    flat, flat_grad = tensor.data.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + step
            plus = loss().item()
            flat[i] = original - step
            minus = loss().item()
            flat[i] = original
            flat_grad[i] = (plus - minus) / (2 * step)
    return grad


def check_component(component: GradComponent, tolerance: float = DEFAULT_TOLERANCE,
                    step: float = DEFAULT_STEP, seed: int = 0) -> ComponentResult:
    """对一个组件的每个命名张量比较解析梯度与数值梯度"""
    generator = torch.Generator().manual_seed(seed)
    try:
        loss, tensors = component.build(generator)
        names = list(tensors)
        analytic = torch.autograd.grad(loss(), [tensors[n] for n in names], allow_unused=True)
    except Exception as e:
        logger.error(f"Gradient check for {component.name} failed to run: {e}")
        return ComponentResult(component.name, False, error=str(e))

    checks = []
    for name, grad in zip(names, analytic):
        tensor = tensors[name]
        grad = torch.zeros_like(tensor) if grad is None else grad.detach()
        numeric = _numeric_grad(loss, tensor, step)
        diff = (grad - numeric).abs()
        scale = max(float(grad.norm()), float(numeric.norm()), ABS_FLOOR)
        rel_error = float((grad - numeric).norm()) / scale
        max_abs = float(diff.max())
        passed = rel_error <= tolerance or max_abs <= ABS_FLOOR
        checks.append(TensorCheck(component.name, name, tensor.numel(), max_abs, rel_error, passed))
        if not passed:
            logger.warning(f"Gradient mismatch in {component.name}.{name}: rel_error={rel_error:.3e}")

    return ComponentResult(component.name, all(c.passed for c in checks), checks)


def run_gradcheck(components: Optional[Sequence[GradComponent]] = None,
                  tolerance: float = DEFAULT_TOLERANCE, step: float = DEFAULT_STEP,
                  seed: int = 0) -> GradcheckReport:
    """
    逐组件运行有限差分梯度检查（float64）

    Args:
        components: 待检查组件，默认覆盖双层注意力、跨模态注意力、PLoRA、适配器、CE 与 KL
        tolerance: 相对误差阈值
        step: 差分步长
        seed: 随机输入种子

    Returns:
        GradcheckReport
    """
    components = components if components is not None else DEFAULT_COMPONENTS
    results = [check_component(c, tolerance, step, seed + i) for i, c in enumerate(components)]
    report = GradcheckReport(tolerance, step, results)
    logger.info(f"Gradient check: {sum(r.passed for r in results)}/{len(results)} components passed")
    return report
