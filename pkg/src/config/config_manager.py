import os
import logging
import yaml
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Optional, Dict, Any, List, Tuple
from dotenv import load_dotenv

# 尝试加载 .env 文件
load_dotenv()

logger = logging.getLogger(__name__)

REDACTED = "***"


class ConfigValidationError(Exception):
    """配置验证错误（一次性列出全部问题）"""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("Invalid configuration: " + "; ".join(self.problems))


@dataclass
class FeatureConfig:
    """梅尔特征提取配置（25 ms 窗，10 ms 帧移，16 kHz）"""
    sample_rate: int = 16000
    n_mels: int = 128
    n_fft: int = 400
    win_length: int = 400
    hop_length: int = 160
    f_min: float = 0.0
    f_max: Optional[float] = None
    downsample_factor: int = 4
    cache_size: int = 256


@dataclass
class AttentionConfig:
    """双层注意力配置"""
    model_dim: int = 64
    n_heads: int = 4
    seed: int = 42
    max_positions: int = 2048
    max_turns: int = 64

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads


@dataclass
class EncoderConfig:
    """通用语音编码器替身配置"""
    depth: int = 2
    ff_dim: int = 128
    trainable: bool = False


@dataclass
class AdapterConfig:
    """模态适配器（卷积下采样器）配置"""
    kernel_sizes: Tuple[int, ...] = (5, 5, 5)
    stride: int = 2
    padding: int = 2
    total_factor: int = 8
    in_dim: int = 64
    hidden_dim: int = 512
    out_dim: int = 64


@dataclass
class ToyLMConfig:
    """桌面规模的解码器语言模型配置"""
    vocab_size: int = 256
    model_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 512
    ff_dim: int = 256
    seed: int = 42


@dataclass
class PartialAdapterConfig:
    """PLoRA 配置：只作用于语音融合位置"""
    rank: int = 16
    alpha: float = 16.0
    dropout: float = 0.1
    targets: Tuple[str, ...] = ("q_proj", "k_proj", "v_proj", "o_proj")

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


@dataclass
class DistillConfig:
    """双路径蒸馏配置"""
    temperature: float = 2.0
    lambda_kl: float = 1.0
    direction: str = "speech_text"  # speech_text / text_speech
    prob_floor: float = 1e-12


@dataclass
class TrainingConfig:
    """训练超参数"""
    lr: float = 5e-5
    weight_decay: float = 0.05
    epochs: int = 2
    batch_size: int = 8
    grad_clip: float = 1.0
    steps: Optional[int] = None
    lm_warmup_steps: int = 300
    lm_warmup_lr: float = 3e-3
    checkpoint_interval: int = 500
    freeze_base_lm: bool = True
    use_dual_attention: bool = True
    use_cross_attention: bool = True
    template_format: str = "qwen"
    max_new_tokens: int = 96


@dataclass
class SynthControlConfig:
    """语音合成控制配置"""
    epsilon: float = 1e-3
    trend_tol: float = 1e-6
    style_dim: int = 128
    style_seed: int = 0
    style_roles: Tuple[str, ...] = ("speaker", "listener")


@dataclass
class JudgeConfig:
    """外部 LLM 评审配置"""
    api_key: str = ""
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    timeout: int = 30
    max_retries: int = 3
    temperature: float = 0.0
    max_tokens: int = 512


@dataclass
class PathsConfig:
    """路径配置"""
    corpus: Optional[str] = None
    checkpoint: Optional[str] = None
    output: Optional[str] = None


@dataclass
class LoggingConfig:
    """日志配置"""
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file: Optional[str] = None


@dataclass
class RunConfig:
    """运行配置，完整回显到每个输出产物中"""
    seed: int = 42
    features: FeatureConfig = field(default_factory=FeatureConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    lm: ToyLMConfig = field(default_factory=ToyLMConfig)
    lora: PartialAdapterConfig = field(default_factory=PartialAdapterConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    synth_control: SynthControlConfig = field(default_factory=SynthControlConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def to_dict(self, redact_secrets: bool = True) -> Dict[str, Any]:
        """转换为可序列化字典"""
        data = asdict(self)
        for section in data.values():
            if isinstance(section, dict):
                for key, value in section.items():
                    if isinstance(value, tuple):
                        section[key] = list(value)
        if redact_secrets and data["judge"]["api_key"]:
            data["judge"]["api_key"] = REDACTED
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """从字典构建配置，未知键会被收集为验证错误

        回显产物中被遮盖的 api_key（"***"）不会被当作密钥读回，保持默认的空值。
        """
        judge = (data or {}).get("judge")
        if isinstance(judge, dict) and judge.get("api_key") == REDACTED:
            data = dict(data, judge={k: v for k, v in judge.items() if k != "api_key"})
        return _merge_into(cls(), data)


# YAML 中允许的扁平别名：model_dim / n_heads / encoder_depth
_FLAT_ALIASES = {
    "model_dim": ("attention", "model_dim"),
    "n_heads": ("attention", "n_heads"),
    "encoder_depth": ("encoder", "depth"),
}


def _coerce(current: Any, value: Any) -> Any:
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _merge_into(config: RunConfig, data: Dict[str, Any]) -> RunConfig:
    """把嵌套字典合并进配置"""
    problems = []
    section_names = {f.name for f in fields(RunConfig)}
    updates: Dict[str, Any] = {}

    for key, value in (data or {}).items():
        if key in _FLAT_ALIASES:
            section, attr = _FLAT_ALIASES[key]
            data_section = updates.setdefault(section, {})
            data_section[attr] = value
        elif key == "seed":
            updates["seed"] = value
        elif key in section_names:
            if not isinstance(value, dict):
                problems.append(f"Section '{key}' must be a mapping")
                continue
            updates.setdefault(key, {}).update(value)
        else:
            problems.append(f"Unknown config key: {key}")

    new_sections = {}
    for name, values in updates.items():
        if name == "seed":
            continue
        section = getattr(config, name)
        known = {f.name for f in fields(section)}
        clean = {}
        for attr, value in values.items():
            if attr not in known:
                problems.append(f"Unknown config key: {name}.{attr}")
                continue
            clean[attr] = _coerce(getattr(section, attr), value)
        new_sections[name] = replace(section, **clean)

    if problems:
        raise ConfigValidationError(problems)

    if "seed" in updates:
        new_sections["seed"] = int(updates["seed"])
    return replace(config, **new_sections)


def validate_config(config: RunConfig) -> List[str]:
    """校验配置，返回全部问题列表"""
    problems = []
    if config.features.sample_rate <= 0:
        problems.append("features.sample_rate must be > 0")
    if config.features.n_mels < 1:
        problems.append("features.n_mels must be >= 1")
    if config.features.hop_length < 1:
        problems.append("features.hop_length must be >= 1")
    if config.features.downsample_factor < 1:
        problems.append("features.downsample_factor must be >= 1")
    if config.attention.n_heads < 1 or config.attention.model_dim % config.attention.n_heads != 0:
        problems.append("attention.model_dim must be divisible by attention.n_heads")
    if config.encoder.depth < 0:
        problems.append("encoder.depth must be >= 0")

    adapter = config.adapter
    if config.adapter.stride ** len(adapter.kernel_sizes) != adapter.total_factor:
        problems.append("adapter.stride ** len(kernel_sizes) must equal adapter.total_factor")
    if adapter.in_dim != config.attention.model_dim:
        problems.append("adapter.in_dim must equal attention.model_dim")
    if adapter.out_dim != config.lm.model_dim:
        problems.append("adapter.out_dim must equal lm.model_dim")

    if config.lm.vocab_size < 2:
        problems.append("lm.vocab_size must be >= 2")
    if config.lm.n_heads < 1 or config.lm.model_dim % config.lm.n_heads != 0:
        problems.append("lm.model_dim must be divisible by lm.n_heads")
    if config.lora.rank < 1:
        problems.append("lora.rank must be >= 1")
    if not 0.0 <= config.lora.dropout < 1.0:
        problems.append("lora.dropout must be in [0, 1)")

    if config.distill.temperature <= 0:
        problems.append("distill.temperature must be > 0")
    if config.distill.direction not in ("speech_text", "text_speech"):
        problems.append("distill.direction must be speech_text or text_speech")

    training = config.training
    if training.lr < 0:
        problems.append("training.lr must be >= 0")
    if training.batch_size < 1:
        problems.append("training.batch_size must be >= 1")
    if training.grad_clip <= 0:
        problems.append("training.grad_clip must be > 0")
    if training.steps is not None and training.steps < 0:
        problems.append("training.steps must be >= 0")
    if training.template_format not in ("qwen", "llama"):
        problems.append("training.template_format must be qwen or llama")

    if config.synth_control.epsilon <= 0:
        problems.append("synth_control.epsilon must be > 0")
    if config.synth_control.trend_tol < 0:
        problems.append("synth_control.trend_tol must be >= 0")
    for role in config.synth_control.style_roles:
        if role not in ("speaker", "listener"):
            problems.append(f"synth_control.style_roles contains unknown role: {role}")
    return problems


def configure_logging(logging_config: LoggingConfig) -> None:
    """按配置初始化日志"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if logging_config.file:
        handlers.append(logging.FileHandler(logging_config.file))
    logging.basicConfig(
        level=getattr(logging, logging_config.level.upper(), logging.INFO),
        format=logging_config.format,
        handlers=handlers,
        force=True,
    )


class ConfigManager:
    """配置管理器"""

    _instance: Optional['ConfigManager'] = None
    _config: Optional[RunConfig] = None

    def __new__(cls, config_path: Optional[str] = None):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self, config_path: Optional[str] = None):
        if self._config is None:
            self._config = self._load_config(config_path)

    def _load_config(self, config_path: Optional[str]) -> RunConfig:
        """加载配置：默认值 -> YAML 文件 -> 环境变量"""
        config = RunConfig()

        # 从 YAML 文件加载
        path = config_path or os.getenv("ES4R_CONFIG")
        if path:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    data = yaml.safe_load(fh) or {}
            except OSError as e:
                raise ConfigValidationError([f"Cannot read config file {path}: {e}"])
            except yaml.YAMLError as e:
                raise ConfigValidationError([f"Invalid YAML in {path}: {e}"])
            config = _merge_into(config, data)
            logger.info(f"Loaded config file {path}")

        # 从环境变量加载评审与日志配置
        judge = config.judge
        judge_config = JudgeConfig(
            api_key=os.getenv("JUDGE_API_KEY", judge.api_key),
            base_url=os.getenv("JUDGE_BASE_URL", judge.base_url),
            model=os.getenv("JUDGE_MODEL", judge.model),
            timeout=int(os.getenv("JUDGE_TIMEOUT", str(judge.timeout))),
            max_retries=int(os.getenv("JUDGE_MAX_RETRIES", str(judge.max_retries))),
            temperature=float(os.getenv("JUDGE_TEMPERATURE", str(judge.temperature))),
            max_tokens=judge.max_tokens,
        )

        logging_config = LoggingConfig(
            level=os.getenv("LOG_LEVEL", config.logging.level),
            format=os.getenv("LOG_FORMAT", config.logging.format),
            file=os.getenv("LOG_FILE", config.logging.file),
        )

        return replace(config, judge=judge_config, logging=logging_config)

    @property
    def config(self) -> RunConfig:
        """获取配置"""
        return self._config

    def apply_overrides(self, overrides: Dict[str, Any]) -> RunConfig:
        """应用命令行覆盖项（命令行优先）并校验"""
        self._config = _merge_into(self._config, overrides)
        problems = validate_config(self._config)
        if problems:
            raise ConfigValidationError(problems)
        return self._config

    def validate(self) -> None:
        """校验当前配置"""
        problems = validate_config(self._config)
        if problems:
            raise ConfigValidationError(problems)

    def get_feature_config(self) -> FeatureConfig:
        return self._config.features

    def get_training_config(self) -> TrainingConfig:
        return self._config.training

    def get_synth_control_config(self) -> SynthControlConfig:
        return self._config.synth_control

    def get_judge_config(self) -> JudgeConfig:
        """获取评审配置"""
        return self._config.judge

    def get_logging_config(self) -> LoggingConfig:
        """获取日志配置"""
        return self._config.logging

    def is_judge_available(self) -> bool:
        """检查外部评审是否可用"""
        return bool(self._config.judge.api_key.strip())
