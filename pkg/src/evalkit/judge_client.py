# src/evalkit/judge_client.py
import json
import time
import logging
from typing import Any, Dict, Optional

import requests
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from config.config_manager import ConfigManager, JudgeConfig
from evalkit.prompts import parse_score, render_eval_prompt

# 设置日志
logger = logging.getLogger(__name__)


class JudgeConnectionError(Exception):
    """评审 API 连接错误"""
    pass


class JudgeTimeoutError(Exception):
    """评审 API 超时错误"""
    pass


class JudgeRateLimitError(Exception):
    """评审 API 限流错误"""
    pass


class JudgeAuthenticationError(Exception):
    """评审 API 认证错误"""
    pass


class JudgeResponseError(Exception):
    """评审 API 响应错误"""
    pass


class JudgeClient:
    """OpenAI 兼容 chat/completions 接口的 LLM 评审客户端"""

    def __init__(self, config: Optional[JudgeConfig] = None, session: Optional[requests.Session] = None):
        """初始化客户端

        Args:
            config: 评审配置，如果为 None 则从 ConfigManager 获取
            session: HTTP 会话（测试时可替换为假对象）
        """
        self.config = config or ConfigManager().get_judge_config()
        self.session = session or requests.Session()
        self.session.headers.update({
            "Authorization": f"Bearer {self.config.api_key}",
            "Content-Type": "application/json",
        })

        if not self.config.api_key:
            logger.warning("Judge API key is not configured")

    def _build_request_payload(self, prompt: str) -> Dict[str, Any]:
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }

    def _post(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        """发送一次请求并把 HTTP 状态映射为评审错误"""
        if not self.config.api_key:
            raise JudgeAuthenticationError("Judge API key is not configured")

        url = f"{self.config.base_url.rstrip('/')}/chat/completions"
        try:
            logger.debug(f"Making request to {url}")
            response = self.session.post(url, json=payload, timeout=self.config.timeout)

            if response.status_code == 401:
                raise JudgeAuthenticationError("Invalid API key")
            elif response.status_code == 429:
                raise JudgeRateLimitError("Rate limit exceeded")
            elif response.status_code >= 500:
                raise JudgeConnectionError(f"Server error: {response.status_code}")
            elif response.status_code != 200:
                raise JudgeResponseError(f"HTTP {response.status_code}: {response.text}")

            return response.json()

        except requests.exceptions.Timeout:
            raise JudgeTimeoutError(f"Request timeout after {self.config.timeout} seconds")
        except requests.exceptions.ConnectionError as e:
            raise JudgeConnectionError(f"Connection error: {str(e)}")
        except requests.exceptions.RequestException as e:
            raise JudgeConnectionError(f"Request error: {str(e)}")
        except json.JSONDecodeError as e:
            raise JudgeResponseError(f"Invalid JSON response: {str(e)}")

    def _make_request(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        """带重试的请求（限流、连接错误、超时时重试）"""
        retrying = retry(
            stop=stop_after_attempt(max(1, self.config.max_retries)),
            wait=wait_exponential(multiplier=1, min=1, max=10),
            retry=retry_if_exception_type((JudgeRateLimitError, JudgeConnectionError, JudgeTimeoutError)),
            reraise=True,
        )
        return retrying(self._post)(payload)

    def _extract_content(self, response_data: Dict[str, Any]) -> str:
        """从响应中提取内容"""
        try:
            choices = response_data.get("choices", [])
            if not choices:
                raise JudgeResponseError("No choices in response")
            content = choices[0].get("message", {}).get("content", "")
            if not content:
                raise JudgeResponseError("Empty content in response")
            return content.strip()
        except (AttributeError, IndexError, TypeError) as e:
            raise JudgeResponseError(f"Invalid response structure: {str(e)}")

    def complete(self, prompt: str) -> str:
        """发送提示并返回评审回复文本"""
        start_time = time.time()
        try:
            response_data = self._make_request(self._build_request_payload(prompt))
            content = self._extract_content(response_data)
            usage = response_data.get("usage", {})
            logger.info(
                f"Judge API call successful. "
                f"Time: {time.time() - start_time:.2f}s, "
                f"Tokens: {usage.get('total_tokens', 0)}"
            )
            return content
        except Exception as e:
            logger.error(f"Judge API call failed: {str(e)}")
            raise

    def score(self, dimension: str, instruction: str, response: str) -> float:
        """
        对单条回复按指定维度打分

        Raises:
            PromptError: 未知维度
            ScoreParseError: 回复中没有合法分数
            JudgeConnectionError / JudgeTimeoutError / JudgeRateLimitError /
            JudgeAuthenticationError / JudgeResponseError: 传输错误
        """
        reply = self.complete(render_eval_prompt(dimension, instruction, response))
        return parse_score(reply)
