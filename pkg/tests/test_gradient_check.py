# tests/test_gradient_check.py
"""
有限差分梯度检查单元测试
"""
import os
import sys
import json
import unittest

import torch

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from verification.gradient_check import DEFAULT_COMPONENTS, GradComponent, check_component, run_gradcheck


class _WrongSignDouble(torch.autograd.Function):
    """前向 2x，反向故意给出 -2"""

    @staticmethod
    def forward(ctx, x):
        return 2 * x

    @staticmethod
    def backward(ctx, grad_output):
        return -2 * grad_output


def _wrong_sign(generator):
    x = torch.randn(4, generator=generator, dtype=torch.float64, requires_grad=True)
    return (lambda: _WrongSignDouble.apply(x).sum()), {"input": x}


def _correct_double(generator):
    x = torch.randn(4, generator=generator, dtype=torch.float64, requires_grad=True)
    unused = torch.randn(3, generator=generator, dtype=torch.float64, requires_grad=True)
    return (lambda: (2 * x).pow(2).sum()), {"input": x, "unused": unused}


def _broken(generator):
    raise RuntimeError("cannot build")


class TestGradientCheck(unittest.TestCase):
    """测试梯度检查"""

    def test_default_components_pass(self):
        report = run_gradcheck()
        self.assertEqual([c.name for c in report.components],
                         ["intra_mhsa", "inter_mhsa", "cross_attention", "partial_low_rank",
                          "adapter", "ce_loss", "kl_loss"])
        for component in report.components:
            with self.subTest(component=component.name):
                self.assertTrue(component.passed, [(t.tensor, t.rel_error) for t in component.tensors])
        self.assertTrue(report.passed)
        self.assertEqual(report.failures(), [])
        self.assertEqual(len(DEFAULT_COMPONENTS), 7)

    def test_wrong_sign_reported_by_name(self):
        report = run_gradcheck([GradComponent("wrong_sign", _wrong_sign),
                                GradComponent("double", _correct_double)])
        self.assertFalse(report.passed)
        self.assertEqual(report.failures(), ["wrong_sign.input"])
        rel_error = report.components[0].tensors[0].rel_error
        self.assertAlmostEqual(rel_error, 2.0, places=5)

    def test_unused_tensor_passes(self):
        result = check_component(GradComponent("double", _correct_double))
        self.assertTrue(result.passed)
        unused = [t for t in result.tensors if t.tensor == "unused"][0]
        self.assertEqual(unused.max_abs_error, 0.0)

    def test_build_error_recorded(self):
        report = run_gradcheck([GradComponent("broken", _broken)])
        self.assertFalse(report.passed)
        self.assertEqual(report.components[0].error, "cannot build")
        self.assertEqual(report.failures(), ["broken"])

    def test_json_report(self):
        report = run_gradcheck([GradComponent("double", _correct_double)], tolerance=1e-5, step=1e-5)
        data = json.loads(report.to_json())
        self.assertEqual(data["tolerance"], 1e-5)
        self.assertTrue(data["passed"])
        self.assertEqual(data["failures"], [])
        self.assertEqual(data["components"][0]["tensors"][0]["tensor"], "input")
        self.assertNotIn("run_config", data)

    def test_every_trainable_tensor_is_checked(self):
        """注意力投影与卷积的权重、偏置都在检查之列"""
        expected = {
            "intra_mhsa": [f"params.{p}_proj.{k}" for p in "qkvo" for k in ("weight", "bias")],
            "inter_mhsa": [f"params.{p}_proj.{k}" for p in "qkvo" for k in ("weight", "bias")],
            "cross_attention": [f"params.attention.{p}_proj.{k}" for p in "qkvo" for k in ("weight", "bias")],
            "adapter": [f"params.convs.{i}.{k}" for i in range(3) for k in ("weight", "bias")],
            "partial_low_rank": ["params.base.weight", "params.base.bias",
                                 "params.delta.lora_A", "params.delta.lora_B"],
        }
        components = {c.name: c for c in DEFAULT_COMPONENTS}
        for name, tensors in expected.items():
            with self.subTest(component=name):
                result = check_component(components[name])
                checked = [t.tensor for t in result.tensors]
                for tensor in tensors:
                    self.assertIn(tensor, checked)
                self.assertTrue(result.passed, [(t.tensor, t.rel_error) for t in result.tensors])


if __name__ == '__main__':
    unittest.main()
