import pytest
import torch

from toposeg.errors import InvalidArgument
from toposeg.gradcheck import REGISTRY, check_component, compare_gradients


class TestHarness:
    def test_unknown_component_rejected(self):
        with pytest.raises(InvalidArgument, match="registered"):
            check_component("nonsense")

    def test_detects_wrong_gradient(self):
        # a function whose autograd path is deliberately inconsistent with
        # its value must fail the comparison
        x = torch.tensor([1.0, 2.0], dtype=torch.float64)

        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, inp):
                return (inp ** 2).sum()

            @staticmethod
            def backward(ctx, grad):
                return torch.tensor([1.0, 1.0], dtype=torch.float64) * grad

        err, _ = compare_gradients(lambda: Wrong.apply(x), [x])
        assert err > 1e-2

    def test_quadratic_gradient_exact(self):
        x = torch.tensor([0.3, -0.7, 1.1], dtype=torch.float64)
        err, entries = compare_gradients(lambda: (x ** 2).sum(), [x])
        assert entries == 3
        assert err < 1e-9

    def test_registry_covers_required_components(self):
        required = {"ffn", "max_relative_conv", "pooled_grapher", "window_grapher",
                    "stage_pair", "total_loss", "max_pool"}
        assert required <= set(REGISTRY)

    def test_fast_components_pass(self):
        for name in ("ffn", "max_relative_conv", "max_pool"):
            result = check_component(name)
            assert result.passed, result.line()
