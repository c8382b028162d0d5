"""
Checking the autodiff engine against finite differences
=======================================================

Every differentiable primitive and the full training loss of each model
variant are compared with central differences.  The model check uses a
narrow two-layer instance with dropout off, so the loss is deterministic.
"""

from saits.gradcheck import gradcheck_config, run_suite
from saits.model import VARIANTS
from saits.tensor import Tensor, backward, matmul, softmax_lastaxis

# A hand-sized warm-up: d/dW sum(softmax(x W)) is zero for every W because
# each softmax row sums to one.
x = Tensor([[1.0, 2.0], [0.5, -1.0]])
W = Tensor([[0.3, -0.2], [0.1, 0.4]], requires_grad=True)
backward(softmax_lastaxis(matmul(x, W)).sum())
print("gradient of a constant-sum output:\n", W.grad.round(12))

# The full suite; prints one line per check.
results = run_suite(gradcheck_config(), seed=0, variants=VARIANTS)
for r in results:
    print(r.line())
print("all passed:", all(r.passed for r in results))
