import numpy as np
from .autodiff import Operation


class Exp(Operation):
    """Natural exponential function
    """

    def __init__(self, op, ID=None):
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.exp(self.inputs[0].value)

    def backward_inputs(self, grad):
        return [grad * self._value]


class Log(Operation):
    """Natural logarithm
    """

    def __init__(self, op, ID=None):
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.log(self.inputs[0].value)

    def backward_inputs(self, grad):
        return [grad / self.inputs[0].value]


class Sqrt(Operation):
    """Square root
    """

    def __init__(self, op, ID=None):
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.sqrt(self.inputs[0].value)

    def backward_inputs(self, grad):
        return [grad / (2 * self._value)]


class Tanh(Operation):
    """Hyperbolic tangent function
    """

    def __init__(self, op, ID=None):
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.tanh(self.inputs[0].value)

    def backward_inputs(self, grad):
        return [grad * (1 - np.square(self._value))]


class Relu(Operation):
    """Rectified linear unit max(x, 0)
    """

    def __init__(self, op, ID=None):
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.maximum(self.inputs[0].value, 0)

    def backward_inputs(self, grad):
        return [grad * (self.inputs[0].value > 0)]


class Softmax(Operation):
    """Softmax along one axis (default: last), shifted by the max for stability
    """

    def __init__(self, op, axis=-1, ID=None):
        self.axis = axis
        super().__init__(op, ID=ID)

    def evaluate(self):
        x = self.inputs[0].value
        e = np.exp(x - np.max(x, axis=self.axis, keepdims=True))
        self._value = e / np.sum(e, axis=self.axis, keepdims=True)

    def backward_inputs(self, grad):
        y = self._value
        return [y * (grad - np.sum(grad * y, axis=self.axis, keepdims=True))]


class LogSoftmax(Operation):
    """Log of the softmax along one axis, computed and returned in float64

    The gradient flowing back is cast to the input's dtype, so float32 models
    still accumulate their loss in 64-bit precision.
    """

    def __init__(self, op, axis=-1, ID=None):
        self.axis = axis
        super().__init__(op, ID=ID)

    def evaluate(self):
        x = np.asarray(self.inputs[0].value, dtype=np.float64)
        shifted = x - np.max(x, axis=self.axis, keepdims=True)
        self._value = shifted - np.log(np.sum(np.exp(shifted), axis=self.axis, keepdims=True))

    def backward_inputs(self, grad):
        softmax = np.exp(self._value)
        op_grad = grad - softmax * np.sum(grad, axis=self.axis, keepdims=True)
        return [op_grad.astype(np.asarray(self.inputs[0].value).dtype, copy=False)]


class LayerNorm(Operation):
    """Layer normalization over the last axis with a learned scale and shift

    y = (x - mean(x)) / sqrt(var(x) + eps) * weight + bias
    """

    def __init__(self, op, weight, bias, eps=1e-5, ID=None):
        self.eps = eps
        super().__init__(op, weight, bias, ID=ID)

    def evaluate(self):
        x, weight, bias = (op.value for op in self.inputs)
        mu = np.mean(x, axis=-1, keepdims=True)
        var = np.mean(np.square(x - mu), axis=-1, keepdims=True)
        self._inv_std = 1 / np.sqrt(var + self.eps)
        self._normed = (x - mu) * self._inv_std
        self._value = self._normed * weight + bias

    def backward_inputs(self, grad):
        op, weight, bias = self.inputs
        width = self._normed.shape[-1]
        op_grad = weight_grad = bias_grad = None
        if op.requires_grad:
            d_normed = grad * weight.value
            op_grad = self._inv_std * (
                d_normed
                - np.mean(d_normed, axis=-1, keepdims=True)
                - self._normed * np.mean(d_normed * self._normed, axis=-1, keepdims=True))
        if weight.requires_grad:
            weight_grad = (grad * self._normed).reshape(-1, width).sum(axis=0)
        if bias.requires_grad:
            bias_grad = grad.reshape(-1, width).sum(axis=0)
        return [op_grad, weight_grad, bias_grad]
