# Implementation of reverse-mode Automatic Differentiation over numpy tensors
import itertools

import numpy as np


class IDAllocator:
    """Allocate unique, increasing IDs for created operations.

    An operation is always created after its inputs, so its ID is larger than
    theirs; sorting a graph by ID therefore gives a topological order.
    """

    _counter = itertools.count()

    @classmethod
    def allocate_id(cls):
        return next(cls._counter)


def as_operation(x):
    """Wrap plain values (scalars, arrays) in a Constant."""
    return x if isinstance(x, Operation) else Constant(x)


def unbroadcast(grad, shape):
    """Sum a gradient down to ``shape``, undoing numpy broadcasting.

    INPUTS
    =======
    grad: gradient array with the broadcast (output) shape.
    shape: shape of the input that was broadcast.

    RETURNS
    ========
    the gradient reduced to ``shape``.
    """
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Operation:
    """Super-class of all the elementary operations/functions as well as
       variables and constants.

    Operations are evaluated once, when they are created. Changing the value of
    a Var afterwards does not update operations already built from it; build
    the graph again instead.
    """

    def __init__(self, *inputs, ID=None):
        if ID is None:
            ID = IDAllocator.allocate_id()
        self.ID = ID
        self.inputs = tuple(as_operation(op) for op in inputs)
        self.requires_grad = any(op.requires_grad for op in self.inputs)
        self._value = None
        if self.inputs:
            self.evaluate()

    @property
    def value(self):
        return self._value

    @property
    def shape(self):
        return np.shape(self._value)

    @property
    def ndim(self):
        return np.ndim(self._value)

    def __add__(self, other):
        return Addition(self, other)

    def __radd__(self, other):
        return Addition(other, self)

    def __sub__(self, other):
        return Subtraction(self, other)

    def __rsub__(self, other):
        return Subtraction(other, self)

    def __mul__(self, other):
        return Multiplication(self, other)

    def __rmul__(self, other):
        return Multiplication(other, self)

    def __truediv__(self, other):
        return Division(self, other)

    def __rtruediv__(self, other):
        return Division(other, self)

    def __pow__(self, power, modulo=None):
        return Power(self, power)

    def __rpow__(self, other):
        return Power(other, self)

    def __matmul__(self, other):
        return MatMul(self, other)

    def __rmatmul__(self, other):
        return MatMul(other, self)

    def __pos__(self):
        return self

    def __neg__(self):
        return Neg(self)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose(self, axes or None)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return Sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean(self, axis=axis, keepdims=keepdims)

    def evaluate(self):
        """ Evaluate the value of the operation from the values of its inputs

        stores the value internally
        """
        raise NotImplementedError

    def backward_inputs(self, grad):
        """Propagate the gradient of the output back to the inputs

        :param grad: gradient of the final scalar w.r.t. this operation's value
        :return: one gradient (or None when not needed) per input
        """
        raise NotImplementedError

    def backprop(self, seed=None):
        """Reverse-mode accumulation from this operation down to its leaves

        :param seed: gradient of the output; defaults to 1 for scalar operations
        :return: dictionary from Var ID to the accumulated gradient
        """
        if seed is None:
            if np.size(self._value) != 1:
                raise Exception("Gradient seed required for non-scalar operation.")
            seed = np.ones_like(self._value)
        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node.ID in nodes or not node.requires_grad:
                continue
            nodes[node.ID] = node
            stack.extend(node.inputs)

        grads = {self.ID: seed}
        leaves = {}
        for ID in sorted(nodes, reverse=True):
            node = nodes[ID]
            grad = grads.pop(ID, None)
            if grad is None:
                continue
            if not node.inputs:
                leaves[ID] = grad
                continue
            for op, op_grad in zip(node.inputs, node.backward_inputs(grad)):
                if op_grad is None or not op.requires_grad:
                    continue
                if op.ID in grads:
                    grads[op.ID] = grads[op.ID] + op_grad
                else:
                    grads[op.ID] = op_grad
        return leaves

    def der(self, op):
        """Compute the derivative of the operation with respect to a variable

        :param op: the variable to take derivative against
        :return: the derivative value, shaped like the variable
        """
        return self.grad([op])[0]

    def grad(self, ops, seed=None):
        """Compute the gradient of the operation with respect to a set of variables

        :param ops: the variables to take gradient against
        :param seed: optional output gradient for non-scalar operations
        :return: list of gradients, one per variable, in order
        """
        leaves = self.backprop(seed)
        return [leaves[op.ID] if op.ID in leaves else np.zeros_like(op.value)
                for op in ops]


class Var(Operation):
    """Represent a variable (scalar or tensor)
    """
    def __init__(self, value=None, ID=None, requires_grad=True):
        super().__init__(ID=ID)
        self._value = value
        self.requires_grad = requires_grad

    @property
    def value(self):
        if self._value is None:
            raise Exception("Variable value not set yet")
        return self._value

    def set_value(self, value):
        """Set/change the value of the variable

        :param value: the value to set to
        """
        self._value = value


class Constant(Operation):
    """Represent a constant (scalar or tensor)
    """
    def __init__(self, value=None, ID=None):
        if value is None:
            raise Exception("Cannot have not-valued constant")
        super().__init__(ID=ID)
        self._value = value
        self.requires_grad = False


class Addition(Operation):
    """Addition between two ops
    """
    def evaluate(self):
        self._value = self.inputs[0].value + self.inputs[1].value

    def backward_inputs(self, grad):
        a, b = self.inputs
        return [unbroadcast(grad, a.shape) if a.requires_grad else None,
                unbroadcast(grad, b.shape) if b.requires_grad else None]


class Subtraction(Operation):
    """First op subtracted by second op
    """
    def evaluate(self):
        self._value = self.inputs[0].value - self.inputs[1].value

    def backward_inputs(self, grad):
        a, b = self.inputs
        return [unbroadcast(grad, a.shape) if a.requires_grad else None,
                unbroadcast(-grad, b.shape) if b.requires_grad else None]


class Multiplication(Operation):
    """Multiply two ops elementwise
    """
    def evaluate(self):
        self._value = self.inputs[0].value * self.inputs[1].value

    def backward_inputs(self, grad):
        a, b = self.inputs
        return [unbroadcast(grad * b.value, a.shape) if a.requires_grad else None,
                unbroadcast(grad * a.value, b.shape) if b.requires_grad else None]


class Division(Operation):
    """first op divided by second op
    """
    def evaluate(self):
        self._value = self.inputs[0].value / self.inputs[1].value

    def backward_inputs(self, grad):
        a, b = self.inputs
        a_grad = b_grad = None
        if a.requires_grad:
            a_grad = unbroadcast(grad / b.value, a.shape)
        if b.requires_grad:
            b_grad = unbroadcast(-grad * a.value / (b.value * b.value), b.shape)
        return [a_grad, b_grad]


class Power(Operation):
    """Raise first op to the power of second op
    """
    def evaluate(self):
        self._value = self.inputs[0].value ** self.inputs[1].value

    def backward_inputs(self, grad):
        base, exponent = self.inputs
        base_grad = exponent_grad = None
        if base.requires_grad:
            base_grad = unbroadcast(
                grad * exponent.value * base.value ** (exponent.value - 1), base.shape)
        if exponent.requires_grad:
            # base must be > 0 here!
            exponent_grad = unbroadcast(
                grad * self._value * np.log(base.value), exponent.shape)
        return [base_grad, exponent_grad]


class Neg(Operation):
    """Negation
    """
    def evaluate(self):
        self._value = -self.inputs[0].value

    def backward_inputs(self, grad):
        return [-grad]


class MatMul(Operation):
    """Matrix product of two ops, batched over leading axes like ``np.matmul``
    """
    def evaluate(self):
        self._value = np.matmul(self.inputs[0].value, self.inputs[1].value)

    def backward_inputs(self, grad):
        a, b = self.inputs
        a_value, b_value = np.asarray(a.value), np.asarray(b.value)
        a_grad = b_grad = None
        if a.requires_grad:
            a_grad = unbroadcast(np.matmul(grad, np.swapaxes(b_value, -1, -2)), a.shape)
        if b.requires_grad:
            if b_value.ndim == 2:
                # weight matrix shared across the batch: fold leading axes
                b_grad = (a_value.reshape(-1, a_value.shape[-1]).T
                          @ grad.reshape(-1, grad.shape[-1]))
            else:
                b_grad = unbroadcast(np.matmul(np.swapaxes(a_value, -1, -2), grad), b.shape)
        return [a_grad, b_grad]


class Transpose(Operation):
    """Permute the axes of an op (reverse them when no axes are given)
    """
    def __init__(self, op, axes=None, ID=None):
        self.axes = None if axes is None else tuple(axes)
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.transpose(self.inputs[0].value, self.axes)

    def backward_inputs(self, grad):
        if self.axes is None:
            return [np.transpose(grad)]
        return [np.transpose(grad, np.argsort(self.axes))]


class Reshape(Operation):
    """Give an op a new shape without changing its data
    """
    def __init__(self, op, shape, ID=None):
        self.new_shape = tuple(shape)
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.reshape(self.inputs[0].value, self.new_shape)

    def backward_inputs(self, grad):
        return [np.reshape(grad, self.inputs[0].shape)]


class Sum(Operation):
    """Sum of the entries of an op, over all axes or the given ones
    """
    def __init__(self, op, axis=None, keepdims=False, ID=None):
        self.axis = axis
        self.keepdims = keepdims
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.sum(self.inputs[0].value, axis=self.axis, keepdims=self.keepdims)

    def backward_inputs(self, grad):
        shape = self.inputs[0].shape
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return [np.broadcast_to(grad, shape).copy()]


class Mean(Operation):
    """Mean of the entries of an op, over all axes or the given ones
    """
    def __init__(self, op, axis=None, keepdims=False, ID=None):
        self.axis = axis
        self.keepdims = keepdims
        super().__init__(op, ID=ID)

    def evaluate(self):
        self._value = np.mean(self.inputs[0].value, axis=self.axis, keepdims=self.keepdims)

    def backward_inputs(self, grad):
        shape = self.inputs[0].shape
        count = np.size(self.inputs[0].value) // max(np.size(self._value), 1)
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return [np.broadcast_to(grad / count, shape).copy()]


class Gather(Operation):
    """Look up rows of a table op by integer indices (embedding lookup)
    """
    def __init__(self, table, indices, ID=None):
        self.indices = np.asarray(indices)
        super().__init__(table, ID=ID)

    def evaluate(self):
        self._value = self.inputs[0].value[self.indices]

    def backward_inputs(self, grad):
        table = self.inputs[0].value
        table_grad = np.zeros_like(table, dtype=grad.dtype)
        np.add.at(table_grad, self.indices.reshape(-1),
                  grad.reshape(-1, *table.shape[1:]))
        return [table_grad]


class TakeAlongLast(Operation):
    """Pick one entry per row along the last axis of an op
    """
    def __init__(self, op, indices, ID=None):
        self.indices = np.asarray(indices)
        super().__init__(op, ID=ID)

    def evaluate(self):
        picked = np.take_along_axis(self.inputs[0].value, self.indices[..., None], axis=-1)
        self._value = picked[..., 0]

    def backward_inputs(self, grad):
        op_grad = np.zeros_like(self.inputs[0].value, dtype=grad.dtype)
        np.put_along_axis(op_grad, self.indices[..., None], grad[..., None], axis=-1)
        return [op_grad]
