from abc import ABC, abstractmethod
from typing import Dict, Iterator, List, Tuple

import numpy as np

from tensor import Rng, ShapeError, Tensor


class Parameter(Tensor):
    """A trainable leaf tensor owned by a Module."""

    def __init__(self, data):
        super().__init__(np.array(data, copy=True), requires_grad=True)

    def __repr__(self) -> str:
        return f'Parameter(shape={self.shape}, dtype={self.dtype})'


class Module(ABC):
    """Base class for anything that owns parameters.

    Parameters and sub-modules are discovered from instance attributes, including dicts and lists of them, in
    attribute definition order, which fixes parameter names and ordering.
    """

    training: bool = True

    @abstractmethod
    def forward(self, *args, **kwargs):
        """Runs the module."""
        pass

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, (Parameter, Module)):
                        yield f'{name}.{key}', item
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f'{name}.{index}', item

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for name, child in self._children():
            full = f'{prefix}{name}'
            if isinstance(child, Parameter):
                yield full, child
            else:
                yield from child.named_parameters(f'{full}.')

    def named_modules(self, prefix: str = '') -> Iterator[Tuple[str, 'Module']]:
        yield prefix.rstrip('.'), self
        for name, child in self._children():
            if isinstance(child, Module):
                yield from child.named_modules(f'{prefix}{name}.')

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> 'Module':
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def reseed(self, rng: Rng):
        """Hands every stochastic sub-module its own stream split from ``rng`` by module name."""
        for name, module in self.named_modules():
            if hasattr(module, 'set_rng'):
                module.set_rng(rng.split(name or 'root'))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f'state mismatch: missing {missing}, unexpected {unexpected}')
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"parameter '{name}' expects shape {p.shape}, got {value.shape}")
            p.data = np.array(value, dtype=p.dtype, copy=True)
            p.grad = None
