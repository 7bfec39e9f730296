"""
Named parameter collections with matched gradient buffers.
"""

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from shared.exceptions import ContractViolation
from substrate.rng import RngStream
from substrate.tensor import Tensor


def glorot_uniform(rng: RngStream, shape: Tuple[int, ...], fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit).astype(dtype)


class ParamSet:
    """
    Ordered mapping from unique parameter names to differentiable leaf tensors.

    Each entry's `grad` buffer always has the parameter's shape once
    `zero_grad()` has run; backward passes accumulate into it.
    """

    def __init__(self):
        self._entries: Dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        """
        Register a parameter.

        Raises:
            ContractViolation: If the name is already taken
        """
        if name in self._entries:
            raise ContractViolation(f"Parameter '{name}' is already registered")
        tensor = Tensor(np.array(value, copy=True), requires_grad=True, name=name)
        tensor.grad = np.zeros_like(tensor.data)
        self._entries[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise ContractViolation(f"Unknown parameter '{name}'")

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> List[str]:
        return list(self._entries)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._entries.items())

    @property
    def dtype(self):
        first = next(iter(self._entries.values()), None)
        return first.dtype if first is not None else np.dtype(np.float32)

    def num_values(self) -> int:
        return int(sum(t.data.size for t in self._entries.values()))

    def zero_grad(self) -> None:
        for tensor in self._entries.values():
            tensor.grad = np.zeros_like(tensor.data)

    def gradient(self, name: str) -> np.ndarray:
        tensor = self[name]
        return tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)

    def global_grad_norm(self) -> float:
        total = 0.0
        for name in self._entries:
            g = self.gradient(name)
            total += float(np.sum(np.square(g, dtype=np.float64)))
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm: float) -> float:
        """
        Rescale all gradients so their global L2 norm is at most `max_norm`.

        Returns:
            The norm before clipping
        """
        norm = self.global_grad_norm()
        if np.isfinite(norm) and norm > max_norm > 0:
            scale = max_norm / norm
            for tensor in self._entries.values():
                if tensor.grad is not None:
                    tensor.grad *= np.asarray(scale, dtype=tensor.grad.dtype)
        return norm

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._entries.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Overwrite parameter values in place.

        Raises:
            ContractViolation: If names or shapes disagree
        """
        missing = set(self._entries) - set(state)
        unexpected = set(state) - set(self._entries)
        if missing or unexpected:
            raise ContractViolation(
                f"Parameter names differ: missing={sorted(missing)}, unexpected={sorted(unexpected)}"
            )
        for name, value in state.items():
            tensor = self._entries[name]
            if value.shape != tensor.shape:
                raise ContractViolation(f"Parameter '{name}' has shape {tensor.shape}, got {value.shape}")
            tensor.data = np.array(value, dtype=tensor.dtype, copy=True)

    def astype(self, dtype) -> 'ParamSet':
        """Copy with every parameter cast to `dtype`."""
        return ParamSet.from_arrays({name: t.data.astype(dtype) for name, t in self._entries.items()})

    def copy(self) -> 'ParamSet':
        return ParamSet.from_arrays(self.state_dict())

    def map_values(self, fn) -> 'ParamSet':
        return ParamSet.from_arrays({name: fn(t.data) for name, t in self._entries.items()})

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> 'ParamSet':
        params = cls()
        for name, value in arrays.items():
            params.add(name, value)
        return params

    def flat_index(self, position: int) -> Tuple[str, int]:
        """Map a position in the concatenation of all parameters to (name, flat offset)."""
        for name, tensor in self._entries.items():
            if position < tensor.data.size:
                return name, position
            position -= tensor.data.size
        raise ContractViolation("Parameter position out of range")

    def equals(self, other: 'ParamSet') -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[n].data, other[n].data) for n in self.names())

    def __repr__(self):
        return f"ParamSet({len(self)} tensors, {self.num_values()} values)"


def subset_names(params: ParamSet, prefix: Optional[str]) -> List[str]:
    """Names of parameters under a dotted prefix (all names for None)."""
    if prefix is None:
        return params.names()
    return [n for n in params.names() if n == prefix or n.startswith(prefix + '.')]
