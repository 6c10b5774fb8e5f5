"""
Dense network model - parameters of a small MLP and its optimizer state
All arrays are float64; weights[k] has shape (layer_sizes[k+1], layer_sizes[k])
"""

import itertools
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .types import OutputKind, HiddenActivation

# Matrix2D is a 2-D float64 numpy array (row-major)
Matrix2D = np.ndarray

_NET_UIDS = itertools.count(1)


@dataclass(frozen=True)
class OutputActivation:
    """Output activation: Identity, or a sigmoid rescaled to (lo, hi)"""
    kind: OutputKind = OutputKind.IDENTITY
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind is OutputKind.SIGMOID_SCALED and not self.lo < self.hi:
            raise ValueError(f"SigmoidScaled requires lo < hi, got lo={self.lo}, hi={self.hi}")

    @staticmethod
    def identity() -> "OutputActivation":
        return OutputActivation(OutputKind.IDENTITY)

    @staticmethod
    def sigmoid_scaled(lo: float, hi: float) -> "OutputActivation":
        return OutputActivation(OutputKind.SIGMOID_SCALED, float(lo), float(hi))


@dataclass
class DenseNet:
    """
    MLP parameters.
    `version` increases on every in-place parameter change so forward
    caches taken before the change are recognised as stale.
    `uid` is unique per instance for the life of the process; copies get a new one.
    """
    layer_sizes: List[int]
    weights: List[Matrix2D]
    biases: List[np.ndarray]
    hidden_activation: HiddenActivation = HiddenActivation.RELU
    output_activation: OutputActivation = field(default_factory=OutputActivation.identity)
    version: int = 0
    uid: int = field(default_factory=lambda: next(_NET_UIDS), init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("weights/biases count must equal number of layers - 1")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if w.shape != expected:
                raise ValueError(f"weights[{k}] has shape {w.shape}, expected {expected}")
            if b.shape != (self.layer_sizes[k + 1],):
                raise ValueError(f"biases[{k}] has shape {b.shape}, expected ({self.layer_sizes[k + 1]},)")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in declaration order: w0, b0, w1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy(self) -> "DenseNet":
        return DenseNet(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
            version=0,
        )

    def same_topology(self, other: "DenseNet") -> bool:
        return list(self.layer_sizes) == list(other.layer_sizes)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])


@dataclass
class ParamGrads:
    """Gradients mirroring DenseNet parameter shapes"""
    weights: List[Matrix2D]
    biases: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.arrays())))

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads([w * factor for w in self.weights], [b * factor for b in self.biases])


@dataclass
class ForwardCache:
    """Per-layer pre/post activations from one forward call"""
    net_uid: int
    version: int
    inputs: np.ndarray                  # (batch, in)
    pre_activations: List[np.ndarray]   # z_k, (batch, out_k)
    post_activations: List[np.ndarray]  # h_k, (batch, out_k)
    squeezed: bool                      # forward was called with a 1-D vector


@dataclass
class AdamState:
    """First/second moment estimates mirroring the parameter list"""
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @staticmethod
    def for_net(net: DenseNet, beta1: float = 0.9, beta2: float = 0.999,
                eps_adam: float = 1e-8) -> "AdamState":
        params = net.parameters()
        return AdamState(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0, beta1=beta1, beta2=beta2, eps_adam=eps_adam,
        )

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.t, self.beta1, self.beta2, self.eps_adam)


@dataclass
class NetRecord:
    """A network plus its optional optimizer state, as stored in checkpoints"""
    net: DenseNet
    adam: Optional[AdamState] = None
