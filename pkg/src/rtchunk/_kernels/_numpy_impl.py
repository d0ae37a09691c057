"""Pure numpy MLP kernel, the fallback when the compiled extension is absent.

Mirrors the API of ``_fastmlp`` exactly: same constructor, same cache layout,
same results up to BLAS rounding.
"""

from __future__ import annotations

import numpy as np

ACT_TANH = 0
ACT_IDENTITY = 1


class NumpyMlp:
    """Feed-forward net with a shared hidden activation and linear output.

    Weights are (out_dim, in_dim) row-major float64; the activation applies
    to every layer except the last.
    """

    backend = "numpy"

    def __init__(self, weights, biases, activation: int = ACT_TANH):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        if activation not in (ACT_TANH, ACT_IDENTITY):
            raise ValueError(f"unknown activation code {activation}")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("weight/bias shape mismatch")
        for wa, wb in zip(self.weights[:-1], self.weights[1:]):
            if wb.shape[1] != wa.shape[0]:
                raise ValueError("layer width mismatch")
        self.activation = activation
        self.in_dim = self.weights[0].shape[1]
        self.out_dim = self.weights[-1].shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = w @ h + b
            if i < last and self.activation == ACT_TANH:
                h = np.tanh(h)
        return h

    def forward_cached(self, x: np.ndarray):
        """Forward pass that also returns hidden post-activations for the VJP."""
        h = np.asarray(x, dtype=np.float64)
        hs = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = w @ h + b
            if i < last:
                if self.activation == ACT_TANH:
                    h = np.tanh(h)
                hs.append(h)
        return h, hs

    def vjp_input(self, hs, cot: np.ndarray) -> np.ndarray:
        """Pull a cotangent on the output back to the input.

        ``hs`` is the cache from :meth:`forward_cached` for the same input.
        """
        g = np.asarray(cot, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            g = self.weights[i].T @ g
            if i > 0 and self.activation == ACT_TANH:
                # d/dz tanh(z) = 1 - tanh(z)^2, and hs holds tanh(z)
                g = g * (1.0 - hs[i - 1] * hs[i - 1])
        return g
