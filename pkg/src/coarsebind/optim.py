"""Adam optimizer shared by pose optimization (numpy) and model training (torch).

The update only uses arithmetic operators, so the same class drives numpy
arrays and torch tensors.  Parameters are updated in place.
"""

from __future__ import annotations


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [p * 0 for p in self.params]
        self.v = [p * 0 for p in self.params]

    def step(self, grads, active=None):
        """Apply one update given gradients aligned with ``self.params``.

        ``active`` is an optional broadcastable 0/1 mask; masked-out entries keep
        their value (used to freeze converged pose samples inside a batch).
        """
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / ((v / bc2) ** 0.5 + self.eps)
            if active is not None:
                update = update * active
            p -= update


class DivergenceGuard:
    """Flags a run whose loss stays above ``factor`` x its early level.

    The early level is the mean of the first ``baseline_steps`` losses, so one
    lucky first batch does not set an unreachable bar.
    """

    def __init__(self, factor=10.0, window=100, baseline_steps=10, what="loss"):
        self.factor = factor
        self.window = window
        self.baseline_steps = baseline_steps
        self.what = what
        self._early = []
        self._above = 0

    def update(self, value):
        from .errors import DivergenceError

        if len(self._early) < self.baseline_steps:
            self._early.append(value)
            return
        baseline = max(sum(self._early) / len(self._early), 1e-12)
        self._above = self._above + 1 if value > self.factor * baseline else 0
        if self._above >= self.window:
            raise DivergenceError(
                f"{self.what} {value:.4g} stayed above {self.factor}x its early level {baseline:.4g} "
                f"for {self.window} steps"
            )
