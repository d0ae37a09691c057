"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violated a documented precondition.

    The message names the violated inequality so callers can surface it
    directly (e.g. ``"d <= s"``).
    """


class ConfigError(ValueError):
    """Invalid configuration file, flag combination, or checkpoint mismatch."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite at step {step}: {loss!r}")
        self.step = step
        self.loss = loss


class GuidanceNumericsError(RuntimeError):
    """Non-finite values appeared inside the guided sampling loop."""

    def __init__(self, tau: float, detail: str = "non-finite iterate"):
        super().__init__(f"{detail} at flow time tau={tau:.6g}")
        self.tau = tau


class StallError(RuntimeError):
    """The real-time controller ran out of actions before a new chunk landed."""


class ProtocolError(RuntimeError):
    """Malformed or out-of-contract message on the inference socket."""
