"""Exception hierarchy shared by all fmfsdm modules."""


class FmfsdmError(Exception):
    """Base class for domain errors raised by the simulator."""


class DomainError(FmfsdmError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ModeNotSupportedError(FmfsdmError, ValueError):
    def __init__(self, m, n, max_order):
        self.m, self.n, self.max_order = m, n, max_order
        super().__init__(
            f"mode HG{m}{n} (m={m}, n={n}) is not supported: "
            f"need m >= 0, n >= 0 and m + n <= {max_order}"
        )


class ScenarioError(FmfsdmError):
    """Scenario validation failed; ``violations`` holds every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid scenario")


class InstabilityError(FmfsdmError):
    def __init__(self, step, reason):
        self.step = step
        self.reason = reason
        super().__init__(f"integration unstable with step {step:g} m: {reason}")


class NonUniqueSteadyStateError(FmfsdmError):
    """The coupling graph is disconnected so the steady state is not unique."""


class InfeasibleDeviceError(FmfsdmError):
    """Cross-talk leakage exceeds the total transmittance of a channel."""


class NoSignalError(FmfsdmError):
    """Every net coincidence rate is non-positive."""


class CalibrationError(FmfsdmError):
    """Calibration did not converge; ``best`` carries the best-so-far fit."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class StageError(FmfsdmError):
    """A pipeline stage produced NaN or negative power."""

    def __init__(self, stage, detail=""):
        self.stage = stage
        super().__init__(f"stage '{stage}' produced invalid values {detail}".strip())


class ContractError(FmfsdmError, ValueError):
    """An input violates a documented precondition (e.g. unsorted stream)."""


class MissingScenarioFilesError(FmfsdmError, FileNotFoundError):
    """Required scenario files are absent; ``missing`` lists them."""

    def __init__(self, directory, missing):
        self.directory = str(directory)
        self.missing = list(missing)
        super().__init__(f"missing scenario files in {self.directory}: {', '.join(self.missing)}")
