"""Exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Bad or unknown configuration (exit code 1)."""


class ContractViolation(RuntimeError):
    """A runtime invariant broke, e.g. a push-sum weight hit zero (exit code 2)."""
