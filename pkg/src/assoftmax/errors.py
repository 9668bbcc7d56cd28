class ContractError(ValueError):
    """A precondition on the arguments was violated."""


class InvalidInputError(ContractError):
    """Input vector is empty or contains NaN/Inf."""


class ConfigError(ContractError):
    """A hyper-parameter lies outside its legal range."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite result."""


class NumericDivergenceError(NumericError):
    def __init__(self, step, detail=""):
        self.step = step
        msg = f"numeric divergence at step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class LoadError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
