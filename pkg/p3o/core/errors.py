"""Exception hierarchy shared by the library and the command line.

Every error carries a ``detail`` message and the process ``status_code`` the
CLI exits with when the error escapes a command.
"""


class P3OError(Exception):
    status_code: int = 1

    def __init__(self, detail: str, status_code: int = None):
        super().__init__(detail)
        self.detail = detail

        if status_code is not None:
            self.status_code = status_code


class ConfigurationError(P3OError):
    """Invalid configuration or inconsistent shapes between specs and parameters."""
    status_code = 2


class InputError(P3OError):
    """A caller passed data that violates an operation's precondition."""
    status_code = 2


class NumericError(P3OError):
    """Non-finite values or an unsolvable numeric system."""
    status_code = 3


class StateError(P3OError):
    """Operation not allowed in the current state (cold buffer, terminal env)."""
    status_code = 4


class UnsupportedError(P3OError):
    status_code = 5
