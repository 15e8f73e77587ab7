class RelayNetError(Exception):
    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class ConfigurationError(RelayNetError):
    def __init__(self, message, key: str | None = None):
        self.key = key
        super().__init__(message if key is None else f"{key}: {message}")


class InstabilityError(RelayNetError):
    pass


class DegenerateInputError(RelayNetError):
    pass


class SingularChainError(RelayNetError):
    pass


class ConservationError(RelayNetError):
    pass
