class DMFPError(Exception):
    """Base class for errors raised by this package."""

    kind = "error"

    def to_json(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class DataError(DMFPError, ValueError):
    kind = "data"


class TrainingError(DMFPError, ValueError):
    kind = "training"


class NeighborhoodError(DMFPError, ValueError):
    kind = "neighborhood"


class ConfigError(DMFPError, ValueError):
    kind = "config"

    def __init__(self, message: str, keys=()):
        super().__init__(message)
        self.keys = list(keys)

    def to_json(self) -> dict:
        out = super().to_json()
        if self.keys:
            out["keys"] = self.keys
        return out
