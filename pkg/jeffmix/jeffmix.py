from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as meta_version

from appdirs import AppDirs

__all__ = ["APP_DIRS", "ConfigError", "version"]


def version() -> str:
    try:
        return meta_version("jeffmix")
    except PackageNotFoundError:
        return "0.0.0+unknown"


APP_DIRS = AppDirs("jeffmix", "jeffmix")


class ConfigError(ValueError):
    """A configuration value failed validation; `field` names the offending key"""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field: str = field
        self.message: str = message
