from pydantic_settings import BaseSettings

__version__ = "0.1.0"


class BadBox:
    """
    Process-wide holder for the active settings.

    The CLI installs resolved settings with ``BadBox(settings)``; library code
    reads them with ``BadBox().get_settings()``. When nothing was installed the
    settings are built from the environment on first access.
    """

    _instance = None

    def __new__(cls, *args, **kwargs):
        if cls._instance is None:
            cls._instance = super(BadBox, cls).__new__(cls)
        return cls._instance

    def __init__(self, settings: BaseSettings | None = None):
        if settings:
            self.settings = settings

    def get_settings(self):
        if not hasattr(self, 'settings'):
            from pybadbox.settings import Settings
            self.settings = Settings()
        return self.settings

    def reset(self) -> None:
        if hasattr(self, 'settings'):
            del self.settings
