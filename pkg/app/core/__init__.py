#app/core/__init__.py
from app.core.config import Settings, get_settings
from app.core.errors import (
    PowerInstabilityError, InvalidParameterError, DomainError, UnsupportedCombinationError,
    UnsupportedKindError, OutOfRangeError, SystemParseError, ConfigError, ReportIOError,
)
