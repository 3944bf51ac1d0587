"""
Error handling utilities.

This module provides the exception hierarchy shared by the sortation
pipeline, a standardized error response, and a retry mechanism used by the
PLC client.
"""

import functools
import logging
import time
import random
from typing import Dict, Any, Optional, List, Type, Union, Callable

# Configure logging
logger = logging.getLogger(__name__)


# Base exception classes
class ArisError(Exception):
    """Base exception for all sortation errors."""
    pass


class ConfigError(ArisError):
    """Exception for invalid run configuration values."""
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class GeometryError(ArisError):
    """Exception for invalid boxes and coordinate operations."""
    pass


class CoordinateSpaceError(GeometryError):
    """Exception for operations mixing two coordinate spaces."""
    pass


class DegenerateBoxError(GeometryError):
    """Exception for boxes with zero area."""
    pass


class ControlError(ArisError):
    """Exception for paddle mapping and flick timing errors."""
    pass


class OutOfBeltError(ControlError):
    """Exception for coordinates that fall outside the belt."""
    pass


class ProtocolError(ArisError):
    """
    Exception for malformed controller packets.

    Every subclass carries a stable ``reason`` code that is written to the
    operations log.
    """
    reason = 'protocol'

    def __init__(self, message, raw=None, frame_id=None):
        self.raw = raw
        self.frame_id = frame_id
        super().__init__(message)


class BadMagicError(ProtocolError):
    """Exception for lines that do not start with the protocol magic."""
    reason = 'bad_magic'


class FramingError(ProtocolError):
    """Exception for lines that are not newline terminated ASCII."""
    reason = 'framing'


class NonMonotoneFrameError(ProtocolError):
    """Exception for frame ids that do not increase within a session."""
    reason = 'non_monotone'


class PaddleRangeError(ProtocolError):
    """Exception for paddle numbers outside the sorter."""
    reason = 'paddle_range'


class NonNumericFieldError(ProtocolError):
    """Exception for fields that are not unsigned integers."""
    reason = 'non_numeric'


class GrammarError(ProtocolError):
    """Exception for any other violation of the line grammar."""
    reason = 'grammar'


class EvaluationError(ArisError):
    """Exception for detection evaluation errors."""
    pass


class EmptyGroundTruthError(EvaluationError):
    """Exception raised when recall is undefined."""
    pass


class AnnotationFormatError(EvaluationError):
    """Exception for unreadable annotation or detection lines."""
    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class PlcConnectionError(ArisError):
    """Exception for connection errors to the PLC emulator."""
    pass


class ErrorResponse:
    """
    Standardized error response class.

    This class provides a consistent way to represent errors returned by
    the HTTP API and the command line.
    """

    def __init__(
        self,
        success: bool = False,
        message: str = "An error occurred",
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        """
        Initialize the error response.

        Args:
            success: Whether the operation was successful (always False for errors)
            message: Human-readable error message
            error_code: Optional error code for programmatic handling
            details: Optional dictionary with additional error details
        """
        self.success = success
        self.message = message
        self.error_code = error_code
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert the error response to a dictionary.

        Returns:
            Dictionary representation of the error
        """
        result = {
            "success": self.success,
            "message": self.message
        }

        if self.error_code:
            result["error_code"] = self.error_code

        if self.details:
            result["details"] = self.details

        return result

    def __str__(self) -> str:
        """String representation of the error response."""
        if self.error_code:
            return f"Error {self.error_code}: {self.message}"
        return self.message


def retry(
    exceptions: Union[Type[Exception], List[Type[Exception]]],
    tries: int = 4,
    delay: float = 1,
    backoff: float = 2,
    jitter: float = 0.1,
    logger_name: Optional[str] = None
) -> Callable:
    """
    Retry decorator with exponential backoff.

    Args:
        exceptions: The exception(s) to catch for retrying
        tries: Number of times to try before giving up
        delay: Initial delay between retries in seconds
        backoff: Backoff multiplier e.g. value of 2 will double the delay each retry
        jitter: Jitter factor to add randomness to delay
        logger_name: Logger name for logging retries, defaults to this module

    Returns:
        The decorated function
    """
    exceptions_to_catch = exceptions
    if not isinstance(exceptions, list):
        exceptions_to_catch = [exceptions]

    def decorator(func: Callable) -> Callable:
        logger_to_use = logger
        if logger_name:
            logger_to_use = logging.getLogger(logger_name)

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            mtries, mdelay = tries, delay
            func_name = func.__qualname__

            while mtries > 1:
                try:
                    return func(*args, **kwargs)
                except tuple(exceptions_to_catch) as e:
                    jitter_amount = random.uniform(-jitter, jitter)
                    effective_delay = mdelay * (1 + jitter_amount)

                    logger_to_use.warning(
                        f"Exception in {func_name}: {str(e)}. "
                        f"Retrying in {effective_delay:.2f} seconds... "
                        f"({mtries-1} tries left)"
                    )

                    time.sleep(effective_delay)

                    mtries -= 1
                    mdelay *= backoff

            # Last attempt
            return func(*args, **kwargs)

        return wrapper

    return decorator


def handle_exception(
    exception: Exception,
    service_name: str,
    operation: str,
    additional_context: Optional[Dict[str, Any]] = None
) -> ErrorResponse:
    """
    Create a standardized error response from an exception.

    Args:
        exception: The exception that occurred
        service_name: Name of the service (e.g., "PLC server")
        operation: The operation that was being performed
        additional_context: Optional additional context for the error

    Returns:
        Standardized ErrorResponse object
    """
    # Unexpected failures get a traceback, domain errors do not
    logger.error(
        f"Error in {service_name} during {operation}: {str(exception)}",
        exc_info=not isinstance(exception, ArisError)
    )

    error_code = None
    if isinstance(exception, ProtocolError):
        error_code = exception.reason.upper()
    elif isinstance(exception, ConfigError):
        error_code = "CONFIG"
    elif isinstance(exception, ArisError):
        error_code = type(exception).__name__.replace('Error', '').upper()

    details = {
        "service": service_name,
        "operation": operation,
        "exception_type": type(exception).__name__
    }

    if isinstance(exception, ConfigError):
        details["field"] = exception.field

    if additional_context:
        details.update(additional_context)

    return ErrorResponse(
        success=False,
        message=f"Error in {service_name}: {str(exception)}",
        error_code=error_code,
        details=details
    )
