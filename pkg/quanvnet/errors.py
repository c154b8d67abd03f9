#!/usr/bin/env python3

from typing import Optional


class QuanvError(Exception):
    """Base class for every error raised by quanvnet"""


class SizeError(QuanvError, ValueError):
    """Qubit count outside the supported range"""


class QubitIndexError(QuanvError, IndexError):
    """Gate addresses a qubit that does not exist"""


class ShapeError(QuanvError, ValueError):
    """Length, dimension or qubit-count mismatch"""


class ArgumentError(QuanvError, ValueError):
    """Scalar argument outside its valid range"""


class EmptyInputError(QuanvError, ValueError):
    """Operation needs at least one element"""


class TopologyError(QuanvError, ValueError):
    """Topology text could not be parsed or failed validation"""


class DivergenceError(QuanvError, ArithmeticError):
    """Training loss stopped being finite"""


class ConfigError(QuanvError):
    """Experiment configuration is missing, invalid or points at missing files"""


class ParseError(QuanvError, ValueError):
    def __init__(self, message: str, row: Optional[int] = None):
        """Dataset parse failure

        Args:
            message (str): What went wrong
            row (int, optional): 1-based row number of the offending record
        """
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
