"""
Material models.

This module defines the material classes recognised by the detector and the
states a fragment passes through on its way to a collection bin.
"""

import enum


class MaterialClass(enum.Enum):
    """Enumeration of the detected material classes."""
    METAL = 'metal'
    CIRCUIT_BOARD = 'circuit_board'
    PLASTIC = 'plastic'

    @property
    def index(self):
        """Class index used in YOLO annotation files."""
        return MATERIAL_CLASSES.index(self)

    @property
    def label(self):
        """Human readable label for report tables."""
        return self.value.replace('_', ' ').title()

    @classmethod
    def from_index(cls, index):
        """Return the class for a YOLO class index."""
        if not 0 <= index < len(MATERIAL_CLASSES):
            raise ValueError(f"Unknown class index: {index}")
        return MATERIAL_CLASSES[index]

    @classmethod
    def parse(cls, value):
        """
        Parse a class from an index, a value or a common alias.

        Args:
            value (str|int|MaterialClass): The class to parse

        Returns:
            MaterialClass: The parsed class

        Raises:
            ValueError: If the value does not name a class
        """
        if isinstance(value, MaterialClass):
            return value
        if isinstance(value, int):
            return cls.from_index(value)

        text = str(value).strip().lower().replace('-', '_').replace(' ', '_')
        if text.isdigit():
            return cls.from_index(int(text))
        if text in _ALIASES:
            return _ALIASES[text]
        raise ValueError(f"Unknown material class: {value!r}")


# Index order of the annotation files
MATERIAL_CLASSES = (MaterialClass.METAL, MaterialClass.CIRCUIT_BOARD, MaterialClass.PLASTIC)

_ALIASES = {
    'metal': MaterialClass.METAL,
    'metals': MaterialClass.METAL,
    'circuit_board': MaterialClass.CIRCUIT_BOARD,
    'circuit_boards': MaterialClass.CIRCUIT_BOARD,
    'circuitboard': MaterialClass.CIRCUIT_BOARD,
    'board': MaterialClass.CIRCUIT_BOARD,
    'boards': MaterialClass.CIRCUIT_BOARD,
    'pcb': MaterialClass.CIRCUIT_BOARD,
    'plastic': MaterialClass.PLASTIC,
    'plastics': MaterialClass.PLASTIC,
}


class ParticleState(enum.Enum):
    """Enumeration of the states of a fragment on the line."""
    ON_BELT = 'on_belt'
    IN_FLIGHT = 'in_flight'
    BINNED = 'binned'


class BinOutcome(enum.Enum):
    """Enumeration of the two collection bins."""
    POSITIVE = 'positive'  # Flicked by a paddle
    NEGATIVE = 'negative'  # Continued on its natural trajectory
