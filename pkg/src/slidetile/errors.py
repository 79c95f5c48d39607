"""Exception hierarchy shared across the pipeline.

Every error carries an exit code so the CLI can map failures to distinct
process statuses (documented in the README).
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NO_TISSUE = 3
EXIT_BACKEND = 4
EXIT_IO = 5
EXIT_DATA = 6


class SlideTileError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigError(SlideTileError):
    exit_code = EXIT_USAGE


class UnsupportedFormat(SlideTileError):
    """Slide container not recognized."""

    exit_code = EXIT_IO


class CorruptPyramid(SlideTileError):
    """Slide level table is truncated or inconsistent."""

    exit_code = EXIT_IO


class InvalidLevel(SlideTileError):
    exit_code = EXIT_USAGE


class EmptyHistogram(SlideTileError):
    exit_code = EXIT_DATA


class NoTissueFound(SlideTileError):
    """Tissue mask came out empty; the slide cannot be tiled."""

    exit_code = EXIT_NO_TISSUE


class ZeroAreaROI(SlideTileError):
    exit_code = EXIT_DATA


class EmptySet(SlideTileError):
    exit_code = EXIT_DATA


class CleaningBackendFailure(SlideTileError):
    """Pen-removal backend failed; the tile passes through uncleaned."""

    exit_code = EXIT_BACKEND


class MaskMissing(SlideTileError):
    exit_code = EXIT_BACKEND


class MaskShapeMismatch(SlideTileError):
    """Mask has wrong dimensions or out-of-range label values."""

    exit_code = EXIT_BACKEND


class SidecarFailure(SlideTileError):
    exit_code = EXIT_BACKEND


class ShapeMismatch(SlideTileError):
    exit_code = EXIT_DATA


class EmptyMatrix(SlideTileError):
    exit_code = EXIT_DATA


class MalformedCSV(SlideTileError):
    exit_code = EXIT_DATA


class InsufficientSets(SlideTileError):
    exit_code = EXIT_DATA


class ZeroDenominator(SlideTileError):
    """No qualified tissue in the ROI; tissue gain is undefined."""

    exit_code = EXIT_DATA


class SpecOutOfBounds(SlideTileError):
    exit_code = EXIT_USAGE


class OutputError(SlideTileError):
    """Writing run outputs failed; a partial-output marker was left behind."""

    exit_code = EXIT_IO
