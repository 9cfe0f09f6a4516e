"""Error taxonomy for the extractor."""
from __future__ import annotations


class ExtractorError(Exception):
    """Base class for everything this package raises on purpose."""


class ManifestError(ExtractorError):
    """The manifest or a file it references is unusable."""


class ModelLoadFailure(ExtractorError):
    """The model reference cannot be resolved to a runnable model."""


class ImageDecodeFailure(ExtractorError):
    """One image file could not be decoded (skipped with a warning)."""


class EmptyTrace(ExtractorError):
    """No decodable images at all: nothing to pre-test."""


class ProviderFailure(ExtractorError):
    """The embedding provider failed after retries, or returned junk."""
