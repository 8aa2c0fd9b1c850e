"""Exception and warning types shared across the pipeline."""


class LtccdError(Exception):
    """Base class for all pipeline errors."""


class PairingError(LtccdError):
    """Two acquisitions cannot form an InSAR pair (track/direction mismatch)."""


class NoReferenceError(LtccdError):
    """No admissible pre-event reference inside the anniversary window."""


class InsufficientStackError(LtccdError):
    """Fewer admissible stack members than the configured minimum."""


class CatalogError(LtccdError):
    """A plan references an acquisition id missing from the catalog."""


class AlignmentError(LtccdError):
    """Grids do not share an identical geotransform/CRS/dimensions."""


class RasterIOError(LtccdError):
    """A raster file could not be read or written."""


class OrderingError(LtccdError):
    """Time-ordered input was not sorted by date."""


class AccountingError(LtccdError):
    """A building cannot be attributed to a region."""


class UndefinedRateError(LtccdError):
    """Rate change is undefined because the baseline rate is zero."""


class EmptyReportError(LtccdError):
    """Agreement metrics requested for an empty point set."""


class BinningError(LtccdError):
    """Histograms do not share bin edges."""


class EmptyRegionError(LtccdError):
    """A stability region contains no usable pixels."""


class CredentialError(LtccdError):
    """The processing service rejected the configured credentials."""


class EmptyStackError(LtccdError):
    """Every job for a plan failed; no products to build a stack from."""


class IntegrityError(LtccdError):
    """A downloaded product failed checksum verification after retry."""


class ConfigError(LtccdError):
    """Run configuration is missing or invalid."""


class DegradedMatchWarning(UserWarning):
    """Some temporal baselines could not be matched within tolerance."""
