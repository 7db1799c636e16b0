"""spanclean: training-dynamics label cleaning for span-annotated NER data.

The package trains a small span classifier on a distantly annotated
corpus, tracks each candidate span's classification margin across
epochs, estimates per-polarity margin thresholds from deliberately
mislabeled probe samples, and removes the annotations that fall below
them.  See the ``spanclean`` command-line tool for the end-to-end flow.
"""

from .errors import ConfigError, DataError, NumericError, SpanCleanError

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "SpanCleanError",
    "__version__",
]

__version__ = "0.1.0"
