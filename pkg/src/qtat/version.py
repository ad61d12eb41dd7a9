"""Package and file-format versions."""

__version__ = "0.1.0"

# version of every serialized file format (sidecar JSON, manifests)
SCHEMA_VERSION = 1
