"""Word-embedding features and classifiers for multi-channel social-media profiles."""

__version__ = "0.1.0"

# bumped independently of the package version when an on-disk layout changes
FORMAT_VERSIONS = {
    "profiles": 1,
    "tokenized": 1,
    "embeddings": 1,
    "model": 1,
    "report": 1,
}
