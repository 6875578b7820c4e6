class SchemaMismatch(Exception):
    """Dataset, vocab or checkpoint layout differs from what this code expects."""
