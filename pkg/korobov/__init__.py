__all__ = [
    'cli', 'config', 'construct', 'corpus', 'errors', 'gadgets', 'grid', 'logging_config', 'metrics', 'net', 'storage'
]

# Package version. Managed by scripts/bump_version.py
__version__ = '0.1.0'
