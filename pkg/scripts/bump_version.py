#!/usr/bin/env python3
"""Bump korobov.__version__ in place and print the new version."""
import argparse
import re
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
INIT = ROOT / 'korobov' / '__init__.py'

pat = re.compile(r"__version__\s*=\s*'([^']+)'")


def bump(version: str, part: str = 'patch') -> str:
    parts = version.split('.')
    # normalize to 3 parts
    while len(parts) < 3:
        parts.append('0')
    try:
        major, minor, patch = map(int, parts[:3])
    except ValueError:
        raise ValueError(f'not a numeric version: {version!r}') from None
    if part == 'major':
        return f'{major + 1}.0.0'
    if part == 'minor':
        return f'{major}.{minor + 1}.0'
    if part == 'patch':
        return f'{major}.{minor}.{patch + 1}'
    raise ValueError(f'unknown version part {part!r}')


def main(argv=None, init: Path = INIT) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('--part', choices=('major', 'minor', 'patch'), default='patch')
    parser.add_argument('--dry-run', action='store_true', help='print the new version without writing it')
    args = parser.parse_args(argv)

    text = init.read_text(encoding='utf-8')
    m = pat.search(text)
    if not m:
        print(f'No __version__ found in {init}', file=sys.stderr)
        return 1
    new_ver = bump(m.group(1), args.part)
    if not args.dry_run:
        init.write_text(pat.sub(f"__version__ = '{new_ver}'", text, count=1), encoding='utf-8')
    print(new_ver)
    return 0


if __name__ == '__main__':
    sys.exit(main())
