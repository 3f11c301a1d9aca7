import importlib.util
from pathlib import Path

import pytest

SCRIPT = Path(__file__).resolve().parents[1] / 'scripts' / 'bump_version.py'


@pytest.fixture(scope='module')
def bumper():
    spec = importlib.util.spec_from_file_location('bump_version', SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.mark.parametrize('version,part,expected', [
    ('0.1.0', 'patch', '0.1.1'),
    ('0.1.9', 'patch', '0.1.10'),
    ('0.1.4', 'minor', '0.2.0'),
    ('1.2.3', 'major', '2.0.0'),
    ('2', 'patch', '2.0.1'),
])
def test_bump(bumper, version, part, expected):
    assert bumper.bump(version, part) == expected


def test_bad_input(bumper):
    with pytest.raises(ValueError):
        bumper.bump('1.x.0')
    with pytest.raises(ValueError):
        bumper.bump('1.0.0', 'build')


def test_rewrites_init(bumper, tmp_path, capsys):
    init = tmp_path / '__init__.py'
    init.write_text("# Package version\n__version__ = '0.1.0'\n", encoding='utf-8')
    assert bumper.main(['--part', 'minor', '--dry-run'], init=init) == 0
    assert "'0.1.0'" in init.read_text(encoding='utf-8')
    assert bumper.main(['--part', 'minor'], init=init) == 0
    assert init.read_text(encoding='utf-8') == "# Package version\n__version__ = '0.2.0'\n"
    assert capsys.readouterr().out.split() == ['0.2.0', '0.2.0']


def test_missing_version(bumper, tmp_path):
    init = tmp_path / '__init__.py'
    init.write_text('', encoding='utf-8')
    assert bumper.main([], init=init) == 1
