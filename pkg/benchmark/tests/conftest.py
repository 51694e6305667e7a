import os
import shutil

import pytest

from benchmark.geom3d import Box9DoF
from benchmark.tests.utils import build_sequence, moving_boxes


@pytest.fixture
def datadir(tmpdir, request):
    '''
    Fixture responsible for searching a folder with the same name of test
    module and, if available, moving all contents to a temporary directory so
    tests can use them freely.
    '''
    filename = request.module.__file__
    test_dir, _ = os.path.splitext(filename)

    if os.path.isdir(test_dir):
        shutil.copytree(test_dir, str(tmpdir), dirs_exist_ok=True)

    return tmpdir


@pytest.fixture
def unit_cube():
    return Box9DoF((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))


@pytest.fixture
def sequence_factory(tmpdir):
    def make(sequence_id='seq-0000', boxes=None, **kwargs):
        return build_sequence(tmpdir, sequence_id, boxes or moving_boxes(5), **kwargs)
    return make
