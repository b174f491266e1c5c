import sys
from pathlib import Path

import hypothesis
import pytest

from canvaseg.autodiff import set_finite_checks

sys.path.insert(0, str(Path(__file__).parent))

hypothesis.settings.register_profile(
    "canvaseg",
    deadline=None,
    max_examples=25,
    derandomize=True,
    database=None,
)
hypothesis.settings.load_profile("canvaseg")


@pytest.fixture(autouse=True, scope="session")
def _finite_checks():
    # every forward op must produce finite values; enforce across the suite
    set_finite_checks(True)
    yield
    set_finite_checks(False)
