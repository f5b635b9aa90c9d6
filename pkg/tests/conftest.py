import numpy as np
import pytest

from maskconver.labels import Categories, PanopticLabel


def make_label(things, shape=(128, 128), n_stuff=1, n_things=2, stuff_rows=None):
    """Label with stuff class 0 as background and ``things`` = [(class_id, mask), ...] painted in order."""
    cats = Categories.synthetic(n_stuff, n_things)
    cls = np.zeros(shape, np.uint16)
    inst = np.zeros(shape, np.uint16)
    if stuff_rows:
        for c, (r0, r1) in stuff_rows.items():
            cls[r0:r1] = c
    for i, (c, m) in enumerate(things, start=1):
        cls[m] = c
        inst[m] = i
    return PanopticLabel(cls, inst, cats)


def l_shape_mask(shape=(128, 128)):
    m = np.zeros(shape, bool)
    m[16:112, 16:40] = True
    m[88:112, 16:112] = True
    return m


@pytest.fixture
def l_shape_label():
    return make_label([(1, l_shape_mask())], n_stuff=1, n_things=1)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
