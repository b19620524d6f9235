import numpy as np
import pytest

from src.symbols import (ALL_CLASSES, BASIC_CLASSES, COMPLEX_CLASSES, SYMBOL_LIBRARY, basic_layout,
                         render_symbol)


def test_library_covers_all_classes():
    assert set(SYMBOL_LIBRARY) == set(ALL_CLASSES) == set(range(1, 33))
    assert all(SYMBOL_LIBRARY[c].kind == 'complex' for c in COMPLEX_CLASSES)
    assert all(SYMBOL_LIBRARY[c].kind == 'basic' for c in BASIC_CLASSES)
    assert len({SYMBOL_LIBRARY[c].name for c in ALL_CLASSES}) == 32


@pytest.mark.parametrize('class_id', ALL_CLASSES)
def test_render_is_deterministic_and_inked(class_id):
    a = render_symbol(class_id, 80)
    b = render_symbol(class_id, 80)
    assert (a.width, a.height) == (80, 80)
    assert np.array_equal(a.data, b.data)
    assert (np.asarray(a.data) < 128).any()


def test_no_complex_class_is_a_quarter_turn_of_another():
    base = {c: np.asarray(render_symbol(c, 80).data) for c in COMPLEX_CLASSES}
    for a in COMPLEX_CLASSES:
        for rotation in (0, 90, 180, 270):
            turned = np.asarray(render_symbol(a, 80, rotation).data)
            for b in COMPLEX_CLASSES:
                if a != b:
                    assert not np.array_equal(turned, base[b]), (a, rotation, b)


def test_rotation_matches_numpy_quarter_turns():
    upright = np.asarray(render_symbol(7, 64).data)
    assert np.array_equal(np.asarray(render_symbol(7, 64, 90).data), np.rot90(upright, 1))
    assert np.array_equal(np.asarray(render_symbol(7, 64, 270).data), np.rot90(upright, 3))


def test_basic_symbols_carry_their_text():
    plain = np.asarray(render_symbol(26, 120, text='').data)
    labelled = np.asarray(render_symbol(26, 120, text='XI-101').data)
    assert (labelled < 128).sum() > (plain < 128).sum()


def test_render_rejects_bad_arguments():
    with pytest.raises(ValueError):
        render_symbol(0, 80)
    with pytest.raises(ValueError):
        render_symbol(5, 80, 45)
    with pytest.raises(ValueError):
        render_symbol(5, 8)
    with pytest.raises(ValueError):
        basic_layout(3, 120)


def test_seal_pot_circle_sits_on_its_rectangle():
    layout = basic_layout(31, 120)
    cx, cy, r = layout['circle']
    _, top, _, _ = layout['rect']
    assert cy + r == top
