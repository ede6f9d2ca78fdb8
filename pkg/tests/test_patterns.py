import json

import numpy as np
import pytest

from isaclab.patterns import (CombPattern, IrregularPattern, OfdmNumerology, PatternError,
                              SequenceSpec, SynthesizedPattern, dump_pattern, load_pattern,
                              make_scheme, overhead, pattern_from_dict, realize_grid,
                              scrambling_values, to_irregular, validate, zadoff_chu)


def test_numerology_durations():
    num = OfdmNumerology(256, 16, 15e3)
    assert num.T_s == pytest.approx(1 / 15e3)
    assert num.T == pytest.approx(num.T_s + num.T_cp)
    assert num.N_prime == 272
    with pytest.raises(PatternError):
        OfdmNumerology(256, 256)


@pytest.mark.parametrize("scheme,S,kw,expected", [
    ("A", 4, {}, (0, 0, 0, 0)),
    ("B", 4, {"M": 4}, (0, 2, 0, 2)),
    ("C", 4, {}, (0, 2, 1, 3)),
    ("C", 6, {}, (0, 3, 1, 4, 2, 5)),
    ("C", 12, {}, (0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11)),
    ("D", 4, {"p": 3}, (0, 3, 2, 1)),
    ("E", 4, {}, (0, 3, 1)),
])
def test_make_scheme_offsets(scheme, S, kw, expected):
    assert make_scheme(scheme, S, **kw).offsets == expected


def test_make_scheme_rejects_bad_arguments():
    with pytest.raises(PatternError):
        make_scheme("D", 4, p=2)
    with pytest.raises(PatternError):
        make_scheme("B", 5)
    with pytest.raises(PatternError):
        make_scheme("Z", 4)


def test_wide_comb_a_configuration():
    pat = make_scheme("A", 8, S_sym=2, M=4)
    assert pat == CombPattern(8, 2, (0, 0, 0, 0))


def test_to_irregular_floor_rule():
    irr = to_irregular(CombPattern(4, 2, (0, 3)), 10)
    assert irr.symbols == ((0, (0, 4, 8)), (2, (3, 7)))
    assert irr.n_res == 5 and irr.span == 3


def test_to_irregular_rejects_collision_and_out_of_band():
    syn = SynthesizedPattern(CombPattern(2, 1, (0,)), C_1=2, C_2=0)
    assert validate(syn)
    with pytest.raises(PatternError):
        to_irregular(syn, 8)
    ok = SynthesizedPattern(CombPattern(2, 1, (0,)), C_1=9, C_2=1)
    with pytest.raises(PatternError):
        to_irregular(ok, 8)


def test_synthesized_expansion():
    syn = SynthesizedPattern(CombPattern(5, 1, (0,)), C_1=1, C_2=1, S_F=3, S_PT=3, U_F=2, U=3)
    irr = to_irregular(syn, 15)
    assert irr.symbols == ((0, (0, 5, 10)), (1, (1, 4)), (4, (1, 4)), (7, (1, 4)))


def test_validate_irregular():
    assert validate(IrregularPattern(((0, (1, 2)), (3, (0,))))) == []
    assert validate(IrregularPattern(((3, (1,)), (1, (0,)))))
    assert validate(IrregularPattern(((0, (2, 1)),)))


def test_overhead_full_grid_is_one():
    irr = IrregularPattern(tuple((s, tuple(range(12))) for s in range(14)))
    assert overhead(irr, 12) == 1.0


def test_zadoff_chu_unit_magnitude_and_cazac():
    z = zadoff_chu(37)
    assert np.allclose(np.abs(z), 1)
    corr = [abs(np.vdot(z, np.roll(z, k))) for k in range(1, 37)]
    assert max(corr) < 1e-9


def test_scrambling_qpsk_reproducible():
    a = scrambling_values(SequenceSpec("qpsk", seed=3), [4, 5])
    b = scrambling_values(SequenceSpec("qpsk", seed=3), [4, 5])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.allclose(np.abs(np.concatenate(a)), 1)


def test_realize_grid_mask_matches_pattern():
    num = OfdmNumerology(16, 1)
    g = realize_grid(CombPattern(4, 2, (0, 1)), num)
    assert g.span_symbols == 3
    assert g.rs_symbols == [0, 2]
    assert list(np.flatnonzero(g.mask[2])) == [1, 5, 9, 13]
    assert not g.mask[1].any()


def test_json_roundtrip(tmp_path):
    syn = SynthesizedPattern(CombPattern(4, 10, (0, 1)), 1, 3, S_F=3, U_F=3)
    path = tmp_path / "p.json"
    path.write_text(dump_pattern(syn, name="x"))
    back, doc = load_pattern(path)
    assert back == syn and doc["name"] == "x"
    irr = IrregularPattern(((0, (1, 2)), (4, (3,))))
    assert pattern_from_dict(json.loads(dump_pattern(irr))) == irr


def test_json_rejects_inconsistent_m():
    with pytest.raises(PatternError):
        pattern_from_dict({"kind": "comb", "S_sub": 4, "offsets": [0, 1], "M": 3})
    with pytest.raises(PatternError):
        pattern_from_dict({"kind": "comb"})
