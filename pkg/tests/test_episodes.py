import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from hazdid.data import PeriodWindows, Spell, episodes_frame, episodes_to_records, spells_frame
from hazdid.episodes import build_episodes, censor_spells
from hazdid.errors import InputError


def _spell(**kw):
    base = dict(subject_id=1, birth_year=1960, exit_age=50.0, event=True, treated=True,
                municipality_id=7)
    base.update(kw)
    return Spell(**base)


def test_spell_crossing_both_boundaries():
    eps = build_episodes([_spell()], PeriodWindows(2002, 2005, 2012))
    assert eps[["start", "stop", "p", "q"]].values.tolist() == [
        [18.0, 42.0, 0, 0], [42.0, 45.0, 1, 0], [45.0, 50.0, 0, 1]]
    assert eps["event"].tolist() == [False, False, True]


def test_spell_inside_pilot_is_not_split():
    # born 1984: ages (18, 20] are lived in 2002 and 2003
    eps = build_episodes([_spell(birth_year=1984, exit_age=20.0)])
    assert eps[["start", "stop", "p", "q"]].values.tolist() == [[18.0, 20.0, 1, 0]]


def test_spell_inside_post_window():
    eps = build_episodes([_spell(birth_year=1990, exit_age=20.0)])
    assert eps[["start", "stop", "p", "q"]].values.tolist() == [[18.0, 20.0, 0, 1]]


def test_after_post_window_all_zero():
    eps = build_episodes([_spell(birth_year=1930, entry_age=18, exit_age=40.0)])
    assert eps[["p", "q"]].values.tolist() == [[0, 0]]


def test_fractional_exit_and_stratum():
    eps = build_episodes([_spell(birth_year=1963, exit_age=40.5)], stratum_width=5)
    assert eps["stop"].tolist() == [39.0, 40.5]
    assert (eps["stratum"] == 1963 // 5).all()


def test_pre_window_flags():
    eps = build_episodes([_spell()], pre_window=(1999, 2002))
    assert eps[["start", "stop", "pre", "p"]].values.tolist() == [
        [18.0, 39.0, 0, 0], [39.0, 42.0, 1, 0], [42.0, 45.0, 0, 1], [45.0, 50.0, 0, 0]]


def test_invalid_spells_name_subject():
    with pytest.raises(InputError, match="17"):
        build_episodes([_spell(subject_id=17, entry_age=30.0, exit_age=30.0)])
    with pytest.raises(InputError, match="18"):
        build_episodes([_spell(subject_id=18, weight=-1.0)])


def test_missing_columns_rejected():
    with pytest.raises(InputError):
        build_episodes(pd.DataFrame({"subject_id": [1], "exit_age": [30.0]}))


def test_windows_validated():
    with pytest.raises(InputError):
        PeriodWindows(2005, 2002, 2012)


def test_per_age_indicator_brute_force():
    rng = np.random.default_rng(1)
    n = 1000
    spells = pd.DataFrame({
        "subject_id": np.arange(n), "birth_year": rng.integers(1930, 1990, n),
        "exit_age": rng.integers(19, 65, n).astype(float), "event": rng.random(n) < 0.3,
        "treated": rng.random(n) < 0.5,
    })
    eps = build_episodes(spells)
    # expand every episode to its unit age intervals and compare with the calendar rule
    reps = (eps["stop"] - eps["start"]).astype(int).to_numpy()
    sid = np.repeat(eps["subject_id"].to_numpy(), reps)
    age = np.concatenate([np.arange(a, b) for a, b in zip(eps["start"].astype(int), eps["stop"].astype(int))])
    got = pd.DataFrame({"subject_id": sid, "age": age,
                        "p": np.repeat(eps["p"].to_numpy(), reps),
                        "q": np.repeat(eps["q"].to_numpy(), reps)})
    expected = []
    for row in spells.itertuples():
        for a in range(18, int(row.exit_age)):
            cal = row.birth_year + a
            expected.append((row.subject_id, a, int(2002 <= cal < 2005), int(2005 <= cal < 2012)))
    assert sorted(map(tuple, got.to_numpy().tolist())) == sorted(expected)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1930, 1995), st.integers(1, 50), st.booleans()),
                min_size=1, max_size=20))
def test_total_exposure_preserved(rows):
    spells = [_spell(subject_id=i, birth_year=b, exit_age=18.0 + dur, event=e)
              for i, (b, dur, e) in enumerate(rows)]
    eps = build_episodes(spells)
    exposure = (eps["stop"] - eps["start"]).groupby(eps["subject_id"]).sum()
    assert exposure.tolist() == [float(dur) for _, dur, _ in rows]
    assert eps["event"].sum() == sum(e for _, _, e in rows)


def test_covariates_carried():
    eps = build_episodes([_spell(covariates={"female": 1})])
    assert (eps["female"] == 1).all()


def test_record_round_trip():
    eps = build_episodes([_spell(), _spell(subject_id=2, treated=False, event=False)])
    again = episodes_frame(episodes_to_records(eps))
    pd.testing.assert_frame_equal(
        again[["start", "stop", "event", "d", "p", "q", "stratum", "weight"]].reset_index(drop=True),
        eps[["start", "stop", "event", "d", "p", "q", "stratum", "weight"]].reset_index(drop=True),
        check_dtype=False)


def test_censor_spells():
    frame = spells_frame([_spell(exit_age=50.0), _spell(subject_id=2, birth_year=1990, exit_age=20.0)])
    out = censor_spells(frame, 2002)
    assert out["exit_age"].tolist() == [42.0]
    assert not out["event"].any()
