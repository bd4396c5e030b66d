import json
import math

import numpy as np
import pytest

from iotdns.dataset import default_manufacturers
from iotdns.featurize import bucket, extract_sld, featurize_many
from iotdns.synth import (BURST_WINDOW, DAY, Corpus, DeviceProfile, default_corpus, distinct_corpus,
                          drifted, expected_frequency, generate, generate_boot, load_corpus,
                          rate_corpus)


def one(profile, boots=1, days=1):
    return Corpus((profile,), boots_per_day=boots, days=days)


def test_profile_validation():
    with pytest.raises(ValueError):
        DeviceProfile("x", "X")
    with pytest.raises(ValueError):
        DeviceProfile("x", "X", steady=(("a", -1.0),))
    p = DeviceProfile("x", "X", burst=(("a", 2),))
    with pytest.raises(ValueError):
        Corpus((p, p))


def test_poisson_mean_rate_half():
    p = DeviceProfile("x", "X", steady=(("cloudb", 0.5),), jitter_seed=3)
    counts = [len(tr.events) for tr in generate(one(p, boots=1000), seed=1)]
    assert abs(np.mean(counts) - 30) <= 3 * math.sqrt(30) / math.sqrt(1000)
    assert all(0 < e.t - tr.dhcp_t <= 60 for tr in generate(one(p, boots=20), 2) for e in tr.events)


def test_burst_exact_count():
    p = DeviceProfile("x", "X", burst=(("cloudA", 3),), steady=(("other", 0.3),))
    for tr in generate(one(p, boots=200), seed=4):
        burst = [e for e in tr.events if extract_sld(e.qname) == "cloudA"]
        assert len(burst) == 3
        assert all(0 < e.t - tr.dhcp_t <= BURST_WINDOW for e in burst)


def test_generate_deterministic():
    c = default_corpus(boots_per_day=5, days=2)
    assert generate(c, 7) == generate(c, 7)
    assert generate(c, 7) != generate(c, 8)


def test_generate_order_independent():
    c = default_corpus(boots_per_day=3)
    rev = Corpus(tuple(reversed(c.profiles)), 3)
    by_id = {tr.boot_id: tr for tr in generate(rev, 2)}
    assert all(by_id[tr.boot_id] == tr for tr in generate(c, 2))


def test_dates_and_ids():
    trs = generate(default_corpus(boots_per_day=4, days=3), seed=0)
    assert len(trs) == 30 * 4 * 3
    assert sorted({tr.date.isoformat() for tr in trs}) == ["1970-01-01", "1970-01-02", "1970-01-03"]
    assert len({tr.boot_id for tr in trs}) == len(trs)
    assert all(tr.dhcp_t >= DAY * int(tr.boot_id.split("/d")[1].split("/")[0]) for tr in trs)


def test_expected_frequency_examples():
    p = DeviceProfile("x", "X", steady=(("solo", 0.2),))
    v = expected_frequency(p, 32, 30).as_array()
    assert v[bucket("solo", 32)] == pytest.approx(0.2) and v.sum() == pytest.approx(0.2)
    p = DeviceProfile("x", "X", burst=(("solo", 3),), steady=(("solo", 0.1),))
    assert expected_frequency(p, 32, 30).as_array()[bucket("solo", 32)] == pytest.approx(0.2)
    # half the burst window admits half the burst on average
    p = DeviceProfile("x", "X", burst=(("solo", 4),))
    assert expected_frequency(p, 8, 1).as_array()[bucket("solo", 8)] == pytest.approx(2.0)


def test_featurizer_converges_to_expectation():
    p = load_corpus("default").profiles[0]
    X = featurize_many(generate(one(p, boots=1000), seed=9), 32, 30)
    mu = expected_frequency(p, 32, 30).as_array()
    se = X.std(axis=0, ddof=1) / math.sqrt(len(X))
    assert np.all(np.abs(X.mean(axis=0) - mu) <= 3 * se + 1e-12)


def test_identical_profiles_identical_expectation():
    a = DeviceProfile("a", "M", burst=(("s", 2),), steady=(("s", 0.1), ("t", 0.2)))
    b = DeviceProfile("b", "M", burst=(("s", 2),), steady=(("s", 0.1), ("t", 0.2)), jitter_seed=5)
    assert expected_frequency(a, 16, 30) == expected_frequency(b, 16, 30)


def test_default_corpus_structure():
    c = load_corpus("default")
    assert len(c.profiles) == 30
    m = c.manufacturers()
    assert len(set(m.values())) == 27
    assert m == default_manufacturers()
    amazon = [p for p in c.profiles if p.manufacturer == "Amazon"]
    tplink = [p for p in c.profiles if p.manufacturer == "TP-Link"]
    assert len(amazon) == 3 and len({frozenset(p.slds) for p in amazon}) == 1
    assert len(tplink) == 2 and len({frozenset(p.slds) for p in tplink}) == 1
    sparse = [p for p in c.profiles if not p.burst and sum(r for _, r in p.steady) < 0.05]
    assert len(sparse) == 3
    assert len({p.device_id for p in c.profiles}) == 30


def test_corpus_json_round_trip(tmp_path):
    c = drifted(distinct_corpus(n=4, boots_per_day=2, days=3), day=1)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(c.to_dict()))
    assert load_corpus(p) == c


def test_drift_changes_slds_from_day():
    base = distinct_corpus(n=4, boots_per_day=2, days=4)
    c = drifted(base, day=2, fraction=0.5)
    moved = {p.product for p in c.drift.profiles}
    assert len(moved) == 2
    for tr in generate(c, 1):
        day = int(tr.date.toordinal() - 719163)
        slds = {extract_sld(e.qname) for e in tr.events}
        if tr.label in moved and day >= 2:
            assert all(s.startswith("v2") for s in slds)
        else:
            assert not any(s.startswith("v2") for s in slds)


def test_constructed_corpora_separable():
    for c in (rate_corpus(), distinct_corpus()):
        sigs = [frozenset(bucket(s, 32) for s in p.slds) for p in c.profiles]
        assert len(set(sigs)) == len(sigs)


def test_generate_boot_strictly_after_anchor():
    p = DeviceProfile("x", "X", burst=(("a", 50),))
    tr = generate_boot(p, 1e9, np.random.default_rng(0))
    assert all(e.t > tr.dhcp_t for e in tr.events)
