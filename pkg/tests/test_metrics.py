import math
import random

import numpy as np
import pytest

from uppsqa.datamodel import PredictionRecord, SpeechPair, Utterance
from uppsqa.metrics import (
    preference_accuracy,
    preference_accuracy_excluding_ties,
    spearman_srcc,
    system_level_srcc,
)


def rec(x, y, pref):
    return PredictionRecord(x, y, 0.0, 0.0, pref)


def lab(x, y, s_p):
    return SpeechPair(x, y, None, None, s_p)


def brute_force_accuracy(preds, labels):
    by_key = {(p.x_id, p.y_id): p.pref_hat for p in preds}
    correct = 0
    for lab_ in labels:
        v = by_key[(lab_.x_id, lab_.y_id)]
        predicted = 1 if v > 0 else (-1 if v < 0 else 0)
        if predicted == lab_.s_p:
            correct += 1
    return correct / len(labels)


def synthetic(seed, n):
    rng = random.Random(seed)
    preds, labels = [], []
    for i in range(n):
        pref = rng.choice([0.0, rng.uniform(-0.99, 0.99)])
        preds.append(rec(f"x{i}", f"y{i}", pref))
        labels.append(lab(f"x{i}", f"y{i}", rng.choice([-1, 0, 1])))
    return preds, labels


def test_all_correct():
    preds = [rec("a", "b", 0.3), rec("c", "d", -0.1), rec("e", "f", 0.0)]
    labels = [lab("a", "b", 1), lab("c", "d", -1), lab("e", "f", 0)]
    assert preference_accuracy(preds, labels) == 1.0


def test_one_of_four_wrong():
    preds = [rec("a", "b", 0.3), rec("c", "d", -0.1), rec("e", "f", 0.2), rec("g", "h", 0.9)]
    labels = [lab("a", "b", 1), lab("c", "d", -1), lab("e", "f", -1), lab("g", "h", 1)]
    # errors: sgn(|sgn(0.2) - (-1)|) = sgn(2) = 1 for the third pair only
    assert preference_accuracy(preds, labels) == 0.75


def test_tied_label_nonzero_prediction_is_error():
    assert preference_accuracy([rec("a", "b", 0.3)], [lab("a", "b", 0)]) == 0.0


def test_zero_prediction_on_decided_label_is_error():
    assert preference_accuracy([rec("a", "b", 0.0)], [lab("a", "b", 1)]) == 0.0


def test_excluding_ties():
    preds = [rec("a", "b", 0.3), rec("c", "d", 0.3)]
    labels = [lab("a", "b", 0), lab("c", "d", 1)]
    assert preference_accuracy(preds, labels) == 0.5
    assert preference_accuracy_excluding_ties(preds, labels) == 1.0


@pytest.mark.parametrize("seed", range(3))
def test_accuracy_matches_brute_force(seed):
    preds, labels = synthetic(seed, 1000)
    assert preference_accuracy(preds, labels) == brute_force_accuracy(preds, labels)


def test_accuracy_invariant_to_order():
    preds, labels = synthetic(9, 200)
    rng = random.Random(0)
    shuffled_preds, shuffled_labels = list(preds), list(labels)
    rng.shuffle(shuffled_preds)
    rng.shuffle(shuffled_labels)
    assert preference_accuracy(shuffled_preds, shuffled_labels) == preference_accuracy(preds, labels)


def test_accuracy_errors():
    with pytest.raises(ValueError):
        preference_accuracy([], [])
    with pytest.raises(ValueError):
        preference_accuracy([rec("a", "b", 0.1)], [lab("a", "c", 1)])
    with pytest.raises(ValueError):
        preference_accuracy([rec("a", "b", 0.1)], [lab("a", "b", 1), lab("c", "d", 1)])


# --------------------------------------------------------------------------- SRCC


def rank_formula(a, b):
    """1 - 6 sum d^2 / (n (n^2 - 1)); valid without ties."""
    n = len(a)
    ra = {v: i for i, v in enumerate(sorted(a))}
    rb = {v: i for i, v in enumerate(sorted(b))}
    d2 = sum((ra[x] - rb[y]) ** 2 for x, y in zip(a, b))
    return 1 - 6 * d2 / (n * (n * n - 1))


def test_srcc_identical_and_reversed():
    assert spearman_srcc([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0, abs=1e-12)
    assert spearman_srcc([1, 2, 3], [30, 20, 10]) == pytest.approx(-1.0, abs=1e-12)


def test_srcc_known_value():
    assert rank_formula([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    assert spearman_srcc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_srcc_against_rank_formula():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        a, b = rng.normal(size=n).tolist(), rng.normal(size=n).tolist()
        assert spearman_srcc(a, b) == pytest.approx(rank_formula(a, b), abs=1e-9)


def test_srcc_ties_use_average_ranks():
    # ranks (1.5, 1.5, 3) vs (1, 2, 3): Pearson = 0.8660254...
    assert spearman_srcc([5, 5, 7], [1, 2, 3]) == pytest.approx(math.sqrt(3) / 2, abs=1e-12)


def test_srcc_monotone_transform_invariance():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=30), rng.normal(size=30)
    base = spearman_srcc(a, b)
    assert spearman_srcc(np.exp(a), b) == pytest.approx(base, abs=1e-9)
    assert spearman_srcc(a, 3.0 * b - 7.0) == pytest.approx(base, abs=1e-9)


def test_srcc_errors():
    with pytest.raises(ValueError, match="constant"):
        spearman_srcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError, match="mismatch"):
        spearman_srcc([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman_srcc([1], [1])


# ----------------------------------------------------------------- system level


def manifest(systems):
    return [Utterance(f"{s}_{i}", "w.wav", s, mos) for s, moses in systems.items() for i, mos in enumerate(moses)]


def test_system_srcc_two_systems():
    m = manifest({"A": [4.0, 4.5], "B": [2.0, 2.5]})
    preds = {"A_0": 3.0, "A_1": 3.2, "B_0": 1.0, "B_1": 1.4}
    assert system_level_srcc(preds, m) == pytest.approx(1.0)


def test_system_srcc_against_rank_oracle():
    rng = np.random.default_rng(3)
    systems = {f"s{k}": rng.uniform(1, 5, size=rng.integers(1, 5)).tolist() for k in range(12)}
    m = manifest(systems)
    preds = {u.utt_id: float(rng.normal()) for u in m}
    pred_means, true_means = [], []
    for s, moses in systems.items():
        pred_means.append(np.mean([preds[f"{s}_{i}"] for i in range(len(moses))]))
        true_means.append(np.mean(moses))
    assert system_level_srcc(preds, m) == pytest.approx(rank_formula(pred_means, true_means), abs=1e-9)


def test_one_utterance_per_system_equals_utterance_level():
    m = manifest({f"s{k}": [1.0 + 0.3 * k] for k in range(6)})
    rng = np.random.default_rng(4)
    preds = {u.utt_id: float(rng.normal()) for u in m}
    ids = [u.utt_id for u in m]
    assert system_level_srcc(preds, m) == pytest.approx(
        spearman_srcc([preds[i] for i in ids], [u.mos for u in m]), abs=1e-12
    )


def test_duplicating_a_system_does_not_change_srcc():
    m = manifest({"A": [4.0, 3.0], "B": [2.0], "C": [3.3]})
    preds = {"A_0": 0.9, "A_1": 0.5, "B_0": 0.1, "C_0": 0.6}
    base = system_level_srcc(preds, m)
    dup = m + [Utterance(f"A_dup{i}", "w.wav", "A", u.mos) for i, u in enumerate(m[:2])]
    preds_dup = {**preds, "A_dup0": 0.9, "A_dup1": 0.5}
    assert system_level_srcc(preds_dup, dup) == base


def test_system_srcc_errors():
    m = manifest({"A": [4.0], "B": [2.0]})
    with pytest.raises(KeyError):
        system_level_srcc({"Z_0": 1.0}, m)
    with pytest.raises(ValueError, match="two systems"):
        system_level_srcc({"A_0": 1.0}, m)
