import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from streamanon import evaluation as ev
from oracles import eer_sweep, levenshtein

scores = st.lists(st.integers(0, 30).map(lambda v: v / 10), min_size=1, max_size=15)
words = st.lists(st.sampled_from("abcde"), max_size=8)


class TestEER:
    def test_separated(self):
        assert ev.eer(ev.ScoreSet([0.9, 0.8], [0.1, 0.2]))[0] == 0.0

    def test_three_by_three(self):
        assert ev.eer(ev.ScoreSet([0.9, 0.7, 0.3], [0.8, 0.2, 0.1]))[0] == pytest.approx(1 / 3)

    def test_identical_multisets(self):
        s = [0.1, 0.4, 0.4, 0.9]
        assert ev.eer(ev.ScoreSet(s, s))[0] == pytest.approx(0.5)

    def test_threshold_reproduces_rate(self):
        g, i = np.array([0.9, 0.7, 0.3]), np.array([0.8, 0.2, 0.1])
        rate, t = ev.eer(ev.ScoreSet(g, i))
        # an exact crossing: accepting score >= t gives FAR == FRR == rate
        assert (i >= t).mean() == pytest.approx(rate) and (g < t).mean() == pytest.approx(rate)

    def test_empty(self):
        with pytest.raises(ValueError):
            ev.eer(ev.ScoreSet([], [0.1]))

    @settings(max_examples=100)
    @given(g=scores, i=scores)
    def test_matches_sweep_oracle(self, g, i):
        assert ev.eer(ev.ScoreSet(g, i))[0] == pytest.approx(eer_sweep(g, i), abs=1e-12)

    @settings(max_examples=50)
    @given(g=scores, i=scores)
    def test_monotone_transform_invariance(self, g, i):
        f = lambda v: np.exp(3 * np.asarray(v)) - 7  # noqa: E731
        assert ev.eer(ev.ScoreSet(f(g), f(i)))[0] == pytest.approx(ev.eer(ev.ScoreSet(g, i))[0], abs=1e-12)

    @settings(max_examples=50)
    @given(g=scores, i=scores)
    def test_bounds_and_swap(self, g, i):
        r, _ = ev.eer(ev.ScoreSet(g, i))
        assert 0.0 <= r <= 1.0
        # swapping roles mirrors the ROC around the chance diagonal
        neg = ev.eer(ev.ScoreSet(-np.asarray(g), -np.asarray(i)))[0]
        assert ev.eer(ev.ScoreSet(i, g))[0] == pytest.approx(neg, abs=1e-12)


class TestWER:
    def test_examples(self):
        assert ev.wer("a b c".split(), "a b c".split()) == 0.0
        assert ev.wer("a b c".split(), "a x c".split()) == pytest.approx(1 / 3)
        assert ev.wer(["a"], []) == 1.0
        with pytest.raises(ValueError):
            ev.wer([], ["a"])

    @settings(max_examples=200)
    @given(a=words, b=words)
    def test_matches_recursive_oracle(self, a, b):
        assert ev.edit_distance(a, b) == levenshtein(tuple(a), tuple(b))

    @settings(max_examples=100)
    @given(a=words.filter(bool), b=words, perm=st.permutations("abcde"))
    def test_relabel_and_bound(self, a, b, perm):
        m = dict(zip("abcde", perm))
        assert ev.wer([m[w] for w in a], [m[w] for w in b]) == ev.wer(a, b)
        assert ev.wer(a, b) <= max(1.0, len(b) / len(a))

    def test_corpus(self):
        assert ev.corpus_wer([["a", "b"], ["c"]], [["a"], ["c", "d"]]) == pytest.approx(2 / 3)
        with pytest.raises(ValueError):
            ev.corpus_wer([["a"]], [])


class TestUAR:
    def test_examples(self):
        assert ev.uar(np.eye(4) * 5) == 1.0
        assert ev.uar([[8, 2], [4, 6]]) == pytest.approx(0.7)
        assert ev.uar(np.ones((5, 5))) == pytest.approx(0.2)

    @settings(max_examples=50)
    @given(cm=hnp.arrays(np.int64, (4, 4), elements=st.integers(0, 20)).filter(lambda m: (m.sum(1) > 0).all()),
           k=st.integers(1, 9), row=st.integers(0, 3))
    def test_row_scaling_invariance(self, cm, k, row):
        scaled = cm.astype(float)
        scaled[row] *= k
        assert ev.uar(scaled) == pytest.approx(ev.uar(cm))

    def test_errors(self):
        with pytest.raises(ValueError, match="support"):
            ev.uar([[1, 0], [0, 0]])
        with pytest.raises(ValueError):
            ev.uar([[1, 2, 3]])
        with pytest.raises(ValueError):
            ev.uar([[1, -1], [0, 1]])


def test_readers(tmp_path):
    (tmp_path / "s.csv").write_text("trial_id,label,score\n1,target,0.9\n2,nontarget,0.2\n3,target,0.4\n")
    s = ev.read_scores(tmp_path / "s.csv")
    assert s.genuine.tolist() == [0.9, 0.4] and s.impostor.tolist() == [0.2]
    (tmp_path / "b.csv").write_text("trial_id,label,score\n1,maybe,0.9\n")
    with pytest.raises(ValueError, match=":2:"):
        ev.read_scores(tmp_path / "b.csv")
    (tmp_path / "t.txt").write_text("a b  c\n\nd\n")
    assert ev.read_transcripts(tmp_path / "t.txt") == [["a", "b", "c"], [], ["d"]]
    (tmp_path / "cm.csv").write_text("8,2\n4,6\n")
    assert ev.uar(ev.read_confusion(tmp_path / "cm.csv")) == pytest.approx(0.7)
