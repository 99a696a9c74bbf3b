import numpy as np
import pytest

from curlfd.buffers import SRC_DEMO, SRC_ROLLOUT, DemoBuffer, ReplayBuffer, sample_balanced
from curlfd.env import EnvState, TerminalCause, Transition
from curlfd.episodes import Demonstration, load_episodes, save_episodes
from curlfd.geometry import vec2
from curlfd.tasks import load_task

REACH = load_task("ReachV0")


def make_episode(length, success=True, x0=0.0):
    """Synthetic chained episode marching the gripper upward."""
    transitions = []
    y = -0.2
    for i in range(length):
        s = EnvState(vec2(x0, y))
        y2 = y + 0.001
        last = i == length - 1
        cause = TerminalCause.GOAL if (last and success) else (
            TerminalCause.TIMEOUT if last else TerminalCause.NONE
        )
        r = 1000.0 if cause is TerminalCause.GOAL else -1.0
        transitions.append(
            Transition(s=s, a=np.array([0.0, 0.05]), r=r, s_next=EnvState(vec2(x0, y2)),
                       terminal=last, cause=cause)
        )
        y = y2
    return transitions


def make_demo(length, success=True, x0=0.0, source="Oracle"):
    eps = make_episode(length, success=success, x0=x0)
    return Demonstration(eps, eps[0].s.copy(), success=success, source=source, task_id="ReachV0")


def test_push_episode_counts_transitions():
    buf = DemoBuffer(REACH)
    buf.push_episode(make_demo(37))
    assert len(buf) == 37
    assert buf.n_episodes == 1


def test_failed_episode_rejected_by_demo_buffer():
    buf = DemoBuffer(REACH)
    with pytest.raises(ValueError):
        buf.push_episode(make_demo(5, success=False))
    assert len(buf) == 0


def test_rollout_buffer_fifo_eviction():
    buf = ReplayBuffer(REACH, capacity=10)
    for k in range(15):
        eps = make_episode(1, x0=0.001 * k)
        buf.push(eps[0])
    assert len(buf) == 10
    assert buf.inserted == 15
    # oldest five evicted: stored x0 values are 5..14
    xs = sorted(buf._store.obs[:10, 0])
    assert xs == pytest.approx([0.001 * k for k in range(5, 15)])


def test_empty_episode_rejected():
    with pytest.raises(ValueError):
        ReplayBuffer(REACH).push_episode([])


class TestBalancedSampling:
    def setup_method(self):
        self.demo = DemoBuffer(REACH)
        self.demo.push_episode(make_demo(20))
        self.rollout = ReplayBuffer(REACH)
        self.rollout.push_episode(make_episode(30, success=False))

    def test_half_half_composition(self):
        rng = np.random.default_rng(0)
        batch = sample_balanced(self.demo, self.rollout, 256, rng)
        assert len(batch) == 256
        assert int((batch.src == SRC_DEMO).sum()) == 128
        assert int((batch.src == SRC_ROLLOUT).sum()) == 128

    def test_rollout_empty_falls_back_to_demo(self):
        rng = np.random.default_rng(1)
        empty = ReplayBuffer(REACH)
        batch = sample_balanced(self.demo, empty, 256, rng)
        assert len(batch) == 256
        assert np.all(batch.src == SRC_DEMO)

    def test_demo_empty_falls_back_to_rollout(self):
        rng = np.random.default_rng(2)
        batch = sample_balanced(DemoBuffer(REACH), self.rollout, 64, rng)
        assert np.all(batch.src == SRC_ROLLOUT)

    def test_both_empty_is_error(self):
        with pytest.raises(ValueError):
            sample_balanced(DemoBuffer(REACH), ReplayBuffer(REACH), 8, np.random.default_rng(0))

    def test_odd_batch_is_error(self):
        with pytest.raises(ValueError):
            sample_balanced(self.demo, self.rollout, 7, np.random.default_rng(0))

    def test_source_ratio_over_many_draws(self):
        # binomial concentration oracle: with exact half/half batches the
        # tally over 1e5 draws is 0.5 up to nothing at all
        rng = np.random.default_rng(3)
        demo_draws = 0
        total = 0
        for _ in range(100):
            b = sample_balanced(self.demo, self.rollout, 1000, rng)
            demo_draws += int((b.src == SRC_DEMO).sum())
            total += len(b)
        assert abs(demo_draws / total - 0.5) <= 0.01

    def test_per_source_uniformity_chi_square(self):
        from scipy import stats

        rng = np.random.default_rng(4)
        counts = np.zeros(20)
        draws = 40_000
        for _ in range(draws // 1000):
            b = self.demo.sample(1000, rng)
            # recover indices from the stored y coordinate ladder
            ys = b.obs[:, 1]
            idx = np.rint((ys + 0.2) / 0.001).astype(int)
            for i in idx:
                counts[i] += 1
        chi2 = float(((counts - draws / 20) ** 2 / (draws / 20)).sum())
        # df=19, 99.9th percentile
        assert chi2 < stats.chi2.ppf(0.999, 19)


def test_demo_buffer_never_contains_failed_transitions():
    buf = DemoBuffer(REACH)
    for k in range(3):
        buf.push_episode(make_demo(4, x0=0.01 * k))
    with pytest.raises(ValueError):
        buf.push_episode(make_demo(4, success=False))
    assert len(buf) == 12
    assert all(d.success for d in buf.episodes)


class TestEpisodeFile:
    def test_round_trip(self, tmp_path):
        demos = [make_demo(5, x0=0.0), make_demo(8, x0=0.05, source="Pool")]
        path = tmp_path / "demos.jsonl"
        save_episodes(path, demos)
        loaded = load_episodes(path)
        assert len(loaded) == 2
        for a, b in zip(demos, loaded):
            assert a.source == b.source
            assert a.task_id == b.task_id
            assert len(a) == len(b)
            for ta, tb in zip(a.transitions, b.transitions):
                assert ta.s.almost_equal(tb.s, tol=0.0)
                assert ta.s_next.almost_equal(tb.s_next, tol=0.0)
                assert np.array_equal(ta.a, tb.a)
                assert ta.r == tb.r
                assert ta.cause == tb.cause

    def test_suffix(self):
        demo = make_demo(10)
        suf = demo.suffix_from(7)
        assert len(suf) == 3
        assert suf.start_state.almost_equal(demo.transitions[7].s, tol=0.0)
        assert suf.transitions[-1].cause is TerminalCause.GOAL

    def test_chain_validation(self):
        eps = make_episode(3)
        broken = [eps[0], eps[2]]
        with pytest.raises(ValueError):
            Demonstration(broken, broken[0].s, success=False)
