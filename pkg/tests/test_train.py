import numpy as np
import pytest

from sessrec import graph as G
from sessrec import model as M
from sessrec import synth as S
from sessrec import train as TR
from sessrec.data import vocab_hash
from sessrec.evaluate import popularity_baseline
from sessrec.model import Hyperparams
from sessrec.optim import Adam
from conftest import indexed_bundle, memorization_bundle


def tiny_hyper(**kw):
    base = dict(d=8, num_layers=1, max_session_len=6, batch_size=8, epochs=2,
                seed=3, beta=0.5)
    base.update(kw)
    return Hyperparams(**base).validate()


@pytest.fixture
def tiny_bundle():
    rng = np.random.default_rng(4)
    sessions = [list(rng.integers(0, 10, size=3)) for _ in range(8)]
    test = [list(rng.integers(0, 10, size=3)) for _ in range(3)]
    return indexed_bundle(sessions, 10, test_sessions=test)


class TestTrainLoop:
    def test_zero_epochs(self, tiny_bundle):
        result = TR.train(tiny_bundle, tiny_hyper(epochs=0))
        assert result.history == [] and result.best_epoch is None

    def test_fixed_seed_identical_loss_traces(self, tiny_bundle):
        a = TR.train(tiny_bundle, tiny_hyper())
        b = TR.train(tiny_bundle, tiny_hyper())
        assert [h["mean_loss"] for h in a.history] == [h["mean_loss"] for h in b.history]
        for name in a.params.names():
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_loss_decreases_on_memorization_fixture(self):
        bundle = memorization_bundle()
        bundle.sessions_test = bundle.sessions_train[:2]
        bundle.test = bundle.train[:4]
        hyper = tiny_hyper(d=16, epochs=15, lr=0.01, batch_size=20, beta=0.1)
        result = TR.train(bundle, hyper)
        assert result.history[-1]["mean_loss"] < result.history[0]["mean_loss"]

    def test_graph_immutability(self, tiny_bundle):
        graph = G.build_global_graph(tiny_bundle.sessions_train, 10,
                                     G.GraphConfig(3))
        tiny_bundle.graph = graph
        tiny_bundle.graph_epsilon = 3
        before = {k: v for k, v in graph.edges.items()}
        dense_before = G.row_normalize(graph).matrix.toarray()
        TR.train(tiny_bundle, tiny_hyper())
        assert graph.edges == before
        np.testing.assert_array_equal(G.row_normalize(graph).matrix.toarray(),
                                      dense_before)

    def test_ablation_toggles_produce_distinct_models(self, tiny_bundle):
        variants = {
            "full": tiny_hyper(),
            "no_spl": tiny_hyper(beta=0.0),
            "no_att": tiny_hyper(use_attention=False),
            "no_pos": tiny_hyper(use_reverse_pos=False),
        }
        tables = {}
        for name, hyper in variants.items():
            tables[name] = TR.train(tiny_bundle, hyper).params["item_emb"].data
        names = list(tables)
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                assert not np.array_equal(tables[names[i]], tables[names[j]])


class TestCheckpoint:
    def _trained(self, tiny_bundle, tmp_path):
        hyper = tiny_hyper(epochs=1)
        result = TR.train(tiny_bundle, hyper, out_dir=tmp_path)
        return hyper, result

    def test_round_trip_bit_exact(self, tiny_bundle, tmp_path):
        hyper, result = self._trained(tiny_bundle, tmp_path)
        vhash = vocab_hash(tiny_bundle.vocab)
        params, state, hyper2, got_hash = TR.load_checkpoint(
            tmp_path / "last.ckpt", expected_vocab_hash=vhash)
        assert got_hash == vhash and hyper2 == hyper
        for name in result.params.names():
            np.testing.assert_array_equal(params[name].data,
                                          result.params[name].data)
        # re-saving reproduces the exact bytes
        adam = Adam(params.tensors, lr=hyper.lr, l2=hyper.l2)
        adam.load_state_dict(state)
        TR.save_checkpoint(tmp_path / "again.ckpt", params, adam, hyper2, vhash)
        assert (tmp_path / "again.ckpt").read_bytes() == \
               (tmp_path / "last.ckpt").read_bytes()

    def test_corrupted_file(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(TR.CheckpointError):
            TR.load_checkpoint(bad)

    def test_vocab_hash_mismatch(self, tiny_bundle, tmp_path):
        self._trained(tiny_bundle, tmp_path)
        with pytest.raises(TR.CheckpointError, match="hash mismatch"):
            TR.load_checkpoint(tmp_path / "last.ckpt",
                               expected_vocab_hash="0" * 64)

    def test_truncated_file(self, tiny_bundle, tmp_path):
        self._trained(tiny_bundle, tmp_path)
        raw = (tmp_path / "last.ckpt").read_bytes()
        (tmp_path / "cut.ckpt").write_bytes(raw[:len(raw) // 2])
        with pytest.raises(TR.CheckpointError):
            TR.load_checkpoint(tmp_path / "cut.ckpt")


class TestSynth:
    def test_zero_noise_sessions_are_chain_walks(self):
        spec = S.SynthSpec(n_items=30, n_sessions=40, n_chains=3, noise=0.0, seed=1)
        bundle, chains = S.synth_dataset(spec)
        nxt = S.chain_next_map(spec, chains, bundle.vocab)
        for s in bundle.sessions_train + bundle.sessions_test:
            for a, b in zip(s.items, s.items[1:]):
                assert nxt.get(a) == b

    def test_full_noise_has_no_chain_signal(self):
        spec = S.SynthSpec(n_items=100, n_sessions=300, n_chains=5, noise=1.0, seed=2)
        bundle, chains = S.synth_dataset(spec)
        assert S.chain_oracle_p1(bundle, spec, chains) < 0.1

    def test_deterministic_per_seed(self):
        a, _ = S.synth_dataset(S.SynthSpec(n_items=40, n_sessions=50, n_chains=4,
                                           seed=9))
        b, _ = S.synth_dataset(S.SynthSpec(n_items=40, n_sessions=50, n_chains=4,
                                           seed=9))
        assert [s.items for s in a.sessions_train] == [s.items for s in b.sessions_train]

    def test_default_spec_oracle_beats_popularity(self):
        spec = S.SynthSpec()  # n=200, 2000 sessions, 20 chains, noise 0.2, seed 7
        bundle, chains = S.synth_dataset(spec)
        oracle_p1 = S.chain_oracle_p1(bundle, spec, chains)
        pop = popularity_baseline(bundle, ks=[10])
        assert oracle_p1 > pop.precision[10] + 0.2
