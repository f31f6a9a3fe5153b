"""Audio pipeline: trim/pad, utterance mixing, batching, WAV I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from wavrq.audio import (
    AudioBatch,
    MixConfig,
    Waveform,
    load_wav,
    make_batches,
    mix_utterances,
    read_manifest,
    save_wav,
    trim_pad,
)

TARGET = 14 * 16000  # 224000 samples


def wav_of(n, value=0.1, seed=None):
    if seed is None:
        return Waveform(np.full(n, value, dtype=np.float32))
    return Waveform(np.random.default_rng(seed).uniform(-0.5, 0.5, n).astype(np.float32))


def simple_batch(n_items=4, valid=6000, total=8000, seed=0):
    rng = np.random.default_rng(seed)
    items = np.zeros((n_items, total), dtype=np.float32)
    items[:, :valid] = rng.uniform(-0.5, 0.5, (n_items, valid)).astype(np.float32)
    return AudioBatch(items, np.full(n_items, valid, dtype=np.int64),
                      np.zeros(n_items, dtype=bool))


class TestWaveform:
    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty audio"):
            Waveform(np.array([]))

    def test_rejects_wrong_rate(self):
        with pytest.raises(ValueError, match="16000"):
            Waveform(np.ones(10), sample_rate=8000)


class TestTrimPad:
    def test_identity_at_target(self):
        w = wav_of(TARGET, seed=1)
        out, valid = trim_pad(w, TARGET)
        assert valid == TARGET
        assert np.array_equal(out.samples, w.samples)

    def test_pad_is_exact_zero(self):
        # 10 s input against the 14 s budget: 64000 zeros appended
        w = wav_of(160000, seed=2)
        out, valid = trim_pad(w, TARGET)
        assert len(out) == TARGET
        assert valid == 160000
        assert np.array_equal(out.samples[:160000], w.samples)
        assert np.all(out.samples[160000:] == 0.0)
        assert out.samples[160000:].tobytes() == b"\x00" * (64000 * 4)

    def test_trim_window_range_and_determinism(self):
        # valid starts enumerate to [0, 300000 - 224000] = [0, 76000]
        w = wav_of(300000, seed=3)
        starts = set()
        for s in range(40):
            out, _ = trim_pad(w, TARGET, np.random.default_rng(s))
            i = np.flatnonzero(w.samples == out.samples[0])
            match = [j for j in i if np.array_equal(w.samples[j:j + TARGET], out.samples)]
            assert match and 0 <= match[0] <= 76000
            starts.add(match[0])
        assert len(starts) > 1  # actually random
        a, _ = trim_pad(w, TARGET, np.random.default_rng(7))
        b, _ = trim_pad(w, TARGET, np.random.default_rng(7))
        assert np.array_equal(a.samples, b.samples)

    def test_bad_target(self):
        with pytest.raises(ValueError, match="target_len"):
            trim_pad(wav_of(10), 0)

    @given(n=st.integers(1, 5000), target=st.integers(1, 5000))
    @settings(max_examples=50, deadline=None)
    def test_length_contract(self, n, target):
        out, valid = trim_pad(wav_of(n, seed=0), target, np.random.default_rng(0))
        assert len(out) == target
        assert valid == min(n, target)
        assert np.all(out.samples[valid:] == 0.0)


class TestMixUtterances:
    def test_zero_prob_bit_identical(self):
        batch = simple_batch()
        out = mix_utterances(batch, MixConfig(utterance_mix_prob=0.0, seed=1))
        assert np.array_equal(out.items, batch.items)
        assert out.items.tobytes() == batch.items.tobytes()
        assert not out.mixed_flags.any()

    def test_needs_two_items(self):
        one = simple_batch(n_items=1)
        with pytest.raises(ValueError, match="insufficient batch"):
            mix_utterances(one, MixConfig(utterance_mix_prob=0.5))

    def test_silent_secondary_leaves_primary(self):
        batch = simple_batch(n_items=2)
        batch.items[1, :] = 0.0  # secondary all-zero: additive identity
        out = mix_utterances(batch, MixConfig(utterance_mix_prob=1.0, seed=0))
        # item 0 mixed with silent item 1 must be unchanged
        assert np.allclose(out.items[0], batch.items[0])

    def test_unselected_items_bit_identical(self):
        batch = simple_batch(n_items=8, seed=3)
        out = mix_utterances(batch, MixConfig(utterance_mix_prob=0.4, seed=5))
        unmixed = ~out.mixed_flags
        assert unmixed.any()
        for i in np.flatnonzero(unmixed):
            assert out.items[i].tobytes() == batch.items[i].tobytes()

    def test_pure_function_of_inputs(self):
        batch = simple_batch(n_items=6, seed=4)
        a = mix_utterances(batch, MixConfig(seed=11))
        b = mix_utterances(batch, MixConfig(seed=11))
        assert np.array_equal(a.items, b.items)
        assert np.array_equal(a.mixed_flags, b.mixed_flags)

    def test_mix_fraction_statistics(self):
        # mean mixed fraction over 10000 trials within 3 SE of p = 0.2
        batch = simple_batch(n_items=25, valid=900, total=1000, seed=6)
        cfg = MixConfig(utterance_mix_prob=0.2)
        trials = 10000
        count = 0
        for s in range(trials):
            out = mix_utterances(batch, cfg, np.random.default_rng(s))
            count += int(out.mixed_flags.sum())
        n = trials * 25
        p_hat = count / n
        se = np.sqrt(0.2 * 0.8 / n)
        assert abs(p_hat - 0.2) < 3 * se

    def test_mix_indicator_chi_square(self):
        # Bernoulli(0.2) at alpha = 0.01, single dof
        batch = simple_batch(n_items=25, valid=900, total=1000, seed=6)
        cfg = MixConfig(utterance_mix_prob=0.2)
        count = 0
        trials = 4000
        for s in range(trials):
            out = mix_utterances(batch, cfg, np.random.default_rng(1_000_000 + s))
            count += int(out.mixed_flags.sum())
        n = trials * 25
        expected = np.array([0.2 * n, 0.8 * n])
        observed = np.array([count, n - count])
        chi2 = float(((observed - expected) ** 2 / expected).sum())
        assert chi2 < stats.chi2.ppf(0.99, df=1)

    def test_energy_bound(self):
        # ||p + s|| <= ||p|| + ||s|| (Cauchy-Schwarz), so energies obey
        # E_mix <= E_p + E_s + 2 sqrt(E_p E_s)
        batch = simple_batch(n_items=2, seed=7)
        cfg = MixConfig(utterance_mix_prob=1.0, seed=3)
        out = mix_utterances(batch, cfg, np.random.default_rng(3))
        for i in range(2):
            if not out.mixed_flags[i]:
                continue
            e_mix = float(np.sum(out.items[i].astype(np.float64) ** 2))
            e_p = float(np.sum(batch.items[i].astype(np.float64) ** 2))
            added = out.items[i] - batch.items[i]
            e_s = float(np.sum(added.astype(np.float64) ** 2))
            assert e_mix <= e_p + e_s + 2 * np.sqrt(e_p * e_s) + 1e-6


class TestMakeBatches:
    def test_exact_division(self):
        corpus = [wav_of(5000, seed=i) for i in range(50)]
        batches = make_batches(corpus, 25, seed=0, target_len=6000)
        assert len(batches) == 2
        assert all(b.items.shape == (25, 6000) for b in batches)

    def test_partial_batch_dropped(self):
        corpus = [wav_of(5000, seed=i) for i in range(60)]
        batches = make_batches(corpus, 25, seed=0, target_len=6000)
        assert len(batches) == 2  # 10 items dropped

    def test_deterministic_under_seed(self):
        corpus = [wav_of(5000, seed=i) for i in range(30)]
        a = make_batches(corpus, 10, seed=42, target_len=6000)
        b = make_batches(corpus, 10, seed=42, target_len=6000)
        assert all(np.array_equal(x.items, y.items) for x, y in zip(a, b))
        c = make_batches(corpus, 10, seed=43, target_len=6000)
        assert any(not np.array_equal(x.items, y.items) for x, y in zip(a, c))

    def test_bad_args(self):
        with pytest.raises(ValueError, match="batch_size"):
            make_batches([wav_of(10)], 0, seed=0)
        with pytest.raises(ValueError, match="empty corpus"):
            make_batches([], 4, seed=0)

    def test_padding_recomputable_from_valid_len(self):
        corpus = [wav_of(3000 + 100 * i, seed=i) for i in range(8)]
        (batch,) = make_batches(corpus, 8, seed=1, target_len=4000)
        for i in range(8):
            assert np.all(batch.items[i, batch.valid_len[i]:] == 0.0)


class TestWavIO:
    def test_round_trip(self, tmp_path):
        w = wav_of(1234, seed=9)
        save_wav(tmp_path / "x.wav", w)
        back = load_wav(tmp_path / "x.wav")
        assert len(back) == 1234
        assert np.max(np.abs(back.samples - w.samples)) < 1.0 / 32768

    def test_rejects_stereo(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "bad.wav"), "wb") as f:
            f.setnchannels(2)
            f.setsampwidth(2)
            f.setframerate(16000)
            f.writeframes(b"\x00\x00" * 64)
        with pytest.raises(ValueError, match="mono"):
            load_wav(tmp_path / "bad.wav")

    def test_rejects_wrong_rate(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "bad.wav"), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(22050)
            f.writeframes(b"\x00\x00" * 64)
        with pytest.raises(ValueError, match="16000"):
            load_wav(tmp_path / "bad.wav")

    def test_rejects_8bit(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "bad.wav"), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(1)
            f.setframerate(16000)
            f.writeframes(b"\x00" * 64)
        with pytest.raises(ValueError, match="16-bit"):
            load_wav(tmp_path / "bad.wav")

    def test_manifest(self, tmp_path):
        save_wav(tmp_path / "a.wav", wav_of(100))
        (tmp_path / "m.txt").write_text("a.wav\n\n")
        paths = read_manifest(tmp_path / "m.txt")
        assert paths == [tmp_path / "a.wav"]
        with pytest.raises(ValueError, match="empty manifest"):
            (tmp_path / "e.txt").write_text("\n")
            read_manifest(tmp_path / "e.txt")
