import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamanon import dsp
from streamanon.config import ConfigError, FrontendConfig

CFG = FrontendConfig()


def offline_frames(x: np.ndarray, cfg: FrontendConfig = CFG) -> np.ndarray:
    """Frames by direct indexing into a left-padded copy of the signal."""
    pad = np.concatenate([np.zeros(cfg.window_length - cfg.hop_length), x])
    n = len(x) // cfg.hop_length
    return np.stack([pad[j * cfg.hop_length: j * cfg.hop_length + cfg.window_length] for j in range(n)]) \
        if n else np.zeros((0, cfg.window_length))


def test_one_window_of_audio_gives_four_frames_and_empty_carry(rng):
    x = rng.standard_normal(2048)
    frames, state = dsp.frame_stream(dsp.AudioChunk(x), dsp.FrontendState.fresh())
    assert frames.shape == (4, 2048)
    assert len(state.pending) == 0
    np.testing.assert_array_equal(frames, offline_frames(x))
    # last frame ends on the last sample; first frame is mostly left padding
    np.testing.assert_array_equal(frames[-1], x)
    assert np.all(frames[0][:1536] == 0)


def test_short_chunk_is_carried():
    frames, state = dsp.frame_stream(dsp.AudioChunk(np.ones(100)), dsp.FrontendState.fresh())
    assert frames.shape[0] == 0
    assert len(state.pending) == 100


def test_two_halves_equal_one_chunk(rng):
    x = rng.standard_normal(2048)
    s = dsp.FrontendState.fresh()
    a, s = dsp.frame_stream(dsp.AudioChunk(x[:1024]), s)
    b, s = dsp.frame_stream(dsp.AudioChunk(x[1024:]), s)
    whole, _ = dsp.frame_stream(dsp.AudioChunk(x), dsp.FrontendState.fresh())
    np.testing.assert_array_equal(np.concatenate([a, b]), whole)


def test_wrong_sample_rate_and_empty_chunk_rejected():
    with pytest.raises(ConfigError):
        dsp.frame_stream(dsp.AudioChunk(np.ones(10), 16000), dsp.FrontendState.fresh())
    with pytest.raises(ValueError):
        dsp.frame_stream(dsp.AudioChunk(np.zeros(0)), dsp.FrontendState.fresh())


@settings(max_examples=40)
@given(sizes=st.lists(st.integers(1, 3000), min_size=1, max_size=8), seed=st.integers(0, 2**16))
def test_any_chunking_gives_identical_logmel(sizes, seed):
    x = np.random.default_rng(seed).standard_normal(sum(sizes)) * 0.3
    fe = dsp.StreamingFrontend()
    pieces, pos = [], 0
    for n in sizes:
        pieces.append(fe(dsp.AudioChunk(x[pos:pos + n])))
        pos += n
        assert len(fe.state.pending) < CFG.hop_length
    streamed = np.concatenate(pieces)
    np.testing.assert_array_equal(streamed, dsp.logmel(x))
    assert streamed.shape[0] == len(x) // CFG.hop_length


@settings(max_examples=25)
@given(n=st.integers(600, 6000), cut=st.integers(0, 5999), seed=st.integers(0, 2**16))
def test_frames_ending_before_a_change_are_unaffected(n, cut, seed):
    cut = cut % n
    x = np.random.default_rng(seed).standard_normal(n)
    y = x.copy()
    y[cut:] += 1.0
    fx, fy = dsp.logmel(x), dsp.logmel(y)
    safe = cut // CFG.hop_length  # frames 0..safe-1 end at or before sample `cut`
    np.testing.assert_array_equal(fx[:safe], fy[:safe])


def test_zero_window_is_floor():
    np.testing.assert_array_equal(dsp.logmel_frame(np.zeros(2048)), np.full(160, np.log(1e-5)))


@pytest.mark.parametrize("k", [40, 80, 120, 150])
def test_tone_at_filter_centre_peaks_in_that_bin(k):
    f = dsp.mel_centers()[k]
    t = np.arange(2048) / 44100
    mel = dsp.logmel_frame(np.sin(2 * np.pi * f * t))
    assert int(np.argmax(mel)) == k


def test_doubling_amplitude_adds_log4(rng):
    x = rng.standard_normal(2048) * 0.1
    a, b = dsp.logmel_frame(x), dsp.logmel_frame(2 * x)
    live = a > np.log(1e-5) + 1e-9
    np.testing.assert_allclose(b[live] - a[live], np.log(4.0), atol=1e-10)


def test_filterbank_area_normalized():
    fb = dsp.mel_filterbank()
    assert fb.shape == (160, 1025)
    assert np.all(fb >= 0)
    # each triangle has unit area in Hz; the FFT grid (21.5 Hz) only samples
    # the narrow low filters coarsely, so those are left out
    df = 44100 / 2048
    area = fb.sum(1) * df
    np.testing.assert_allclose(area[60:], 1.0, rtol=0.03)
    np.testing.assert_allclose(area[140:], 1.0, rtol=1e-3)


def test_frame_rate():
    x = np.zeros(44100)
    assert dsp.logmel(x).shape[0] == 44100 // 512  # ~86.13 frames/s


def test_wav_round_trip_and_stereo_rejected(tmp_path, rng):
    from scipy.io import wavfile

    x = rng.uniform(-0.9, 0.9, 1000)
    p = tmp_path / "a.wav"
    dsp.write_wav(p, dsp.AudioChunk(x))
    back = dsp.read_wav(p)
    assert back.sample_rate == 44100
    np.testing.assert_allclose(back.samples, x, atol=0.5 / 32768 + 1e-12)
    dsp.write_wav(p, dsp.AudioChunk(x), pcm16=False)
    np.testing.assert_allclose(dsp.read_wav(p).samples, x, atol=1e-7)
    wavfile.write(tmp_path / "s.wav", 44100, np.zeros((10, 2), dtype=np.int16))
    with pytest.raises(ValueError, match="mono"):
        dsp.read_wav(tmp_path / "s.wav")
