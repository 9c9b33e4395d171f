import numpy as np
import pytest

from proxyformer.backbone import (TextEncoder, VisualBackbone, default_vocabulary, encode_text, encode_video,
                                  pad_to_multiple, pad_tokens, tokenize)


@pytest.fixture(scope="module")
def backbone():
    return VisualBackbone(np.random.default_rng(0), 32)


class TestEncodeVideo:
    def test_level_shapes(self, backbone):
        frames = np.random.default_rng(1).uniform(size=(2, 64, 64, 3))
        levels = encode_video(frames, backbone).levels
        assert [lv.shape for lv in levels] == [(1, 2, 16, 16, 8), (1, 2, 8, 8, 16), (1, 2, 4, 4, 32)]

    def test_zero_frames_zero_features(self, backbone):
        levels = encode_video(np.zeros((1, 32, 32, 3)), backbone).levels
        for lv in levels:
            assert np.all(lv.data == 0)

    def test_repeated_frame(self, backbone):
        frame = np.random.default_rng(2).uniform(size=(1, 32, 48, 3))
        levels = encode_video(np.repeat(frame, 3, axis=0), backbone).levels
        for lv in levels:
            for t in range(1, 3):
                np.testing.assert_array_equal(lv.data[0, t], lv.data[0, 0])

    def test_frame_permutation(self, backbone):
        frames = np.random.default_rng(3).uniform(size=(4, 32, 32, 3))
        perm = np.array([2, 0, 3, 1])
        a = encode_video(frames, backbone).levels
        b = encode_video(frames[perm], backbone).levels
        for la, lb in zip(a, b):
            np.testing.assert_array_equal(la.data[0, perm], lb.data[0])

    def test_non_finite(self, backbone):
        frames = np.zeros((1, 32, 32, 3))
        frames[0, 3, 3, 1] = np.nan
        with pytest.raises(ValueError):
            encode_video(frames, backbone)

    def test_padding_to_multiple(self, backbone):
        frames = np.random.default_rng(4).uniform(size=(1, 40, 36, 3))
        assert pad_to_multiple(frames).shape == (1, 48, 48, 3)
        assert encode_video(frames, backbone).levels[-1].shape[2:4] == (3, 3)

    def test_channels_schedule(self, backbone):
        assert backbone.channels == (8, 16, 32)


class TestTokenize:
    def test_lookup(self):
        v = default_vocabulary()
        assert tokenize("the red circle", v) == [v["the"], v["red"], v["circle"]]

    def test_empty(self):
        with pytest.raises(ValueError):
            tokenize("   ", default_vocabulary())

    def test_unknown(self):
        v = default_vocabulary()
        ids = tokenize("the purple circle", v)
        assert ids[1] == v.unk_index and ids[0] == v["the"]

    def test_clipped(self):
        assert len(tokenize(" ".join(["the"] * 30), default_vocabulary())) == 16

    def test_vocabulary_bijective(self):
        v = default_vocabulary()
        assert len(set(v.itos)) == len(v)
        for i, w in enumerate(v.itos):
            assert v.stoi[w] == i
        assert v.itos[:2] == ["<pad>", "<unk>"]

    def test_vocabulary_stable(self):
        assert default_vocabulary().itos == default_vocabulary().itos

    def test_pad_tokens(self):
        ids, mask = pad_tokens([[3, 4, 5], [6]])
        np.testing.assert_array_equal(ids, [[3, 4, 5], [6, 0, 0]])
        np.testing.assert_array_equal(mask, [[1, 1, 1], [1, 0, 0]])


class TestEncodeText:
    def test_shape(self):
        enc = TextEncoder(np.random.default_rng(0), 15, 16)
        assert encode_text([4], enc).features.shape == (1, 1, 16)

    def test_position_breaks_ties(self):
        enc = TextEncoder(np.random.default_rng(0), 15, 16)
        f = encode_text([4, 4], enc).features.data[0]
        assert not np.array_equal(f[0], f[1])

    def test_zero_embeddings(self):
        enc = TextEncoder(np.random.default_rng(0), 15, 16)
        enc.embedding.data[:] = 0
        enc.position.data[:] = 0
        assert np.all(encode_text([2, 3, 4], enc).features.data == 0)

    def test_out_of_range(self):
        enc = TextEncoder(np.random.default_rng(0), 15, 16)
        with pytest.raises(ValueError):
            encode_text([15], enc)
        with pytest.raises(ValueError):
            encode_text([0] * 17, enc)

    def test_bit_identical(self):
        enc = TextEncoder(np.random.default_rng(0), 15, 16)
        a = encode_text([2, 5, 9], enc).features.data
        b = encode_text([2, 5, 9], enc).features.data
        assert a.tobytes() == b.tobytes()
