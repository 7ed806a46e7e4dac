import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from speech2pose.exceptions import UnknownCharacter
from speech2pose.text import (PinyinTable, TimedTranscript, TimedWord, TranscriptEncoder, encode_transcript,
                              letter_vector, parse_transcript, read_transcript, strip_tones, to_pinyin,
                              write_transcript)


def test_latin_passes_through():
    assert to_pinyin("abc", PinyinTable()) == "abc"
    assert to_pinyin("Hello, World!", PinyinTable()) == "helloworld"


def test_homophones_share_spelling():
    table = PinyinTable.load()
    assert to_pinyin("他", table) == to_pinyin("她", table) == "ta"
    assert to_pinyin("是", table) == to_pinyin("事", table)
    np.testing.assert_array_equal(letter_vector(to_pinyin("他", table)), letter_vector(to_pinyin("它", table)))


def test_unknown_character():
    with pytest.raises(UnknownCharacter) as info:
        to_pinyin("a他", PinyinTable())
    assert info.value.char == "他"


def test_table_loading_strips_tones():
    table = PinyinTable.from_lines(["# comment", "好\thao3", "绿\tlǜ"])
    assert table["好"] == "hao"
    assert strip_tones("Lǜ4") == "lu"
    with pytest.raises(ValueError):
        PinyinTable()["x"] = "A1"


def test_empty_transcript_is_all_pause():
    feats = encode_transcript(TimedTranscript([], 0.1), 0.01)
    assert feats.values.shape == (10, 26)
    assert not feats.values.any()


def test_double_letter_word():
    feats = encode_transcript(TimedTranscript([TimedWord("aa", 0.0, 0.02)], 0.02), 0.01).values
    expected = np.zeros(26)
    expected[0] = 1.0
    np.testing.assert_array_equal(feats[0], expected)


def test_word_span_by_ticks():
    feats = encode_transcript(TimedTranscript([TimedWord("ab", 0.0, 0.05)], 0.07), 0.01).values
    assert feats.shape == (7, 26)
    for k in range(5):
        assert feats[k, 0] == 0.5 and feats[k, 1] == 0.5 and feats[k].sum() == 1.0
    assert not feats[5:].any()


def test_chinese_words_are_romanized():
    t = TimedTranscript([TimedWord("你好", 0.0, 0.03)], 0.03)
    np.testing.assert_array_equal(encode_transcript(t).values[0], letter_vector("nihao"))


def test_digits_only_word_is_pause():
    feats = encode_transcript(TimedTranscript([TimedWord("42", 0.0, 0.03)], 0.03)).values
    assert not feats.any()


words = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=8)


@given(st.lists(words, min_size=1, max_size=5))
def test_frames_sum_to_one_or_zero(ws):
    t = TimedTranscript([TimedWord(w, 0.05 * i + 0.01, 0.05 * i + 0.04) for i, w in enumerate(ws)], 0.05 * len(ws))
    sums = encode_transcript(t).values.sum(axis=1)
    assert np.all((np.abs(sums - 1.0) < 1e-9) | (sums == 0.0))


@given(words)
def test_anagrams_encode_identically(w):
    np.testing.assert_array_equal(letter_vector(w), letter_vector(w[::-1]))


def test_order_of_listing_does_not_matter():
    a = [TimedWord("one", 0.0, 0.1), TimedWord("two", 0.2, 0.3)]
    np.testing.assert_array_equal(encode_transcript(TimedTranscript(a, 0.4)).values,
                                  encode_transcript(TimedTranscript(a[::-1], 0.4)).values)


def test_transcript_validation():
    with pytest.raises(ValueError):
        TimedWord("x", 0.3, 0.3)
    with pytest.raises(ValueError):
        TimedTranscript([TimedWord("a", 0.0, 0.5), TimedWord("b", 0.4, 0.6)], 1.0)
    with pytest.raises(ValueError):
        TimedTranscript([TimedWord("a", 0.0, 1.5)], 1.0)


def test_transcript_file_round_trip(tmp_path):
    t = TimedTranscript([TimedWord("hello", 0.0, 0.5), TimedWord("世界", 0.6, 1.25)], 1.25)
    write_transcript(t, tmp_path / "t.txt")
    back = read_transcript(tmp_path / "t.txt")
    assert back.words == t.words
    assert back.duration == 1.25
    assert parse_transcript("hi 0 250\n\nyo\t300\t400\n")[1] == TimedWord("yo", 0.3, 0.4)


def test_encoder_estimator():
    enc = TranscriptEncoder(stride=0.02)
    out = enc.fit_transform([TimedTranscript([TimedWord("ab", 0.0, 0.1)], 0.2)])
    assert out[0].shape == (10, 26)
    assert enc.get_params()["stride"] == 0.02
