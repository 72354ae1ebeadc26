"""Synthetic task generators, TSV ingestion, batching."""

import numpy as np
import pytest

from linattn.data import (PAD_ID, Batch, MatchBatch, batch_iter, eval_listops_tokens,
                          gen_listops, gen_matching, gen_text_classification,
                          listops_to_string, load_tsv_dataset, motif_oracle,
                          save_tsv_dataset, LISTOPS_SYMBOLS)
from linattn.errors import ConfigError, DataError

SYM = {s: i for i, s in enumerate(LISTOPS_SYMBOLS)}


def encode(expr: str) -> list[int]:
    return [SYM[tok] for tok in expr.split()]


class TestListopsEvaluator:
    def test_nested_max_min(self):
        assert eval_listops_tokens(encode("[MAX 2 4 [MIN 3 1 ] ]")) == 4

    def test_sum_mod_ten(self):
        assert eval_listops_tokens(encode("[SM 9 9 9 ]")) == 7

    def test_unary_reduction(self):
        assert eval_listops_tokens(encode("[MAX 5 ]")) == 5

    def test_median_rounds_down(self):
        assert eval_listops_tokens(encode("[MED 1 4 ]")) == 2
        assert eval_listops_tokens(encode("[MED 0 3 7 ]")) == 3
        assert eval_listops_tokens(encode("[MED 2 9 5 6 ]")) == 5

    def test_ignores_padding(self):
        assert eval_listops_tokens(encode("[SM 4 4 ]") + [PAD_ID, PAD_ID]) == 8


class TestGenListops:
    def test_labels_match_independent_evaluator(self):
        ds = gen_listops(0, 10_000, max_len=96, max_depth=4)
        for tokens, label in ds.examples:
            assert eval_listops_tokens(tokens) == label, listops_to_string(tokens)

    def test_lengths_within_budget(self):
        for max_len in (32, 128, 256):
            ds = gen_listops(1, 500, max_len=max_len)
            assert max(len(t) for t, _ in ds.examples) <= max_len

    def test_mean_length_near_half_budget(self):
        ds = gen_listops(2, 2000, max_len=128, max_depth=4)
        mean = np.mean([len(t) for t, _ in ds.examples])
        assert 0.35 * 128 <= mean <= 0.65 * 128

    def test_deterministic(self):
        a = gen_listops(3, 100)
        b = gen_listops(3, 100)
        for (ta, ya), (tb, yb) in zip(a.examples, b.examples):
            assert np.array_equal(ta, tb) and ya == yb

    def test_labels_in_range_and_pad_never_emitted(self):
        ds = gen_listops(4, 1000)
        for tokens, label in ds.examples:
            assert 0 <= label <= 9
            assert PAD_ID not in tokens

    def test_too_small_parameters_rejected(self):
        with pytest.raises(ConfigError):
            gen_listops(0, 10, max_len=4)
        with pytest.raises(ConfigError):
            gen_listops(0, 10, max_depth=0)


class TestGenTextClassification:
    def test_motif_oracle_is_perfect(self):
        ds = gen_text_classification(0, 2000, length=128, vocab_size=32, classes=2)
        labels = np.array([y for _, y in ds.examples])
        assert np.array_equal(motif_oracle(ds), labels)

    def test_balanced_within_one(self):
        for count in (1000, 1001, 997):
            ds = gen_text_classification(1, count, length=64, vocab_size=32, classes=3)
            hist = np.bincount([y for _, y in ds.examples], minlength=3)
            assert hist.max() - hist.min() <= 1

    def test_deterministic(self):
        a = gen_text_classification(2, 50)
        b = gen_text_classification(2, 50)
        for (ta, ya), (tb, yb) in zip(a.examples, b.examples):
            assert np.array_equal(ta, tb) and ya == yb

    def test_vocab_too_small_rejected(self):
        with pytest.raises(ConfigError, match="vocab"):
            gen_text_classification(0, 10, length=32, vocab_size=6, classes=2, motif_len=3)

    def test_pad_never_emitted(self):
        ds = gen_text_classification(3, 200, length=32)
        assert all(PAD_ID not in t for t, _ in ds.examples)


class TestGenMatching:
    def test_motif_oracle_is_perfect(self):
        ds = gen_matching(0, 1000, length=64)
        labels = np.array([y for *_, y in ds.examples])
        assert np.array_equal(motif_oracle(ds), labels)

    def test_balanced(self):
        ds = gen_matching(1, 999, length=64)
        hist = np.bincount([y for *_, y in ds.examples], minlength=2)
        assert abs(hist[0] - hist[1]) <= 1

    def test_deterministic(self):
        a = gen_matching(2, 40)
        b = gen_matching(2, 40)
        for ea, eb in zip(a.examples, b.examples):
            assert np.array_equal(ea[0], eb[0]) and np.array_equal(ea[1], eb[1])
            assert ea[2] == eb[2]


class TestTsv:
    def test_single_row(self, tmp_path):
        p = tmp_path / "mini.tsv"
        p.write_text("1\t3 4 5\n")
        ds = load_tsv_dataset(p, "classify")
        assert len(ds) == 1
        tokens, label = ds.examples[0]
        assert label == 1 and np.array_equal(tokens, [3, 4, 5])
        assert ds.vocab_size == 6  # max id + 1

    def test_non_integer_token_names_line(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("0\t1 2 3\n1\t4 x 6\n")
        with pytest.raises(DataError, match=r"bad\.tsv:2"):
            load_tsv_dataset(p, "classify")

    def test_wrong_column_count_names_line(self, tmp_path):
        p = tmp_path / "cols.tsv"
        p.write_text("0\t1 2\t3 4\n")
        with pytest.raises(DataError, match=r"cols\.tsv:1"):
            load_tsv_dataset(p, "classify")

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.tsv"
        p.write_text("")
        with pytest.raises(DataError):
            load_tsv_dataset(p, "classify")

    def test_round_trip_classify(self, tmp_path):
        ds = gen_text_classification(5, 50, length=16, vocab_size=32)
        p = tmp_path / "round.tsv"
        save_tsv_dataset(ds, p)
        loaded = load_tsv_dataset(p, "classify")
        assert len(loaded) == len(ds)
        for (ta, ya), (tb, yb) in zip(ds.examples, loaded.examples):
            assert np.array_equal(ta, tb) and ya == yb

    def test_round_trip_match(self, tmp_path):
        ds = gen_matching(6, 30, length=16)
        p = tmp_path / "pairs.tsv"
        save_tsv_dataset(ds, p)
        loaded = load_tsv_dataset(p, "match")
        for ea, eb in zip(ds.examples, loaded.examples):
            assert np.array_equal(ea[0], eb[0]) and np.array_equal(ea[1], eb[1])
            assert ea[2] == eb[2]


class TestBatchIter:
    def test_partial_final_batch_kept(self):
        ds = gen_text_classification(7, 10, length=16)
        sizes = [len(b.labels) for b in batch_iter(ds, 4, 16, shuffle_seed=0)]
        assert sizes == [4, 4, 2]

    def test_same_seed_same_order(self):
        ds = gen_text_classification(8, 30, length=16)
        a = [b.tokens for b in batch_iter(ds, 8, 16, shuffle_seed=5)]
        b = [b.tokens for b in batch_iter(ds, 8, 16, shuffle_seed=5)]
        for xa, xb in zip(a, b):
            np.testing.assert_array_equal(xa, xb)

    def test_different_seed_different_order(self):
        ds = gen_text_classification(9, 64, length=16)
        a = np.concatenate([b.labels for b in batch_iter(ds, 16, 16, shuffle_seed=1)])
        b = np.concatenate([b.labels for b in batch_iter(ds, 16, 16, shuffle_seed=2)])
        assert not np.array_equal(a, b)

    def test_mask_false_exactly_on_pads(self):
        ds = gen_listops(10, 200, max_len=64)
        for batch in batch_iter(ds, 16, 64, shuffle_seed=3):
            np.testing.assert_array_equal(batch.mask, batch.tokens != PAD_ID)

    def test_truncation_to_max_len(self):
        ds = gen_listops(11, 100, max_len=128)
        for batch in batch_iter(ds, 32, 48, shuffle_seed=0):
            assert batch.tokens.shape[1] <= 48

    def test_match_batches(self):
        ds = gen_matching(12, 20, length=24)
        batches = list(batch_iter(ds, 8, 24, shuffle_seed=0))
        assert all(isinstance(b, MatchBatch) for b in batches)
        assert batches[0].tokens_a.shape == (8, 24)

    def test_bad_batch_size(self):
        ds = gen_listops(13, 10)
        with pytest.raises(ConfigError):
            next(batch_iter(ds, 0, 16))
