import io
import json
from collections import Counter

import numpy as np
import numpy.testing as npt
import pytest

from nqg.data import (
    STOPWORDS, GloveParseError, LocationError, SchemaError, SentenceQuestionPair, compute_stats, ingest_squad,
    load_glove, locate_answer_sentence, overlap_percentage, preprocess, prune_pairs, read_pairs, sentences_with_spans,
    split_articles, split_sentences, synthetic_pairs, tokenize, write_pairs,
)
from nqg.tensor import DegenerateInputError
from nqg.vocab import RESERVED, UNK, Vocabulary, build_vocab


def pair(sentence, question, article="a"):
    return SentenceQuestionPair(article, sentence.split(), question.split())


def squad(*articles):
    """articles: (title, [(context, [(question, answer_text, answer_start), ...]), ...])"""
    return {"data": [
        {"title": t, "paragraphs": [
            {"context": c, "qas": [{"question": q, "answers": [{"text": a, "answer_start": s}]} for q, a, s in qas]}
            for c, qas in paras]}
        for t, paras in articles]}


# -- tokenization ------------------------------------------------------------------

def test_tokenize_detaches_punctuation():
    assert tokenize("Hello, world.") == ["Hello", ",", "world", "."]
    assert tokenize("Why? (Because!)") == ["Why", "?", "-lrb-", "Because", "!", "-rrb-"]


def test_tokenize_clitics_and_abbreviations():
    assert tokenize("don't see Mr. Smith's U.S. map") == ["do", "n't", "see", "Mr.", "Smith", "'s", "U.S.", "map"]


def test_split_sentences_partitions_text():
    text = "The cat sat. Dr. Who came in. It rained!"
    spans = split_sentences(text)
    assert [text[a:b].strip() for a, b in spans] == ["The cat sat.", "Dr. Who came in.", "It rained!"]
    assert spans[0][0] == 0 and spans[-1][1] == len(text)
    assert all(b == c for (_, b), (c, _) in zip(spans, spans[1:]))


def test_split_sentences_lowercase_continuation():
    assert len(split_sentences("It cost 5 ft. more than that. Then it fell.")) == 2


# -- answer location ---------------------------------------------------------------

PARA = "Newcastle is a city. Eldon Square is in Newcastle. It opened in 1976."


def test_answer_inside_middle_sentence():
    sents = sentences_with_spans(PARA)
    start = PARA.index("Eldon")
    assert locate_answer_sentence(sents, start, len("Eldon Square")) == ["Eldon", "Square", "is", "in", "Newcastle", "."]


def test_answer_crossing_sentences_concatenates():
    sents = sentences_with_spans(PARA)
    start = PARA.index("city")
    got = locate_answer_sentence(sents, start, PARA.index("Square") - start)
    assert got == sents[0].tokens + sents[1].tokens


def test_single_sentence_paragraph():
    sents = sentences_with_spans("Grainger built the street.")
    for start in (0, 5, 20):
        assert locate_answer_sentence(sents, start, 3) == ["Grainger", "built", "the", "street", "."]


def test_answer_outside_spans():
    with pytest.raises(LocationError):
        locate_answer_sentence(sentences_with_spans("Short."), 40, 2)


# -- SQuAD ingestion -----------------------------------------------------------------

def test_minimal_document():
    recs = ingest_squad(squad(("A", [("Paris is big.", [("What is big?", "Paris", 0)])])))
    assert len(recs) == 1
    assert (recs[0].article_id, recs[0].answer_text, recs[0].answer_start) == ("A", "Paris", 0)


def test_out_of_range_answer_is_dropped(caplog):
    recs = ingest_squad(squad(("A", [("Paris is big.", [("What?", "x", 99), ("Which?", "big", 9)])])))
    assert [r.question for r in recs] == ["Which?"]
    assert "answer_start 99" in caplog.text


def test_three_article_hand_count():
    doc = squad(
        ("A", [("One. Two.", [("q1", "One", 0), ("q2", "Two", 5)]), ("Three.", [("q3", "Three", 0)])]),
        ("B", [("Four.", [("q4", "Four", 0)])]),
        ("C", [("Five.", []), ("Six. Seven.", [("q5", "Six", 0), ("q6", "Seven", 5), ("q7", "Six", 0)])]),
    )
    assert len(ingest_squad(doc)) == 7


def test_schema_errors_name_the_path():
    with pytest.raises(SchemaError, match=r"\$\.data\[0\]\.paragraphs\[0\]"):
        ingest_squad({"data": [{"title": "A", "paragraphs": [{"qas": []}]}]})
    with pytest.raises(SchemaError, match="answer_start"):
        ingest_squad({"data": [{"title": "A", "paragraphs": [
            {"context": "x", "qas": [{"question": "q", "answers": [{"text": "x", "answer_start": "0"}]}]}]}]})


# -- pruning and overlap ---------------------------------------------------------------

def test_prune_examples():
    kept = pair("the cat sat", "where did the cat sit ?")
    dropped = pair("the a of", "why is it ?")
    assert prune_pairs([kept, dropped]) == [kept]


def test_overlap_examples():
    assert overlap_percentage(pair("paris france seine", "paris france seine")) == 1.0
    assert overlap_percentage(pair("the cat sat", "why is it ?")) == 0.0
    p = pair("the seine river crosses paris in france", "what is the seine river in paris france")
    assert overlap_percentage(p) == 0.5
    with pytest.raises(DegenerateInputError):
        overlap_percentage(pair("a b", ""))


def test_markers_and_punctuation_never_count_as_overlap():
    assert prune_pairs([pair("<sos> . , <eos>", "<sos> . ? <eos>")]) == []


def test_prune_matches_set_intersection_oracle():
    rng = np.random.default_rng(0)
    words = ["the", "of", "is", "cat", "dog", "river", "paris", "?", ".", "what", "sat", "in"]
    pairs = [pair(" ".join(rng.choice(words, rng.integers(1, 7))), " ".join(rng.choice(words, rng.integers(1, 7))))
             for _ in range(100)]
    content = lambda toks: {t for t in toks if t not in STOPWORDS and t.isalpha()}  # noqa: E731
    expected = [p for p in pairs if content(p.sentence) & content(p.question)]
    assert prune_pairs(pairs) == expected
    assert 0 < len(expected) < 100


def test_preprocess_prunes_train_only():
    paras = []
    for i in range(10):
        paras.append((f"T{i}", [(f"Topic{i} rivers flow. Nothing here.",
                                 [(f"what do topic{i} rivers do ?", "flow", 14), ("why is it ?", "Nothing", 20)])]))
    splits, stats = preprocess([squad(*paras)], seed=3)
    assert prune_pairs(splits["train"]) == splits["train"]
    assert len(splits["train"]) == 8 and len(splits["dev"]) == 2 and len(splits["test"]) == 2
    assert stats.extra["pruned_fraction"] == 0.5


# -- vocabulary -----------------------------------------------------------------------

def test_build_vocab_cap():
    v = build_vocab([["a", "a", "b"]], cap=1)
    assert v.tokens == list(RESERVED) + ["a"]
    assert v.id("b") == UNK


def test_build_vocab_large_cap_has_no_unk():
    corpus = [["x", "y"], ["z", "x"]]
    v = build_vocab(corpus, cap=10)
    assert all(v.id(t) != UNK for seq in corpus for t in seq)
    with pytest.raises(ValueError):
        build_vocab(corpus, cap=0)


def test_build_vocab_matches_counting_oracle():
    rng = np.random.default_rng(1)
    tokens = [f"w{int(i)}" for i in rng.zipf(1.5, size=1000) % 60]
    counts = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    order = sorted(counts, key=lambda t: (-counts[t], t))[:25]
    assert build_vocab([tokens[:500], tokens[500:]], cap=25).tokens[4:] == order


def test_vocab_round_trip():
    v = build_vocab([list("abcabd")], cap=10)
    assert all(v.id(v.token(i)) == i for i in range(len(v)))
    assert all(v.token(v.id(t)) == t for t in "abcd")


# -- GloVe ---------------------------------------------------------------------------------

def test_glove_rows_and_flags():
    vocab = Vocabulary(list(RESERVED) + ["paris", "rome", "new york"])
    text = "paris 0.5 -1.0\nnew york 0.25 0.75\nberlin 9 9\n"
    emb = load_glove(io.StringIO(text), vocab, 2, np.random.default_rng(0))
    npt.assert_array_equal(emb.matrix[4], [0.5, -1.0])
    npt.assert_array_equal(emb.matrix[6], [0.25, 0.75])
    assert emb.pretrained.tolist() == [False] * 4 + [True, False, True]
    assert np.all(np.abs(emb.matrix[5]) <= 0.1) and np.all(np.abs(emb.matrix[:4]) <= 0.1)


def test_glove_exact_key_beats_lowercase():
    vocab = Vocabulary(list(RESERVED) + ["paris"])
    emb = load_glove(io.StringIO("Paris 1 1\nparis 2 2\nPARIS 3 3\n"), vocab, 2, np.random.default_rng(0))
    npt.assert_array_equal(emb.matrix[4], [2, 2])


def test_glove_parse_errors_name_the_line():
    vocab = Vocabulary(list(RESERVED) + ["paris"])
    with pytest.raises(GloveParseError, match="line 2"):
        load_glove(io.StringIO("x 1 2\nparis 1 zz\n"), vocab, 2, np.random.default_rng(0))
    with pytest.raises(GloveParseError, match="line 1"):
        load_glove(io.StringIO("paris 1\n"), vocab, 2, np.random.default_rng(0))


# -- article split ---------------------------------------------------------------------

def test_split_sizes():
    train, dev, test = split_articles([f"a{i}" for i in range(10)], seed=1)
    assert (len(train), len(dev), len(test)) == (8, 1, 1)


def test_split_deterministic_and_disjoint():
    ids = [f"a{i}" for i in range(37)]
    assert split_articles(ids, seed=5) == split_articles(ids, seed=5)
    for seed in range(100):
        parts = [set(s) for s in split_articles(ids, seed=seed)]
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
        assert parts[0] | parts[1] | parts[2] == set(ids)


def test_split_errors():
    with pytest.raises(ValueError):
        split_articles(["a", "b"])
    with pytest.raises(ValueError):
        split_articles([f"a{i}" for i in range(10)], ratios=(0.5, 0.5, 0.5))


# -- statistics and files ----------------------------------------------------------------

def test_questions_per_sentence():
    stats = compute_stats({"train": [pair("the cat sat", "who sat ?"), pair("the cat sat", "what sat ?")]})
    assert stats.splits["train"].questions_per_sentence == 2.0
    assert sum(stats.splits["train"].overlap_histogram) == 2


def test_empty_split_stats():
    stats = compute_stats({"dev": []})
    assert stats.splits["dev"].pairs == 0
    json.loads(stats.to_json())


def test_pair_file_round_trip(tmp_path):
    pairs = synthetic_pairs(5)
    write_pairs(tmp_path / "p.jsonl", pairs)
    again = read_pairs(tmp_path / "p.jsonl")
    assert [(p.sentence, p.question, p.paragraph) for p in again] == [(p.sentence, p.question, p.paragraph) for p in pairs]
    (tmp_path / "bad.jsonl").write_text('{"sentence": []}\n')
    with pytest.raises(SchemaError, match="bad.jsonl:1"):
        read_pairs(tmp_path / "bad.jsonl")


def test_pipeline_is_deterministic(tmp_path):
    doc = squad(*[(f"T{i}", [(f"Rivers{i} flow fast. Lakes stay.", [(f"where do rivers{i} flow ?", "flow", 9)])])
                  for i in range(12)])
    outs = []
    for run in range(2):
        splits, _ = preprocess([doc], seed=7, paragraph_len=4)
        path = tmp_path / f"train{run}.jsonl"
        write_pairs(path, splits["train"])
        outs.append(path.read_bytes())
        assert all(len(p.paragraph) <= 4 for s in splits.values() for p in s)
        assert all(t == t.lower() for s in splits.values() for p in s for t in p.sentence + p.question)
    assert outs[0] == outs[1]


def test_synthetic_corpus():
    pairs = synthetic_pairs(32)
    assert len(pairs) == 32 == len({(tuple(p.sentence), tuple(p.question)) for p in pairs})
    assert prune_pairs(pairs) == pairs
    assert Counter(p.question[0] for p in pairs).keys() <= {"who", "what", "where"}
