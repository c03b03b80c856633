import json

import numpy as np
import pytest
import torch

from mixseg_extractor.extract import ExtractorConfig, extract, pool_record
from mixseg_extractor.formats import read_dataset, write_embeddings

WORDS = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]
VOCAB = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
         "al", "##pha", "be", "##ta", "gam", "##ma", "del",
         "ep", "##si", "##lon", "ze"]


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    """A small randomly initialized WordPiece BERT saved to disk."""
    from transformers import BertConfig, BertModel, BertTokenizerFast

    direc = tmp_path_factory.mktemp("encoder")
    vocab_path = direc / "vocab.txt"
    vocab_path.write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizerFast(vocab_file=str(vocab_path), do_lower_case=True)
    tokenizer.save_pretrained(direc)

    torch.manual_seed(0)
    config = BertConfig(vocab_size=len(VOCAB), hidden_size=16, num_hidden_layers=2,
                        num_attention_heads=2, intermediate_size=24,
                        max_position_embeddings=64)
    BertModel(config).save_pretrained(direc)
    return str(direc)


def make_toy_dataset(path, n_records=20, seed=0, min_len=8, max_len=16):
    rng = np.random.default_rng(seed)
    patterns = {"HM": (0, 1), "MH": (1, 0), "HMH": (0, 1, 0)}
    lines = []
    for i in range(n_records):
        name = list(patterns)[i % 3]
        runs = patterns[name]
        n = int(rng.integers(min_len, max_len + 1))
        cuts = sorted(rng.choice(np.arange(2, n - 1), size=len(runs) - 1,
                                 replace=False).tolist())
        counts = np.diff([0] + cuts + [n]).tolist()
        if min(counts) < 1:
            counts = [max(c, 1) for c in counts]
        labels = []
        for lab, c in zip(runs, counts):
            labels.extend([lab] * c)
        tokens = [WORDS[int(v)] for v in rng.integers(0, len(WORDS), len(labels))]
        rec_id = f"toy-{i:03d}"
        lines.append(json.dumps({"id": rec_id, "tokens": tokens, "labels": labels,
                                 "pattern": name, "embedding_key": rec_id}))
    path.write_text("\n".join(lines) + "\n")
    return path


def test_pool_mean_of_identical_rows_is_identity():
    hidden = torch.full((6, 4), 1.5)
    hidden[0] = 9.0  # CLS, no word id
    out = pool_record(hidden, [None, 0, 0, 0, 1, None], n_words=2, pooling="mean")
    assert np.array_equal(out[0], np.full(4, 1.5, dtype=np.float32))
    assert np.array_equal(out[1], np.full(4, 1.5, dtype=np.float32))


def test_pool_first_subword():
    hidden = torch.arange(12, dtype=torch.float32).reshape(4, 3)
    out = pool_record(hidden, [None, 0, 0, 1], n_words=2, pooling="first-subword")
    assert np.array_equal(out[0], hidden[1].numpy())
    assert np.array_equal(out[1], hidden[3].numpy())


def test_pool_alignment_failure_returns_none():
    hidden = torch.zeros((3, 2))
    assert pool_record(hidden, [None, 0, None], n_words=2, pooling="mean") is None


def test_extract_counts_and_primary_reads_it(tiny_encoder, tmp_path):
    from mixseg.data_io import read_embeddings

    data = make_toy_dataset(tmp_path / "toy.jsonl")
    out = tmp_path / "toy.seqe"
    config = ExtractorConfig(encoder=tiny_encoder, max_length=64, batch_size=4,
                             output=str(out))
    result = extract(data, config)
    assert result.extracted == 20
    assert result.skipped == []
    assert result.dim == 16

    seqs = read_embeddings(out)  # the primary package accepts the file
    records = {json.loads(l)["id"]: json.loads(l)["tokens"]
               for l in data.read_text().splitlines()}
    assert set(seqs) == set(records)
    for rec_id, tokens in records.items():
        assert seqs[rec_id].shape == (len(tokens), 16)


def test_extract_rerun_byte_identical(tiny_encoder, tmp_path):
    data = make_toy_dataset(tmp_path / "toy.jsonl")
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.seqe"
        extract(data, ExtractorConfig(encoder=tiny_encoder, max_length=64,
                                      batch_size=4, output=str(out)))
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_primary_trains_on_extracted_embeddings(tiny_encoder, tmp_path, capsys):
    from mixseg.cli import run

    data = make_toy_dataset(tmp_path / "toy.jsonl")
    out = tmp_path / "toy.seqe"
    extract(data, ExtractorConfig(encoder=tiny_encoder, max_length=64,
                                  batch_size=4, output=str(out)))
    code = run(["train", "--train", str(data), "--embeddings", str(out),
                "--out", str(tmp_path / "model.seqm"), "--epochs", "1",
                "--batch-size", "8", "--hidden-dim", "4", "--num-layers", "1",
                "--max-len", "64"])
    assert code == 0
    assert (tmp_path / "model.seqm").exists()
    assert capsys.readouterr().out.count("epoch=") == 1


def test_truncation_skips_and_reports(tiny_encoder, tmp_path):
    data = tmp_path / "long.jsonl"
    tokens = ["epsilon"] * 40  # 3 subwords each: blows past max_length 16
    data.write_text(json.dumps({"id": "long-1", "tokens": tokens,
                                "labels": [0] * 40, "pattern": "HM"}) + "\n" +
                    json.dumps({"id": "ok-1", "tokens": ["alpha", "beta"],
                                "labels": [0, 1], "pattern": "HM"}) + "\n")
    out = tmp_path / "long.seqe"
    result = extract(data, ExtractorConfig(encoder=tiny_encoder, max_length=16,
                                           batch_size=2, output=str(out)))
    assert result.extracted == 1
    assert [rec_id for rec_id, _ in result.skipped] == ["long-1"]
    assert "alignment" in result.skipped[0][1]


def test_dataset_reader_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": "x"}\n')
    with pytest.raises(ValueError, match="missing field"):
        read_dataset(p)
    p.write_text("not json\n")
    with pytest.raises(ValueError, match="line 1"):
        read_dataset(p)


def test_writer_rejects_empty_and_mixed_dims(tmp_path):
    with pytest.raises(ValueError):
        write_embeddings(tmp_path / "x.seqe", {})
    with pytest.raises(ValueError, match="dims"):
        write_embeddings(tmp_path / "x.seqe",
                         {"a": np.zeros((2, 3), np.float32),
                          "b": np.zeros((2, 4), np.float32)})


def test_cli_end_to_end(tiny_encoder, tmp_path, capsys):
    from mixseg_extractor.cli import run as cli_run

    data = make_toy_dataset(tmp_path / "toy.jsonl")
    out = tmp_path / "cli.seqe"
    code = cli_run(["--data", str(data), "--encoder", tiny_encoder,
                    "--out", str(out), "--max-length", "64", "--batch-size", "4"])
    assert code == 0
    assert "extracted 20 records" in capsys.readouterr().out
    assert out.exists()
