#!/usr/bin/env python3
"""End-to-end run on a synthetic mixed-authorship corpus, library API only.

Generates a two-style corpus, trains the BiGRU + CRF segmenter for the
default three epochs, and prints the boundary/token evaluation report.
Small sizes keep this under a minute; scale num_records up for the full
benchmark shape.
"""

import numpy as np

from mixseg.core import Hyperparameters
from mixseg.data_io import SynthConfig, synth_generate
from mixseg.emissions import DropoutPolicy
from mixseg.metrics import evaluate, format_report
from mixseg.training import TrainConfig, predict_one, train

config = SynthConfig(
    seed=0,
    num_records=450,
    length_range=(60, 120),
    delta=3.0,
    embed_dim=3,
    pattern_weights={"HM": 1.0, "MH": 1.0, "HMH": 0.8, "MHM": 0.8,
                     "HMHMH": 0.2, "MHMHM": 0.2},
)
records, embeddings = synth_generate(config)
data = [(rec, embeddings[rec.embedding_key].astype(np.float64)) for rec in records]
train_data, dev_data, test_data = data[:350], data[350:400], data[400:]
print(f"corpus: {len(train_data)} train / {len(dev_data)} dev / {len(test_data)} test")

hyper = Hyperparameters(batch_size=32, epochs=3, hidden_dim=24, num_layers=2,
                        llrd_rates=(1e-4, 1e-3, 3e-3, 1e-2), max_len=128)
train_config = TrainConfig(
    hyper=hyper, seed=0,
    dropout=DropoutPolicy(0.05, 0.1, mode="per-layer-linear"))

model, logs = train(train_data, dev_data, train_config)

by_key = {rec.id: emb for rec, emb in test_data}
report = evaluate(lambda rec: predict_one(model, by_key[rec.id]),
                  [rec for rec, _ in test_data])
print()
print(format_report(report))
