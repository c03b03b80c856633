#!/usr/bin/env python3
"""Walk through the linear-chain CRF on an instance small enough to enumerate.

Everything the fast dynamic programs compute is cross-checked against brute
force over all L^n labelings: the unnormalized path score, the partition
function, the best path, and the posterior marginals.
"""

import itertools

import numpy as np

from mixseg.crf import (
    CrfParams,
    EmissionScores,
    brute_force_best_path,
    brute_force_log_partition,
    log_partition,
    nll_loss,
    posterior_marginals,
    score_sequence,
    viterbi_decode,
)

rng = np.random.default_rng(7)
n, L = 5, 2

em = EmissionScores(rng.normal(0, 1.5, size=(n, L)))
crf = CrfParams(rng.normal(size=(L, L)), rng.normal(size=L), rng.normal(size=L))

print(f"instance: {n} positions, {L} labels -> {L**n} candidate labelings\n")

# Path scores: every labeling gets start + emissions + transitions + end.
gold = [0, 0, 1, 1, 1]
s = score_sequence(em, crf, gold)
print(f"score of labeling {gold}: {s:.4f}")

# The partition function normalizes those scores into a distribution.
log_z = log_partition(em, crf)
print(f"log partition (forward algorithm): {log_z:.10f}")
print(f"log partition (enumeration):       {brute_force_log_partition(em, crf):.10f}")
print(f"P(gold | x) = exp(score - log Z) = {np.exp(s - log_z):.6f}")
print(f"NLL of gold = {nll_loss(em, crf, gold):.6f}\n")

# Explicit check: the probabilities of ALL labelings sum to one.
total = sum(np.exp(score_sequence(em, crf, y) - log_z)
            for y in itertools.product(range(L), repeat=n))
print(f"sum of P(y|x) over all {L**n} labelings: {total:.12f}\n")

# Viterbi finds the argmax labeling without touching the other 31.
path, best = viterbi_decode(em, crf)
ref_path, ref_best = brute_force_best_path(em, crf)
print(f"viterbi path:     {path} (score {best:.4f})")
print(f"enumeration path: {ref_path} (score {ref_best:.4f})\n")

# Forward-backward marginals: per-position label posteriors.
unary, pairwise = posterior_marginals(em, crf)
print("per-position P(y_t = 1):", np.round(unary[:, 1], 4))
print("boundary mass P(y_t != y_t+1):",
      np.round(pairwise.sum(axis=(1, 2)) - np.trace(pairwise, axis1=1, axis2=2), 4))
