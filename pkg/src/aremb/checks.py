"""Finite-difference verification suite over every training loss.

Builds a small double-precision model, nudges the trainable encoder away
from its frozen reference so log-ratio terms are nonzero, and probes each
loss at randomly chosen parameter coordinates. Used by the ``gradcheck``
CLI command and by the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import (
    CdaConfig,
    ReferenceModel,
    cda_loss,
    cda_loss_js,
    cda_loss_kl,
    cda_loss_logsigmoid,
    distribution_pairs,
    infonce_loss,
    score_triplet,
)
from .compress import compress, ic_loss
from .data import TripletRecord
from .gradcheck import gradcheck
from .model import LmConfig, LmModel

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _suite_fixture(dim: int, vocab: int, n_layers: int, seed: int):
    config = LmConfig(vocab_size=vocab, dim=dim, n_layers=n_layers, n_heads=2,
                      max_seq=32, seed=seed, n_compress=3)
    encoder = LmModel.init(config, dtype=np.float64)
    decoder = encoder.freeze()
    reference = ReferenceModel(encoder.freeze(), decoder)
    rng = np.random.default_rng(seed + 1)
    for p in encoder.params.values():
        p.data += 0.01 * rng.standard_normal(p.data.shape)
    record = TripletRecord(
        anchor=[1, 2, 3, 4], positive=[5, 6, 7], negatives=[[8, 9, 10, 11, 12]],
        instr_next=[13], instr_self=[14],
    )
    return encoder, decoder, reference, record


def loss_gradcheck_suite(*, dim: int = 32, vocab: int = 32, n_layers: int = 2,
                         n_points: int = 20, seed: int = 3) -> list[CheckResult]:
    """Probe every loss at ``n_points`` random parameter coordinates."""
    encoder, decoder, reference, record = _suite_fixture(dim, vocab, n_layers, seed)
    cfg = CdaConfig()

    def pooled(q, t):
        return compress(encoder, q, t).matrix.mean(axis=0)

    losses = {
        "ic_loss": lambda: ic_loss(encoder, decoder, [
            (record.anchor, record.instr_next, record.positive),
            (record.positive, record.instr_self, record.positive),
        ]),
        "cda_sigmoid": lambda: cda_loss(
            [score_triplet(encoder, decoder, reference, record)], cfg),
        "cda_log_sigmoid": lambda: cda_loss_logsigmoid(
            [score_triplet(encoder, decoder, reference, record)], cfg),
        "cda_kl": lambda: cda_loss_kl(
            [distribution_pairs(encoder, decoder, record)], cfg),
        "cda_js": lambda: cda_loss_js(
            [distribution_pairs(encoder, decoder, record)], cfg),
        "infonce": lambda: infonce_loss(
            [pooled(record.anchor, record.instr_next)],
            [pooled(record.positive, record.instr_self)],
            [[pooled(record.negatives[0], record.instr_self)]],
            cfg.tau),
    }
    params = list(encoder.trainable().values())
    results = []
    for i, (name, fn) in enumerate(losses.items()):
        err = gradcheck(fn, params, n_samples=n_points,
                        rng=np.random.default_rng(seed + 100 + i))
        results.append(CheckResult(name=name, max_rel_err=err))
    return results
