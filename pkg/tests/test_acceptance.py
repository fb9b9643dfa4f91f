"""End-to-end acceptance suite: one test per criterion.

Each test prints the criterion's single result line (run pytest with -s to
watch them live) and then asserts the pass flag.  The heavy experiment
runs are shared through a session-scoped context, so the whole file costs
roughly an hour of CPU; run `pytest tests/test_acceptance.py -v -s` to
follow progress.
"""

import pytest

from mibench.acceptance import AcceptanceContext, criterion_1, criterion_2, \
    criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, \
    criterion_8, criterion_9


@pytest.fixture(scope="session")
def ctx():
    return AcceptanceContext()


def _run(criterion, ctx):
    result = criterion(ctx)
    print(result.line, flush=True)
    assert result.passed, result.line


def test_criterion_1_gradient_integrity(ctx):
    _run(criterion_1, ctx)


def test_criterion_2_lemma_sweep(ctx):
    _run(criterion_2, ctx)


def test_criterion_3_per_batch_identities(ctx):
    _run(criterion_3, ctx)


def test_criterion_4_awgn_bands(ctx):
    _run(criterion_4, ctx)


def test_criterion_5_bsc_accuracy(ctx):
    _run(criterion_5, ctx)


def test_criterion_6_rje_lower_bound(ctx):
    _run(criterion_6, ctx)


def test_criterion_7_variance_ordering(ctx):
    _run(criterion_7, ctx)


def test_criterion_8_autoencoder(ctx):
    _run(criterion_8, ctx)


def test_criterion_9_determinism(ctx):
    _run(criterion_9, ctx)
