import numpy as np
import pytest

from maskcodec.coder import UniformModel, rate_uniform
from maskcodec.harness import (
    CorpusSpec,
    MarkovSource,
    Report,
    ReportRow,
    check_ordering,
    empirical_entropy,
    gen_corpus,
    gen_markov_grid,
    parse_corpus_spec,
    run_savings_report,
)
from maskcodec.probmodel import CountingModel
from maskcodec.schedules import checkerboard_schedule, qlds_schedule
from maskcodec.tokens import TokenGrid


def test_iid_source_entropy_near_log2v():
    g = gen_markov_grid(MarkovSource(16, 0.0, seed=1), 64, 64)
    h0 = empirical_entropy([g])
    assert abs(h0 - 4.0) / 4.0 < 0.02


def test_persistent_source_has_low_entropy():
    corpus = gen_corpus(MarkovSource(64, 0.95, seed=2), 32, 32, 4)
    assert empirical_entropy(corpus, "order1") < 0.5 * np.log2(64)


def test_same_seed_same_grid():
    src = MarkovSource(8, 0.7, seed=5)
    assert gen_markov_grid(src, 6, 6) == gen_markov_grid(src, 6, 6)
    assert gen_corpus(src, 6, 6, 3, offset=2) == gen_corpus(src, 6, 6, 5)[2:]


def test_entropy_oracles():
    assert empirical_entropy([TokenGrid(np.zeros((5, 5), int), 3)]) == 0.0
    rng = np.random.default_rng(0)
    iid = [TokenGrid(rng.integers(0, 4, (64, 64)), 4)]
    assert abs(empirical_entropy(iid) - 2.0) / 2.0 < 0.02
    corpus = gen_corpus(MarkovSource(16, 0.9, seed=3), 16, 16, 20)
    h0, h1, h2 = (empirical_entropy(corpus, c) for c in ("order0", "order1", "order2"))
    assert h0 >= h1 >= h2
    with pytest.raises(ValueError):
        empirical_entropy([])


def test_source_validation():
    with pytest.raises(ValueError):
        MarkovSource(8, 1.0)


def test_report_baseline_and_counting_rows():
    corpus = gen_corpus(MarkovSource(16, 0.9, seed=0), 8, 8, 12)
    s = qlds_schedule(8, 8, 2.2, 5)
    cnt = CountingModel(16, "nearest").fit(corpus[:8], s)
    rep = run_savings_report([("uniform", UniformModel(16), checkerboard_schedule(8, 8)), ("counting", cnt, s)], corpus[8:])
    base = rep.row("uniform")
    assert base.savings_pct == 0.0
    assert base.bpp == rate_uniform(8, 8, 16, 512, 512)
    assert rep.row("counting").savings_pct > 0
    assert base.header_bits > 0
    csv = rep.to_csv().splitlines()
    assert csv[0] == "model,schedule,tokens,bpp,savings_pct,header_bits"
    assert csv[1].startswith("uniform,checkerboard,64,")
    assert "Baseline" in rep.to_text()
    with pytest.raises(ValueError):
        run_savings_report([("counting", cnt, s)], corpus)


def test_report_is_deterministic_and_job_count_independent():
    corpus = gen_corpus(MarkovSource(16, 0.9, seed=0), 8, 8, 6)
    s = qlds_schedule(8, 8, 2.2, 5)
    entries = [("uniform", UniformModel(16), s), ("counting", CountingModel(16, "nearest"), s)]
    assert run_savings_report(entries, corpus).to_csv() == run_savings_report(entries, corpus, jobs=2).to_csv()


def _fake(sav):
    rows = [ReportRow("uniform", "checkerboard", 256, 1.0, 0.0, 0.0)]
    for name, v in sav.items():
        rows.append(ReportRow("mim", name, 256, 1.0, v, 0.0))
    return Report(rows)


def test_ordering_check():
    rep = _fake({"checkerboard": 30.0, "quincunx": 40.0, "qlds:2.2:5": 39.7, "qlds:2.2:12": 41.0})
    chain = "qlds12>=qlds5>=quincunx>=checkerboard>uniform"
    assert check_ordering(rep, chain) == []
    bad = check_ordering(rep, chain, tol=0.1)
    assert len(bad) == 1 and bad[0].startswith("qlds5")
    with pytest.raises(ValueError):
        check_ordering(rep, "qlds7>=uniform")


def test_corpus_spec_parsing():
    assert parse_corpus_spec("markov") == CorpusSpec()
    assert parse_corpus_spec("markov:V=8,p=0.5,train=3").V == 8
    with pytest.raises(ValueError):
        parse_corpus_spec("markov:X=1")
    with pytest.raises(ValueError):
        parse_corpus_spec("images")
    train, test = CorpusSpec(V=8, h=4, w=4, train=3, test=2).make()
    assert len(train) == 3 and len(test) == 2
