import math

import numpy as np
import pytest

from waitinfo.bleu import bleu
from waitinfo.checkpoint import load_checkpoint, save_checkpoint
from waitinfo.corpus import (FILLER_BASE, Batch, SentencePair, generate_corpus, make_batch, read_corpus,
                             write_corpus)
from waitinfo.model import ModelTranslator
from waitinfo.policy import FULL_SENTENCE, WaitInfo, simulate
from waitinfo.train import (TrainConfig, TrainingDiverged, build_model, info_class_analysis, load_config,
                            learning_rate, parse_k_list, sample_K, sweep, sweep_csv, token_accuracy, train, zeta_for)
from waitinfo.vocab import BOS, EOS, PAD

TINY_MODEL = dict(d_model=8, heads=2, enc_layers=1, dec_layers=1, ffn=16, dropout=0.0)


def tiny_config(**kw):
    base = dict(train_size=40, steps=20, batch_size=8, log_every=5, warmup=5, model=TINY_MODEL)
    return TrainConfig.from_dict({**base, **kw})


@pytest.mark.parametrize("task", ["copy", "reverse", "skewed-copy"])
def test_corpus_is_deterministic_and_bounded(task):
    a, b = generate_corpus(task, 50, seed=9), generate_corpus(task, 50, seed=9)
    assert a == b
    assert a != generate_corpus(task, 50, seed=10)
    for p in a:
        assert 1 <= len(p.src) <= 16 and 1 <= len(p.tgt) <= 16
        assert PAD not in p.src and EOS not in p.src and BOS not in p.tgt


def test_task_definitions():
    for p in generate_corpus("copy", 20, seed=1):
        assert p.src == p.tgt
    for p in generate_corpus("reverse", 20, seed=1):
        assert p.src == p.tgt[::-1]
    for p in generate_corpus("skewed-copy", 20, seed=1):
        assert [t for t, c in zip(p.src, p.cls) if c == "C"] == p.tgt
        assert all((t >= FILLER_BASE) == (c == "F") for t, c in zip(p.src, p.cls))


def test_skewed_length_ratio():
    pairs = generate_corpus("skewed-copy", 2000, seed=2)
    ratio = sum(len(p.src) for p in pairs) / sum(len(p.tgt) for p in pairs)
    assert ratio == pytest.approx(1.5, abs=0.05)
    assert all(len(p.src) > len(p.tgt) for p in pairs)


def test_unknown_task():
    with pytest.raises(ValueError):
        generate_corpus("translate", 3, seed=0)


def test_corpus_file_round_trip(tmp_path):
    pairs = generate_corpus("skewed-copy", 10, seed=3)
    write_corpus(tmp_path / "c.jsonl", pairs)
    assert read_corpus(tmp_path / "c.jsonl") == pairs
    (tmp_path / "bad.jsonl").write_text('{"src": [3]}\n')
    with pytest.raises(ValueError):
        read_corpus(tmp_path / "bad.jsonl")
    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(ValueError):
        read_corpus(tmp_path / "empty.jsonl")


def test_make_batch_layout():
    batch = make_batch([SentencePair([5, 6, 7], [5, 6, 7]), SentencePair([8], [8])])
    np.testing.assert_array_equal(batch.src, [[5, 6, 7, EOS], [8, EOS, PAD, PAD]])
    np.testing.assert_array_equal(batch.tgt_in, [[BOS, 5, 6, 7], [BOS, 8, PAD, PAD]])
    np.testing.assert_array_equal(batch.tgt_out, [[5, 6, 7, EOS], [8, EOS, PAD, PAD]])
    np.testing.assert_array_equal(batch.src_content.sum(1), [3, 1])
    np.testing.assert_array_equal(batch.tgt_content.sum(1), [3, 1])
    np.testing.assert_array_equal(zeta_for(batch, "mean"), [3.0, 1.0])


def test_zeta_modes():
    batch = make_batch([SentencePair([5, 6, 7, 9], [5, 6])])
    assert zeta_for(batch, "mean")[0] == 3.0
    assert zeta_for(batch, "src")[0] == 4.0
    assert zeta_for(batch, "tgt")[0] == 2.0


def test_sample_K_singleton_and_sentinel():
    rng = np.random.default_rng(0)
    assert {sample_K([3], rng) for _ in range(50)} == {3.0}
    assert sample_K([], rng, 1.0) == FULL_SENTENCE


def test_sample_K_frequencies():
    rng = np.random.default_rng(1)
    draws = [sample_K(list(range(1, 10)), rng, 0.1) for _ in range(10000)]
    values, counts = np.unique(draws, return_counts=True)
    freq = dict(zip(values, counts / len(draws)))
    assert set(freq) == set(map(float, range(1, 10))) | {math.inf}
    for k in range(1, 10):
        assert abs(freq[float(k)] - 0.1) <= 0.02
    assert abs(freq[math.inf] - 0.1) <= 0.02


def test_full_sentence_sentinel_disables_source_mask():
    model = build_model(tiny_config())
    batch = make_batch(generate_corpus("copy", 4, seed=2))
    _, _, _, visible = model.forward(batch, FULL_SENTENCE)
    for b in range(batch.size):
        assert visible[b, :, : batch.src_len[b]].all()


def test_parse_k_list():
    assert parse_k_list("1..3") == [1.0, 2.0, 3.0]
    assert parse_k_list("1,2.5,full") == [1.0, 2.5, math.inf]
    assert len(parse_k_list("1..15")) == 15
    with pytest.raises(ValueError):
        parse_k_list(",")


def test_config_yaml_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("task: reverse\nsteps: 12\nd_model: 16\nmodel:\n  heads: 2\n")
    cfg = load_config(path, {"steps": 7})
    assert cfg.task == "reverse" and cfg.steps == 7
    assert cfg.model.d_model == 16 and cfg.model.heads == 2
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    path.write_text("disable_info_aware_self_attn: true\nmodel:\n  disable_info_consistent_cross_attn: false\n")
    cfg = load_config(path)
    assert cfg.model.info_self_attn is False and cfg.model.info_cross_attn is True
    path.write_text("stepz: 3\n")
    with pytest.raises(ValueError):
        load_config(path)
    with pytest.raises(ValueError):
        TrainConfig(zeta_mode="median")


def test_bleu_examples():
    ref = [[3, 4, 5, 6, 7]]
    assert bleu(ref, ref) == pytest.approx(100.0)
    assert bleu([[]], ref) == 0.0
    hand = 100 * (0.75 * (2 / 3) * 0.5 * 0.5) ** 0.25
    assert bleu([list("abcd")], [list("abce")]) == pytest.approx(hand, abs=1e-9)
    assert hand == pytest.approx(59.4603557501, abs=1e-9)


def test_bleu_brevity_penalty():
    short = bleu([[3, 4, 5]], [[3, 4, 5, 6, 7, 8]])
    assert short < bleu([[3, 4, 5, 6, 7, 8]], [[3, 4, 5, 6, 7, 8]])
    with pytest.raises(ValueError):
        bleu([[1]], [[1], [2]])


def test_training_smoke_and_log(tmp_path):
    model, records = train(tiny_config(steps=30), log_path=tmp_path / "log.jsonl")
    assert [r["step"] for r in records] == [5, 10, 15, 20, 25, 30]
    assert records[-1]["ce"] < records[0]["ce"]
    assert all(math.isfinite(r["total"]) for r in records)
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 6


def test_training_is_deterministic():
    a, ra = train(tiny_config(steps=6))
    b, rb = train(tiny_config(steps=6))
    assert ra == rb
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()


def test_divergence_detected():
    cfg = tiny_config(steps=3)
    model = build_model(cfg)
    model.params["out.b"].data[:] = np.nan
    with pytest.raises(TrainingDiverged):
        train(cfg, model=model)


def test_corpus_checks_against_model():
    cfg = tiny_config(steps=1)
    with pytest.raises(ValueError):
        train(cfg, corpus=[SentencePair([5] * 80, [5] * 80)])
    with pytest.raises(ValueError):
        train(cfg, corpus=[SentencePair([99], [5])])


def test_sweep_is_deterministic_and_checkpoint_stable(tmp_path):
    model, _ = train(tiny_config(steps=10))
    pairs = generate_corpus("copy", 8, seed=4)
    ks = parse_k_list("1..3,full")
    first = sweep_csv(sweep(model, pairs, ks))
    assert first == sweep_csv(sweep(model, pairs, ks))
    save_checkpoint(model, tmp_path / "m.ckpt")
    assert sweep_csv(sweep(load_checkpoint(tmp_path / "m.ckpt"), pairs, ks)) == first
    last = first.strip().splitlines()[-1].split(",")
    assert last[1] == "full" and last[5] == "1.00"


def test_unit_info_training_gives_wait_k_style_schedule():
    cfg = tiny_config(steps=5, model={**TINY_MODEL, "fix_src_info_one": True, "fix_tgt_info_one": True})
    model, _ = train(cfg)
    for p in generate_corpus("copy", 10, seed=5):
        for K in (1, 2, 3):
            out, trace = simulate(ModelTranslator(model), p.src + [EOS], WaitInfo(K))
            n = len(p.src) + 1
            assert trace.g() == [min(i + K, n) for i in range(1, len(out) + 1)]


def test_token_accuracy_bounds():
    model, _ = train(tiny_config(steps=2))
    acc = token_accuracy(model, generate_corpus("copy", 5, seed=6))
    assert 0.0 <= acc <= 1.0


def test_info_class_analysis_needs_labels():
    model = build_model(tiny_config())
    with pytest.raises(ValueError):
        info_class_analysis(model, generate_corpus("copy", 3, seed=0))
    stats = info_class_analysis(model, generate_corpus("skewed-copy", 5, seed=0))
    assert set(stats) == {"C", "F"}
    assert stats["C"]["q1"] <= stats["C"]["median"] <= stats["C"]["q3"]


def test_frequency_provider_training():
    cfg = tiny_config(steps=3, task="skewed-copy", model={**TINY_MODEL, "info_provider": "frequency"})
    model, records = train(cfg)
    assert math.isfinite(records[-1]["total"])
    with pytest.raises(ValueError):
        build_model(cfg)


def test_learning_rate_schedules():
    const = TrainConfig(lr=1e-3, warmup=100, lr_schedule="constant")
    decay = TrainConfig(lr=1e-3, warmup=100, lr_schedule="inverse_sqrt")
    assert learning_rate(const, 50) == learning_rate(decay, 50) == pytest.approx(5e-4)
    assert learning_rate(const, 400) == 1e-3
    assert learning_rate(decay, 100) == pytest.approx(1e-3)
    assert learning_rate(decay, 400) == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        TrainConfig(lr_schedule="cosine")
