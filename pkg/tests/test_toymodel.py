import math

import numpy as np
import pytest
import torch

from nmtcal.corpus import ParallelPair, Sentence
from nmtcal.smoothing import SmoothingPolicy
from nmtcal.toymodel.decoding import decode, greedy_decode, sequence_log_prob, teacher_forced_log_probs
from nmtcal.toymodel.evaluation import confidence_pass, inference_predictions, teacher_forced_predictions
from nmtcal.toymodel.model import ModelConfig
from nmtcal.toymodel.synthetic import SyntheticTask, generate_synthetic, source_vocabulary, target_vocabulary
from nmtcal.toymodel.toy import ToyModel, VocabularyMismatchError
from nmtcal.toymodel.training import (
    TrainConfig,
    TrainingDivergedError,
    batch_loss,
    learning_rate,
    token_epsilons,
    train,
)

TASK = SyntheticTask(seed=3)
SV, TV = source_vocabulary(TASK), target_vocabulary(TASK)
TINY = ModelConfig(vocab_size_src=len(SV), vocab_size_tgt=len(TV), embed_dim=8, hidden_dim=12,
                   encoder_layers=1, decoder_layers=1, attention_heads=2)


@pytest.fixture(scope="module")
def pairs():
    return generate_synthetic(TASK, 40, "unit")


@pytest.fixture(scope="module")
def trained(pairs):
    cfg = ModelConfig(vocab_size_src=len(SV), vocab_size_tgt=len(TV), embed_dim=16, hidden_dim=32)
    return train(cfg, TrainConfig(max_steps=150, warmup_steps=30, batch_size=16), pairs, SV, TV)


def test_learning_rate_schedule():
    assert learning_rate(200, 1.0, 400) == pytest.approx(0.5)
    assert learning_rate(400, 1.0, 400) == pytest.approx(1.0)
    assert learning_rate(1600, 1.0, 400) == pytest.approx(0.5)
    assert learning_rate(4, 1.0, 0) == pytest.approx(0.5)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_steps=-1)
    cfg = TrainConfig(smoothing=SmoothingPolicy.uniform(0.1))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_untrained_is_near_uniform(pairs):
    torch.manual_seed(0)
    model = ToyModel.create(TINY, SV, TV)
    preds = teacher_forced_predictions(model, pairs[:5])
    assert len(preds) == sum(len(p.reference) for p in pairs[:5])
    v = len(TV)
    assert all(abs(p.confidence - 1 / v) < 0.5 / v for p in preds)
    loss = float(batch_loss(model, pairs[:5], token_epsilons(SmoothingPolicy.none(), pairs[:5])).detach())
    per_token = loss * 5 / sum(len(p.reference) + 1 for p in pairs[:5])
    assert per_token == pytest.approx(math.log(v), rel=0.05)


def test_vocabulary_mismatch():
    with pytest.raises(VocabularyMismatchError):
        ToyModel.create(ModelConfig(vocab_size_src=3, vocab_size_tgt=len(TV)), SV, TV)
    model = ToyModel.create(TINY, SV, TV)
    bad = ParallelPair(Sentence.from_surfaces(["s1"]), Sentence.from_surfaces(["zzz"]))
    with pytest.raises(VocabularyMismatchError, match="zzz"):
        model.check_corpus([bad])


def _rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def test_full_model_gradient_matches_finite_differences(pairs):
    torch.manual_seed(1)
    model = ToyModel.create(TINY, SV, TV)
    corpus = pairs[:2]
    eps = token_epsilons(SmoothingPolicy.uniform(0.1), corpus)
    params = list(model.net.parameters())
    model.net.zero_grad()
    batch_loss(model, corpus, eps).backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).numpy().copy()

    flat = [p.data.reshape(-1) for p in params]
    numeric = []
    h = 1e-5
    with torch.no_grad():
        for vec in flat:
            for i in range(vec.numel()):
                old = float(vec[i])
                vec[i] = old + h
                up = float(batch_loss(model, corpus, eps))
                vec[i] = old - h
                down = float(batch_loss(model, corpus, eps))
                vec[i] = old
                numeric.append((up - down) / (2 * h))
    assert _rel_err(analytic, numeric) <= 1e-4


def test_training_is_deterministic(pairs):
    cfg = TrainConfig(max_steps=20, warmup_steps=5, batch_size=8, seed=4)
    a = train(TINY, cfg, pairs, SV, TV)
    b = train(TINY, cfg, pairs, SV, TV)
    assert a.loss_curve == b.loss_curve
    for x, y in zip(a.net.parameters(), b.net.parameters()):
        assert torch.equal(x, y)


def test_zero_steps_returns_initialisation(pairs):
    model = train(TINY, TrainConfig(max_steps=0), pairs, SV, TV)
    assert model.loss_curve == []


def test_divergence_reports_step(pairs):
    with pytest.raises(TrainingDivergedError) as err:
        train(TINY, TrainConfig(max_steps=5, peak_lr=float("inf"), warmup_steps=0), pairs, SV, TV)
    assert err.value.step >= 1


def test_graduated_requires_confidences(pairs):
    with pytest.raises(ValueError):
        token_epsilons(SmoothingPolicy.graduated(), pairs)
    conf = [np.full(len(p.reference) + 1, 0.9) for p in pairs]
    eps = token_epsilons(SmoothingPolicy.graduated(), pairs, conf)
    assert all((e == 0.3).all() for e in eps)


def test_beam_one_equals_greedy(trained, pairs):
    for p in pairs:
        g, b = greedy_decode(trained, p.source), decode(trained, p.source, beam_size=1)
        assert g.tokens == b.tokens
        assert g.confidences == b.confidences


def test_beam_four_score_rarely_below_beam_one(trained):
    # A pruned beam can drop the greedy prefix, so this is a rate, not a law.
    probes = generate_synthetic(TASK, 100, "probe")
    worse = sum(decode(trained, p.source, 4).score < decode(trained, p.source, 1).score - 1e-12 for p in probes)
    assert worse <= 5


def test_unpruned_beam_never_below_greedy(trained, pairs):
    v = len(TV)
    for p in pairs[:5]:
        full = decode(trained, p.source, beam_size=v * v, max_len=2)
        g = greedy_decode(trained, p.source, max_len=2)
        if not g.truncated:
            assert not full.truncated
            assert full.score >= g.score - 1e-12


def test_decode_confidences_in_range(trained, pairs):
    for p in pairs[:10]:
        r = decode(trained, p.source, beam_size=3)
        assert len(r.confidences) == len(r.tokens)
        assert all(0 < c <= 1 for c in r.confidences)


def test_decode_truncation_flag(trained, pairs):
    r = decode(trained, pairs[0].source, beam_size=2, max_len=1)
    g = greedy_decode(trained, pairs[0].source, max_len=1)
    assert len(r.tokens) <= 1 and len(g.tokens) <= 1
    long = greedy_decode(trained, pairs[0].source)
    if len(long.tokens) > 1:
        assert g.truncated and g.tokens.surfaces == long.tokens.surfaces[:1]


def test_decode_rejects_bad_beam(trained, pairs):
    with pytest.raises(ValueError):
        decode(trained, pairs[0].source, beam_size=0)


def test_sequence_log_prob_consistency(trained, pairs):
    for p, lp in zip(pairs[:10], teacher_forced_log_probs(trained, pairs[:10])):
        gold = trained.encode_target(p.reference.surfaces) + [trained.tgt_vocab.eos]
        per_step = sum(float(lp[i, t]) for i, t in enumerate(gold))
        assert per_step == pytest.approx(sequence_log_prob(trained, p.source, p.reference), abs=1e-9)


def test_greedy_score_matches_sequence_log_prob(trained, pairs):
    r = greedy_decode(trained, pairs[0].source)
    if not r.truncated:
        assert r.score == pytest.approx(sequence_log_prob(trained, pairs[0].source, r.tokens), abs=1e-9)


def test_teacher_forced_shape_and_confidence(trained, pairs):
    preds = teacher_forced_predictions(trained, pairs)
    assert len(preds) == sum(len(p.reference) for p in pairs)
    conf = confidence_pass(trained, pairs)
    assert [len(c) for c in conf] == [len(p.reference) + 1 for p in pairs]
    assert all(((c > 0) & (c <= 1)).all() for c in conf)


def test_inference_predictions_shape(trained, pairs):
    preds, decoded = inference_predictions(trained, pairs[:10], beam_size=2)
    assert len(preds) == sum(len(d.tokens) for d in decoded)
    assert all(p.correct == (p.label == "C") for p in preds)


def test_inference_identity_all_correct():
    # A memorised single pair decodes to its reference.
    task = SyntheticTask.copy_task(n_source_words=6)
    sv, tv = source_vocabulary(task), target_vocabulary(task)
    data = generate_synthetic(task, 1, "memo")
    cfg = ModelConfig(vocab_size_src=len(sv), vocab_size_tgt=len(tv), embed_dim=16, hidden_dim=32)
    model = train(cfg, TrainConfig(max_steps=200, warmup_steps=20, batch_size=1), data, sv, tv)
    preds, decoded = inference_predictions(model, data)
    assert decoded[0].tokens == data[0].reference
    assert all(p.correct for p in preds)
    tf = teacher_forced_predictions(model, data)
    assert all(p.correct and p.confidence > 0.9 for p in tf)


def test_checkpoint_round_trip(trained, pairs, tmp_path):
    path = tmp_path / "m.npz"
    trained.save(path)
    again = ToyModel.load(path)
    assert again.config == trained.config
    assert decode(again, pairs[0].source, 2) == decode(trained, pairs[0].source, 2)
    second = tmp_path / "n.npz"
    again.save(second)
    assert path.read_bytes() == second.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, __meta__=np.array('{"format": "other"}'))
    with pytest.raises(ValueError, match="not a toy-model checkpoint"):
        ToyModel.load(path)


def test_copy_task_trainability():
    task = SyntheticTask.copy_task()
    sv, tv = source_vocabulary(task), target_vocabulary(task)
    train_pairs = generate_synthetic(task, 2000, "train")
    test_pairs = generate_synthetic(task, 100, "test")
    cfg = ModelConfig(vocab_size_src=len(sv), vocab_size_tgt=len(tv))
    model = train(cfg, TrainConfig(max_steps=2000), train_pairs, sv, tv)
    preds = teacher_forced_predictions(model, test_pairs)
    assert np.mean([p.correct for p in preds]) >= 0.95
