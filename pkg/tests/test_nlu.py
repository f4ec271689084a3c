import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskbot import nlu


def data(name):
    return str(resources.files("deskbot").joinpath("data", name))


CORPUS = nlu.load_corpus(data("corpus_desk.tsv"))


@pytest.fixture(scope="module")
def model():
    return nlu.train(CORPUS)


# --- transcribe ---------------------------------------------------------------

def test_transcribe_zero_wer_identity():
    req = nlu.TranscriptRequest(true_text="Please open the door", wer=0.0, seed=1)
    assert nlu.transcribe(req).text == "Please open the door"
    assert nlu.transcribe(req).source == "Transcribed"


def test_transcribe_drop_only_keeps_one_word():
    req = nlu.TranscriptRequest(true_text="open the door", wer=1.0, seed=3, drop_only=True)
    out = nlu.transcribe(req)
    assert out.text == "open"


def test_transcribe_deterministic():
    req = nlu.TranscriptRequest(true_text="switch on the light please", wer=0.5, seed=9)
    assert nlu.transcribe(req).text == nlu.transcribe(req).text


def test_transcribe_substitutes_homophones():
    # at wer=1 without drop_only, every confusable word must flip
    req = nlu.TranscriptRequest(true_text="light door cup", wer=1.0, seed=0)
    assert nlu.transcribe(req).text.split() == ["right", "drawer", "cap"]


def test_transcribe_rejects_bad_wer():
    with pytest.raises(ValueError):
        nlu.TranscriptRequest(true_text="x", wer=1.5, seed=0)


# --- featurize ------------------------------------------------------------------

def test_featurize_deterministic_and_case_folded():
    a = nlu.featurize(nlu.Utterance(text="Open the door"))
    b = nlu.featurize(nlu.Utterance(text="open THE door"))
    assert np.array_equal(a, b)


def test_featurize_frozen_hash_buckets():
    # FNV-1a 64 of "open" is 17892686645580689641: bucket 233, sign bit set
    v = nlu.featurize(nlu.Utterance(text="open"))
    assert v[233] == -1.0
    assert np.count_nonzero(v) == 1
    # "the" hashes to 6266135566914540924: bucket 124, positive
    v2 = nlu.featurize(nlu.Utterance(text="the"))
    assert v2[124] == 1.0


def test_featurize_similarity_ordering():
    f = lambda t: nlu.featurize(nlu.Utterance(text=t))
    base = f("open the door")
    assert base @ f("pass me a cup of water") < base @ f("please open the door")


def test_featurize_unit_norm():
    v = nlu.featurize(nlu.Utterance(text="switch on the light"))
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_featurize_empty_tokens_error():
    with pytest.raises(ValueError, match="empty-utterance"):
        nlu.featurize(nlu.Utterance(text="!!!"))


def test_utterance_validation():
    with pytest.raises(ValueError):
        nlu.Utterance(text="   ")


# --- classify -------------------------------------------------------------------

def zero_model(d=8, h=4, k=4):
    return nlu.MLPModel(w1=np.zeros((h, d)), b1=np.zeros(h),
                        w2=np.zeros((k, h)), b2=np.zeros(k),
                        labels=nlu.INTENTS)


def test_classify_zero_weights_uniform():
    dist = nlu.classify(zero_model(), np.ones(8))
    for p in dist.probs.values():
        assert p == pytest.approx(0.25)


def test_classify_random_models_sum_to_one():
    rng = np.random.default_rng(4)
    for _ in range(20):
        m = nlu.MLPModel(w1=rng.normal(size=(6, 12)), b1=rng.normal(size=6),
                         w2=rng.normal(size=(4, 6)), b2=rng.normal(size=4),
                         labels=nlu.INTENTS)
        dist = nlu.classify(m, rng.normal(size=12))
        assert sum(dist.probs.values()) == pytest.approx(1.0, abs=1e-9)


def test_classify_shape_error():
    with pytest.raises(ValueError):
        nlu.classify(zero_model(d=8), np.ones(9))


def test_trained_model_examples(model):
    dist = nlu.classify(model, nlu.featurize(nlu.Utterance(text="switch on the light")))
    assert max(dist.probs, key=dist.probs.get) == "light_on"


# --- select_intent ----------------------------------------------------------------

def test_select_intent_above_threshold():
    d = nlu.IntentDistribution(probs={"a": 0.7, "b": 0.3})
    assert nlu.select_intent(d, 0.6) == ("a", 0.7)


def test_select_intent_below_threshold():
    d = nlu.IntentDistribution(probs={"a": 0.4, "b": 0.35, "c": 0.25})
    label, conf = nlu.select_intent(d, 0.6)
    assert label == nlu.UNKNOWN
    assert conf == 0.4


def test_select_intent_tie_alphabetical():
    d = nlu.IntentDistribution(probs={"zeta": 0.5, "alpha": 0.5})
    assert nlu.select_intent(d, 0.4) == ("alpha", 0.5)


def test_select_intent_exactly_at_threshold_is_known():
    d = nlu.IntentDistribution(probs={"a": 0.6, "b": 0.4})
    assert nlu.select_intent(d, 0.6)[0] == "a"


@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=6),
       st.floats(1e-3, 1e3))
@settings(max_examples=1000, deadline=None)
def test_select_intent_scale_invariance(raw, scale):
    logits = np.log(np.asarray(raw))
    labels = [f"l{i}" for i in range(len(raw))]
    base = nlu._softmax(logits)
    scaled = nlu._softmax(logits * scale)
    d1 = nlu.IntentDistribution(probs=dict(zip(labels, base / base.sum())))
    d2 = nlu.IntentDistribution(probs=dict(zip(labels, scaled / scaled.sum())))
    # scaling logits by a positive constant never changes the argmax label
    assert nlu.select_intent(d1, 0.0)[0] == nlu.select_intent(d2, 0.0)[0]


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0))
@settings(max_examples=1000, deadline=None)
def test_select_intent_threshold_monotone(raw, t_low, t_high):
    if t_low > t_high:
        t_low, t_high = t_high, t_low
    vals = np.asarray(raw) / np.sum(raw)
    d = nlu.IntentDistribution(probs={f"l{i}": float(v) for i, v in enumerate(vals)})
    low_label, _ = nlu.select_intent(d, t_low)
    high_label, _ = nlu.select_intent(d, t_high)
    # raising the threshold may only turn a label into Unknown
    if low_label == nlu.UNKNOWN:
        assert high_label == nlu.UNKNOWN
    else:
        assert high_label in (low_label, nlu.UNKNOWN)


# --- slots and binding ---------------------------------------------------------

def test_fill_slots_water_cup_and_hand():
    s = nlu.fill_slots(nlu.Utterance(text="please hand me the water cup"), "fetch_object")
    assert s == {"destination": "hand", "target": "paper_cup"}


def test_fill_slots_door():
    s = nlu.fill_slots(nlu.Utterance(text="open the door"), "open_door")
    assert s == {"target": "door_switch"}


def test_fill_slots_light_off():
    s = nlu.fill_slots(nlu.Utterance(text="I am gonna sleep, light off please"), "light_off")
    assert s == {"target": "light_switch"}


def test_fill_slots_bare_water_marks_ambiguous():
    s = nlu.fill_slots(nlu.Utterance(text="I need some water"), "fetch_object")
    assert s["target"] == "paper_cup"
    assert s["ambiguous"] == "true"


def test_fill_slots_longest_match_beats_bare_water():
    s = nlu.fill_slots(nlu.Utterance(text="bring the water cup"), "fetch_object")
    assert "ambiguous" not in s


def test_bind_press_ends():
    off = nlu.bind("light_off", {"target": "light_switch"})
    assert off == nlu.Command(function="PressTarget",
                              args={"target_class": "light_switch", "press_end": "Far"})
    on = nlu.bind("light_on", {"target": "light_switch"})
    assert on.args["press_end"] == "Near"
    door = nlu.bind("open_door", {})
    assert door.args == {"target_class": "door_switch", "press_end": "Far"}


def test_bind_fetch_requires_target():
    with pytest.raises(nlu.UnbindableError) as exc:
        nlu.bind("fetch_object", {})
    assert exc.value.intent == "fetch_object"


def test_bind_fetch_carries_ambiguity():
    cmd = nlu.bind("fetch_object", {"target": "paper_cup", "ambiguous": "true"})
    assert cmd.args["ambiguous"] is True


# --- train -----------------------------------------------------------------------

def test_train_full_accuracy_on_desk_corpus(model):
    assert model.train_accuracy == 1.0


def test_train_separable_two_class():
    corpus = [("aaa", "x"), ("bbb", "y")] * 3
    m = nlu.train(corpus, nlu.TrainConfig(epochs=300, seed=1))
    assert nlu.evaluate(m, corpus) >= 0.99


def test_train_deterministic():
    corpus = CORPUS[:20]  # spans two classes
    a = nlu.train(corpus, nlu.TrainConfig(seed=5, epochs=50))
    b = nlu.train(corpus, nlu.TrainConfig(seed=5, epochs=50))
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)


def test_train_degenerate_corpus():
    with pytest.raises(ValueError):
        nlu.train([])
    with pytest.raises(ValueError):
        nlu.train([("only one class", "x"), ("still one", "x")])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    n, d, h, k = 6, 10, 5, 3
    x = rng.normal(size=(n, d))
    y = np.eye(k)[rng.integers(0, k, size=n)]
    w1 = rng.normal(size=(h, d)) * 0.5
    b1 = rng.normal(size=h) * 0.1
    w2 = rng.normal(size=(k, h)) * 0.5
    b2 = rng.normal(size=k) * 0.1
    _, grads = nlu._loss_and_grads(w1, b1, w2, b2, x, y)
    params = [w1, b1, w2, b2]
    eps = 1e-5
    for pi, (p, g) in enumerate(zip(params, grads)):
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            lp, _ = nlu._loss_and_grads(*params, x, y)
            flat[idx] = orig - eps
            lm, _ = nlu._loss_and_grads(*params, x, y)
            flat[idx] = orig
            num = (lp - lm) / (2 * eps)
            ana = g.reshape(-1)[idx]
            scale = max(abs(num), abs(ana), 1e-8)
            assert abs(num - ana) / scale <= 1e-4, f"param {pi} element {idx}"


# --- pipeline -------------------------------------------------------------------

def test_interpret_unknown_maps_to_noop(model):
    res, cmd = nlu.interpret(nlu.Utterance(text="what is the weather like"), model)
    # either below threshold (Unknown+Noop) or confidently wrong is a model
    # property; assert the contract: Unknown iff Noop
    assert (res.intent == nlu.UNKNOWN) == (cmd.function == "Noop")


def test_interpret_deterministic(model):
    a = nlu.interpret(nlu.Utterance(text="pass me a cup of water"), model)
    b = nlu.interpret(nlu.Utterance(text="pass me a cup of water"), model)
    assert a == b


def test_interpret_paper_commands_bind(model):
    res, cmd = nlu.interpret(nlu.Utterance(text="Please have the light off"), model)
    assert res.intent == "light_off"
    assert cmd.args["press_end"] == "Far"


# --- io --------------------------------------------------------------------------

def test_corpus_loader_rejects_missing_tab(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("no tab here\n")
    with pytest.raises(ValueError):
        nlu.load_corpus(p)


def test_model_save_load_round_trip(tmp_path, model):
    p = tmp_path / "m.json"
    nlu.save_model(model, p)
    again = nlu.load_model(p)
    assert again.labels == model.labels
    assert np.array_equal(again.w1, model.w1)
    assert again.train_accuracy == model.train_accuracy
    u = nlu.Utterance(text="open the door")
    assert nlu.interpret(u, again) == nlu.interpret(u, model)


def test_model_version_gate(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"version": 99}')
    with pytest.raises(ValueError):
        nlu.load_model(p)
