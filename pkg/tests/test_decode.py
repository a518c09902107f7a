"""Greedy search checks against hand-traced executions of the decoding loop,
using a scripted stand-in for the joint and the linguistic state."""

import numpy as np
import pytest

from linerec import decode as dc
from linerec import model as md
from linerec.errors import ConfigError, UsageError
from linerec.lattice import Vocab


def install_script(monkeypatch, table, k=3, emit_log=None):
    """Route the decoder through a lookup table.

    The fake linguistic state is the number of labels consumed so far; the
    fake joint reads the frame index from f_t[0] and that count from g_u[0],
    then puts all probability mass toward table[(t, count)] (blank when the
    pair is absent).
    """

    def fake_start(config):
        return 0

    def fake_step(prev_label, state, params, config):
        if emit_log is not None and prev_label != 0:
            emit_log.append(prev_label)
        new_state = state + (1 if prev_label != 0 else 0)
        return np.array([float(new_state)]), new_state

    def fake_joint(f_t, g_u, params):
        label = table.get((int(f_t[0]), int(g_u[0])), 0)
        out = np.full(k + 1, -10.0)
        out[label] = -0.1
        return out

    monkeypatch.setattr(dc, "linguistic_start_states", fake_start)
    monkeypatch.setattr(dc, "linguistic_step", fake_step)
    monkeypatch.setattr(dc, "joint", fake_joint)


def frames(t):
    return np.arange(t, dtype=np.float64)[:, None]


def test_all_blank_script_emits_nothing(monkeypatch):
    install_script(monkeypatch, {})
    assert dc.greedy_decode(frames(4), None, None) == ()


def test_single_emission_script(monkeypatch):
    install_script(monkeypatch, {(0, 0): 2})
    assert dc.greedy_decode(frames(3), None, None) == (2,)


def test_hand_traced_three_frame_run(monkeypatch):
    # frame 0: argmax with empty context is label 2 -> emit, context advances
    # frame 1: argmax with one-label context is blank -> nothing
    # frame 2: argmax with one-label context is label 1 -> emit
    install_script(monkeypatch, {(0, 0): 2, (2, 1): 1})
    assert dc.greedy_decode(frames(3), None, None) == (2, 1)


def test_context_advances_once_per_emission_never_on_blank(monkeypatch):
    emit_log = []
    install_script(monkeypatch, {(0, 0): 2, (2, 1): 1}, emit_log=emit_log)
    out = dc.greedy_decode(frames(3), None, None)
    # one advance for the initial blank context, then one per emitted label
    assert emit_log == list(out)


def test_output_never_longer_than_frame_count(monkeypatch):
    # a script that never produces blank makes the per-frame bound tight
    table = {(t, u): 1 for t in range(5) for u in range(6)}
    install_script(monkeypatch, table)
    assert dc.greedy_decode(frames(5), None, None) == (1,) * 5


def test_multi_emit_reuses_the_frame_until_blank(monkeypatch):
    table = {(0, 0): 2, (0, 1): 3, (2, 2): 1}
    install_script(monkeypatch, table)
    single = dc.greedy_decode(frames(3), None, None)
    multi = dc.greedy_decode(frames(3), None, None,
                             dc.DecodeConfig(mode="multi_emit", max_symbols_per_frame=3))
    # single: frame 0 emits 2 then moves on; (1,1) and (2,1) are blank
    assert single == (2,)
    # multi: frame 0 emits 2 then 3, frame 2 emits 1 with two labels of context
    assert multi == (2, 3, 1)


def test_multi_emit_respects_the_per_frame_cap(monkeypatch):
    table = {(t, u): 1 for t in range(2) for u in range(10)}
    install_script(monkeypatch, table)
    out = dc.greedy_decode(frames(2), None, None,
                           dc.DecodeConfig(mode="multi_emit", max_symbols_per_frame=4))
    assert out == (1,) * 8


def test_multi_emit_with_cap_one_equals_default_mode(monkeypatch):
    rng = np.random.default_rng(19)
    for _ in range(25):
        table = {
            (t, u): int(rng.integers(0, 4))
            for t in range(6)
            for u in range(7)
        }
        install_script(monkeypatch, table)
        a = dc.greedy_decode(frames(6), None, None)
        b = dc.greedy_decode(frames(6), None, None,
                             dc.DecodeConfig(mode="multi_emit", max_symbols_per_frame=1))
        assert a == b


def test_blank_wins_exact_ties(monkeypatch):
    def tied_joint(f_t, g_u, params):
        return np.zeros(4)  # all classes exactly equal

    monkeypatch.setattr(dc, "linguistic_start_states", lambda config: 0)
    monkeypatch.setattr(dc, "linguistic_step",
                        lambda prev, s, p, c: (np.zeros(1), s))
    monkeypatch.setattr(dc, "joint", tied_joint)
    assert dc.greedy_decode(frames(3), None, None) == ()


def test_rejects_empty_feature_sequence():
    with pytest.raises(UsageError):
        dc.greedy_decode(np.zeros((0, 4)), None, None)


def test_decode_config_validation():
    with pytest.raises(ConfigError):
        dc.DecodeConfig(mode="beam").validate()
    with pytest.raises(ConfigError):
        dc.DecodeConfig(mode="multi_emit", max_symbols_per_frame=0).validate()
    with pytest.raises(ConfigError):
        dc.DecodeConfig.from_dict({"mode": "paper_greedy", "beam": 4})


# --- on a real model ----------------------------------------------------------


def small_model():
    cfg = md.ModelConfig(
        conv_blocks=[(2, 3, (2, 2)), (2, 3, (2, 1))],
        recurrent_layers_visual=1,
        recurrent_layers_linguistic=1,
        hidden_size=3,
        embed_size=3,
        encoded_size=4,
        vocab_size=3,
        input_height=4,
    )
    return cfg, md.init_params(cfg, seed=13)


def test_real_model_decode_is_deterministic_and_bounded():
    cfg, params = small_model()
    image = np.random.default_rng(8).random((4, 20))
    feats = md.visual_encode(image, params, cfg)
    out1 = dc.greedy_decode(feats, params, cfg)
    out2 = dc.greedy_decode(feats, params, cfg)
    assert out1 == out2
    assert len(out1) <= feats.shape[0]
    assert all(1 <= i <= cfg.vocab_size for i in out1)


def test_decode_image_detokenizes_in_order(monkeypatch):
    cfg, params = small_model()
    monkeypatch.setattr(dc, "greedy_decode", lambda *a, **k: (2, 1, 2))
    text = dc.decode_image(np.zeros((4, 8)), Vocab(("x", "y", "z")), params, cfg)
    assert text == "yxy"


def test_decode_image_rejects_vocab_size_mismatch():
    cfg, params = small_model()
    with pytest.raises(ConfigError):
        dc.decode_image(np.zeros((4, 8)), Vocab(("x", "y")), params, cfg)
