import numpy as np
import pytest
from scipy.special import logit

from csgru import autodiff as ad
from csgru.autodiff import SurrogateSpec, Tape
from csgru.cells import (
    CellState, LayerSpec, ModSet, Network, StepConfig, cuba_lif_step, gru_step, readout_step,
    spikgru_step, unroll, variant_step,
)
from csgru.errors import ConfigError, ShapeError
from oracles import conv_as_matrix, random_cell_params, sigmoid


def zero_state(n):
    z = np.zeros(n)
    return CellState(z, z, z)


def test_modset_labels_and_ids():
    assert ModSet().label() == "SpikGRU"
    assert ModSet.from_ids([4, 2, 1, 3]).label() == "SpikGRU-mod1-2-3-4"
    assert ModSet.from_ids([2]).ids == (2,)
    with pytest.raises(ConfigError):
        ModSet.from_ids([5])


def test_cuba_lif_hand_trace():
    # constant drive 2, no leak: v reaches 2 and fires, then the reset takes one v_th off
    p = {"alpha": np.zeros(1), "beta": np.zeros(1), "i.W": np.zeros((1, 1)), "i.U": np.zeros((1, 1)),
         "i.b": np.array([2.0])}
    state, s = cuba_lif_step(zero_state(1), np.zeros(1), p)
    assert (state.i.value, state.v.value, s.value) == (2.0, 2.0, 1.0)
    state, s = cuba_lif_step(state, np.zeros(1), p)
    assert (state.i.value, state.v.value, s.value) == (2.0, 1.0, 1.0)


def test_threshold_fires_at_equality():
    p = {"alpha": np.zeros(1), "beta": np.zeros(1), "i.W": np.zeros((1, 1)), "i.U": np.zeros((1, 1)),
         "i.b": np.array([1.0])}
    _, s = cuba_lif_step(zero_state(1), np.zeros(1), p)
    assert s.value == 1.0


def test_spikgru_matches_explicit_formula():
    rng = np.random.default_rng(0)
    p = random_cell_params(rng, 4, 3)
    x = rng.integers(0, 2, 4).astype(float)
    st = CellState(rng.normal(size=3), rng.normal(size=3), rng.integers(0, 2, 3).astype(float))
    i = p["alpha"] * st.i + p["i.W"] @ x + p["i.U"] @ st.s + p["i.b"]
    z = sigmoid(p["z.W"] @ x + p["z.U"] @ st.s + p["z.b"])
    v = z * st.v + (1 - z) * i - st.s
    new, s = spikgru_step(st, x, p)
    assert np.allclose(new.i.value, i, atol=1e-14) and np.allclose(new.v.value, v, atol=1e-14)
    assert np.array_equal(s.value, (v >= 1.0).astype(float))


def test_mod1_and_mod2_formulas():
    rng = np.random.default_rng(1)
    p = random_cell_params(rng, 4, 3, gates=("r", "i", "z"), decays=())
    p["z.W"] = rng.normal(size=(3, 3))  # mod2: z reads i_t
    x = rng.integers(0, 2, 4).astype(float)
    st = CellState(rng.normal(size=3), rng.normal(size=3), rng.integers(0, 2, 3).astype(float))
    r = sigmoid(p["r.W"] @ x + p["r.U"] @ st.s + p["r.b"])
    i = r * st.i + p["i.W"] @ x + p["i.U"] @ st.s + p["i.b"]
    z = sigmoid(p["z.W"] @ i + p["z.U"] @ st.s + p["z.b"])
    v = z * st.v + (1 - z) * i - st.s
    new, _ = variant_step(st, x, p, ModSet(mod1=True, mod2=True))
    assert np.allclose(new.i.value, i, atol=1e-14) and np.allclose(new.v.value, v, atol=1e-14)


def test_variant_without_mods_is_spikgru():
    rng = np.random.default_rng(2)
    p = random_cell_params(rng, 5, 4)
    st = zero_state(4)
    a, b = st, st
    for _ in range(10):
        x = rng.integers(0, 2, 5).astype(float)
        a, sa = variant_step(a, x, p, ModSet())
        b, sb = spikgru_step(b, x, p)
        assert a.v.value.tobytes() == b.v.value.tobytes()
        assert sa.value.tobytes() == sb.value.tobytes()


def test_one_by_one_conv_equals_kron_dense():
    rng = np.random.default_rng(3)
    c, h, w = 2, 3, 4
    conv = {}
    for g in ("i", "z"):
        conv[f"{g}.W"] = rng.normal(size=(c, 1, 1, 1))
        conv[f"{g}.U"] = rng.normal(size=(c, c, 1, 1))
        conv[f"{g}.b"] = rng.normal(size=c)
    conv["alpha"] = rng.uniform(0.1, 0.9, size=(c, h, w))
    eye = np.eye(h * w)
    dense = {"alpha": conv["alpha"].ravel()}
    for g in ("i", "z"):
        dense[f"{g}.W"] = np.kron(conv[f"{g}.W"][:, :, 0, 0], eye)
        dense[f"{g}.U"] = np.kron(conv[f"{g}.U"][:, :, 0, 0], eye)
        dense[f"{g}.b"] = np.repeat(conv[f"{g}.b"], h * w)
    sc = CellState(*(np.zeros((c, h, w)),) * 3)
    sd = zero_state(c * h * w)
    for _ in range(8):
        x = (rng.random((1, h, w)) < 0.5).astype(float)
        sc, _ = variant_step(sc, x, conv, ModSet(mod3=True))
        sd, _ = variant_step(sd, x.ravel(), dense, ModSet())
        assert np.max(np.abs(sc.v.value.ravel() - sd.v.value)) < 1e-12


def test_conv_cell_equals_dense_cell_with_conv_matrices():
    rng = np.random.default_rng(4)
    c, h, w = 2, 4, 4
    mods_conv = ModSet(mod1=True, mod2=True, mod3=True)
    conv = {}
    for g in ("r", "i", "z"):
        src = c if g == "z" else 1
        conv[f"{g}.W"] = rng.normal(size=(c, src, 3, 3))
        conv[f"{g}.U"] = rng.normal(size=(c, c, 3, 3))
        conv[f"{g}.b"] = rng.normal(size=c)
    dense = {}
    for g in ("r", "i", "z"):
        src = c if g == "z" else 1
        dense[f"{g}.W"] = conv_as_matrix(conv[f"{g}.W"], (src, h, w))
        dense[f"{g}.U"] = conv_as_matrix(conv[f"{g}.U"], (c, h, w))
        dense[f"{g}.b"] = np.repeat(conv[f"{g}.b"], h * w)
    sc = CellState(*(np.zeros((c, h, w)),) * 3)
    sd = zero_state(c * h * w)
    for _ in range(8):
        x = (rng.random((1, h, w)) < 0.4).astype(float)
        sc, _ = variant_step(sc, x, conv, mods_conv)
        sd, _ = variant_step(sd, x.ravel(), dense, ModSet(mod1=True, mod2=True))
        assert np.max(np.abs(sc.v.value.ravel() - sd.v.value)) < 1e-12


def test_mod3_mismatch_is_config_error():
    rng = np.random.default_rng(5)
    p = random_cell_params(rng, 4, 3)
    with pytest.raises(ConfigError):
        variant_step(zero_state(3), np.zeros(4), p, ModSet(mod3=True))


def test_gru_step_formula():
    rng = np.random.default_rng(6)
    p = random_cell_params(rng, 3, 2, gates=("z", "r", "h"), decays=())
    x, h = rng.normal(size=3), rng.normal(size=2)
    z = sigmoid(p["z.W"] @ x + p["z.U"] @ h + p["z.b"])
    r = sigmoid(p["r.W"] @ x + p["r.U"] @ h + p["r.b"])
    ht = np.tanh(p["h.W"] @ x + p["h.U"] @ (r * h) + p["h.b"])
    assert np.allclose(gru_step(h, x, p).value, z * h + (1 - z) * ht, atol=1e-14)


def test_readout_integrates():
    p = {"alpha": np.array(0.5), "W": np.ones((1, 1)), "b": np.zeros(1)}
    out, seen = np.zeros(1), []
    for _ in range(3):
        out = readout_step(out, np.ones(1), p)
        seen.append(float(out.value[0]))
    assert seen == [1.0, 1.5, 1.75]


def test_detach_reset_changes_only_gradients():
    rng = np.random.default_rng(7)
    p = random_cell_params(rng, 3, 3, scale=2.0)
    xs = rng.integers(0, 2, (6, 3)).astype(float)

    def run(detach):
        tape = Tape()
        leaves = {k: tape.leaf(v) for k, v in p.items()}
        cfg = StepConfig(SurrogateSpec("arctan"), detach_reset=detach)
        st, total = zero_state(3), 0.0
        for x in xs:
            st, s = spikgru_step(st, x, leaves, cfg)
            total = total + ad.vsum(st.v)
        return total.value, tape.backward(total)[leaves["i.W"]]

    (fa, ga), (fb, gb) = run(False), run(True)
    assert fa == fb
    assert not np.allclose(ga, gb)


def test_network_forward_shapes_and_zero_input_silence():
    layer = LayerSpec("variant", (1, 4, 4), (2, 4, 4), ModSet.from_ids([1, 2, 3, 4]))
    net = Network([layer], 3, StepConfig(SurrogateSpec("arctan"))).init_params(0)
    x = np.zeros((5, 7, 1, 4, 4))
    traj, spikes = net.forward(Tape(grad_enabled=False), x)
    assert traj.shape == (7, 5, 3)
    assert spikes[0].shape == (5, 7, 32) and spikes[0].sum() == 0
    assert np.isclose(float(sigmoid(net.params["l0.z.b"][0])), 0.9)
    single, sp = unroll(net, x[0])
    assert np.array_equal(single, traj.value[:, 0]) and sp[0].shape == (7, 32)
    with pytest.raises(ShapeError):
        unroll(net, np.zeros((0, 1, 4, 4)))


def test_network_init_is_seeded():
    layer = LayerSpec("spikgru", (6,), (4,))
    a = Network([layer], 2).init_params(3).params
    b = Network([layer], 2).init_params(3).params
    c = Network([layer], 2).init_params(4).params
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)
    assert np.allclose(a["l0.decay.alpha"], logit(0.9))
    assert np.abs(a["l0.i.W"]).max() <= np.sqrt(3.0 / 6)


def test_layer_spec_validation():
    with pytest.raises(ConfigError):
        LayerSpec("variant", (1, 4, 4), (2, 5, 5), ModSet(mod3=True))
    with pytest.raises(ConfigError):
        LayerSpec("lstm", (3,), (3,))


def _lif_params(**kw):
    p = {"alpha": np.zeros(1), "beta": np.zeros(1), "i.W": np.zeros((1, 1)), "i.U": np.zeros((1, 1)), "i.b": np.zeros(1)}
    p.update({k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in kw.items()})
    return p


def test_cuba_lif_zero_and_decay_examples():
    st, s = cuba_lif_step(zero_state(1), np.zeros(1), _lif_params())
    assert (st.i.value, st.v.value, s.value) == (0.0, 0.0, 0.0)
    prev = CellState(np.ones(1), np.ones(1), np.zeros(1))
    st, s = cuba_lif_step(prev, np.zeros(1), _lif_params(alpha=0.5, beta=0.5))
    assert (st.i.value, st.v.value, s.value) == (0.5, 0.75, 0.0)


def test_gru_examples():
    zero = {f"{g}.{r}": np.zeros((2, 2)) for g in "zrh" for r in "WU"} | {f"{g}.b": np.zeros(2) for g in "zrh"}
    h = np.array([1.0, -2.0])
    assert np.array_equal(gru_step(h, np.ones(2), zero).value, 0.5 * h)
    big = dict(zero, **{"h.b": np.full(2, 3.0)})
    assert np.allclose(gru_step(np.zeros(2), np.zeros(2), big).value, 0.5 * np.tanh(3.0))
    carry = dict(zero, **{"z.b": np.full(2, 40.0)})
    assert np.allclose(gru_step(h, np.ones(2), carry).value, h)


def test_spikgru_examples():
    zero = {"alpha": np.zeros(1)} | {f"{g}.{r}": np.zeros((1, 1)) for g in "iz" for r in "WU"}
    zero |= {"i.b": np.zeros(1), "z.b": np.zeros(1)}
    st, s = spikgru_step(zero_state(1), np.zeros(1), zero)
    assert (st.v.value, s.value) == (0.0, 0.0)
    drive = dict(zero, **{"i.b": np.array([2.0]), "z.b": np.array([-50.0])})
    st, s = spikgru_step(zero_state(1), np.zeros(1), drive)
    assert np.isclose(st.v.value, 2.0) and s.value == 1.0


def test_frozen_r_gate_equals_constant_decay():
    rng = np.random.default_rng(8)
    p = random_cell_params(rng, 4, 3, gates=("i", "z"), decays=())
    b_r = rng.normal(size=3)
    gated = dict(p, **{"r.W": np.zeros((3, 4)), "r.U": np.zeros((3, 3)), "r.b": b_r})
    plain = dict(p, alpha=sigmoid(b_r))
    a = b = zero_state(3)
    for _ in range(10):
        x = rng.integers(0, 2, 4).astype(float)
        a, sa = variant_step(a, x, gated, ModSet(mod1=True))
        b, sb = variant_step(b, x, plain, ModSet())
        assert a.v.value.tobytes() == b.v.value.tobytes() and sa.value.tobytes() == sb.value.tobytes()


def test_readout_limits():
    x = np.array([1.0, 2.0])
    w = np.array([[1.0, -1.0]])
    out = readout_step(np.array([5.0]), x, {"alpha": np.array(0.0), "W": w, "b": np.array([0.5])})
    assert out.value[0] == -0.5
    p = {"alpha": np.array(1.0), "W": np.zeros((1, 2)), "b": np.zeros(1)}
    assert readout_step(np.array([3.0]), x, p).value[0] == 3.0


def test_zero_input_zero_bias_network_is_silent():
    layer = LayerSpec("spikgru", (5,), (4,))
    net = Network([layer], 2).init_params(0)
    net.params = {k: (np.zeros_like(v) if k.endswith(".b") else v) for k, v in net.params.items()}
    traj, spikes = net.forward(Tape(grad_enabled=False), np.zeros((2, 6, 5)))
    assert not spikes[0].any() and not traj.value.any()
