import json

import numpy as np
import pytest

import cmr_orient.autodiff as ad
from cmr_orient.autodiff import Tensor
from cmr_orient.nets import (MultiTaskConfig, MultiTaskNet, SimpleCnn,
                             SimpleCnnConfig, bits_to_class_probs,
                             load_multitask, load_simple, predict_code,
                             save_model)


class TestSimpleCnn:
    def test_output_shape_softmax_head(self):
        m = SimpleCnn(SimpleCnnConfig(input_size=32, seed=0))
        x = Tensor(np.random.default_rng(0).random((2, 3, 32, 32)).astype(np.float32))
        assert m.forward(x).shape == (2, 8)
        p = m.class_probs(x)
        assert p.shape == (2, 8)
        assert np.abs(p.data.sum(axis=1) - 1.0).max() < 1e-5

    def test_output_shape_bits_head(self):
        m = SimpleCnn(SimpleCnnConfig(input_size=32, head="bits3", seed=0))
        x = Tensor(np.random.default_rng(1).random((3, 3, 32, 32)).astype(np.float32))
        assert m.forward(x).shape == (3, 3)
        p = m.class_probs(x)
        assert p.shape == (3, 8)
        assert np.abs(p.data.sum(axis=1) - 1.0).max() < 1e-5

    def test_rejects_wrong_input_shape(self):
        m = SimpleCnn(SimpleCnnConfig(input_size=32))
        with pytest.raises(ValueError):
            m.forward(Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))
        with pytest.raises(ValueError):
            m.forward(Tensor(np.zeros((3, 32, 32), dtype=np.float32)))

    def test_deterministic_init(self):
        a = SimpleCnn(SimpleCnnConfig(input_size=32, seed=5))
        b = SimpleCnn(SimpleCnnConfig(input_size=32, seed=5))
        for k in a.params():
            assert np.array_equal(a.params()[k].data, b.params()[k].data)

    def test_param_partition(self):
        m = SimpleCnn(SimpleCnnConfig(input_size=32))
        all_ids = {id(p) for p in m.param_list()}
        conv_ids = {id(p) for p in m.conv_params()}
        fc_ids = {id(p) for p in m.fc_params()}
        assert conv_ids | fc_ids == all_ids
        assert not (conv_ids & fc_ids)

    def test_set_trainable_prefix(self):
        m = SimpleCnn(SimpleCnnConfig(input_size=32))
        m.set_trainable(False)
        m.set_trainable(True, prefix="fc")
        for name, p in m.params().items():
            assert p.requires_grad == name.startswith("fc")


class TestBitsToClassProbs:
    def test_certain_bits_give_one_hot(self):
        # (b2, b1, b0) = (1, 0, 1) is code 101 -> class index 5.
        p = bits_to_class_probs(Tensor(np.array([[1.0, 0.0, 1.0]]))).data
        expect = np.zeros(8)
        expect[5] = 1.0
        assert np.abs(p[0] - expect).max() < 1e-6

    def test_uniform_bits_give_uniform_classes(self):
        p = bits_to_class_probs(Tensor(np.full((1, 3), 0.5))).data
        assert np.abs(p - 0.125).max() < 1e-6

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        p = bits_to_class_probs(Tensor(rng.random((6, 3)))).data
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-6

    def test_gradient_flows(self):
        b = Tensor(np.array([[0.3, 0.6, 0.2]]), requires_grad=True)
        ad.tensor_sum(ad.mul(bits_to_class_probs(b), bits_to_class_probs(b).detach())).backward()
        assert b.grad is not None and np.isfinite(b.grad).all()


@pytest.fixture(scope="module")
def net():
    return MultiTaskNet(MultiTaskConfig(input_size=64, seed=0))


class TestMultiTaskNet:

    def test_forward_shapes(self, net):
        x = Tensor(np.random.default_rng(3).random((2, 1, 64, 64)).astype(np.float32))
        y_hat, o_hat = net.forward(x)
        assert y_hat.shape == (2, 4, 64, 64)
        assert o_hat.shape == (2, 8)
        assert (y_hat.data >= 0).all() and (y_hat.data <= 1).all()
        assert np.abs(o_hat.data.sum(axis=1) - 1.0).max() < 1e-5

    def test_odd_input_size(self):
        net = MultiTaskNet(MultiTaskConfig(input_size=52, seed=0))
        x = Tensor(np.random.default_rng(4).random((1, 1, 52, 52)).astype(np.float32))
        y_hat, o_hat = net.forward(x)
        assert y_hat.shape == (1, 4, 52, 52)
        assert o_hat.shape == (1, 8)

    def test_param_partition(self, net):
        enc = set(net.encoder_params())
        dec = set(net.decoder_params())
        ori = set(net.orient_params())
        assert enc | dec | ori == set(net.params())
        assert not (enc & dec) and not (enc & ori) and not (dec & ori)

    def test_reinit_orient_only_touches_head(self, net):
        before = {k: p.data.copy() for k, p in net.params().items()}
        net.reinit_orient(seed=99)
        for k, p in net.params().items():
            if k in net.orient_params():
                continue
            assert np.array_equal(p.data, before[k]), k
        changed = any(not np.array_equal(net.params()[k].data, before[k])
                      for k in net.orient_params())
        assert changed

    def test_freeze_contract(self, net):
        for k in list(net.encoder_params()) + list(net.decoder_params()):
            net.params()[k].requires_grad = False
            net.params()[k].grad = None
        x = Tensor(np.random.default_rng(5).random((1, 1, 64, 64)).astype(np.float32))
        _, o_hat = net.forward(x)
        ad.tensor_sum(o_hat).backward()
        for k in list(net.encoder_params()) + list(net.decoder_params()):
            assert net.params()[k].grad is None, k
        assert any(net.params()[k].grad is not None for k in net.orient_params())
        net.set_trainable(True)


class TestPredictCode:
    def test_one_hot_index_5(self):
        v = np.zeros(8)
        v[5] = 1.0
        assert str(predict_code(v)) == "101"

    def test_uniform_ties_to_identity(self):
        assert str(predict_code(np.full(8, 0.125))) == "000"

    def test_each_index_maps_to_table_order(self):
        order = ["000", "001", "010", "011", "100", "101", "110", "111"]
        for i, code in enumerate(order):
            v = np.zeros(8)
            v[i] = 1.0
            assert str(predict_code(v)) == code

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            predict_code(np.zeros(7))

    def test_rejects_nan(self):
        v = np.zeros(8)
        v[0] = np.nan
        with pytest.raises(ValueError):
            predict_code(v)


class TestSaveLoad:
    def test_simple_round_trip(self, tmp_path):
        m = SimpleCnn(SimpleCnnConfig(input_size=32, seed=7))
        path = tmp_path / "simple.ckpt"
        save_model(m, path)
        card = json.loads((tmp_path / "simple.ckpt.json").read_text())
        assert card["kind"] == "simple"
        assert card["class_order"][5] == "101"
        m2 = load_simple(path)
        x = Tensor(np.random.default_rng(6).random((1, 3, 32, 32)).astype(np.float32))
        assert np.array_equal(m.forward(x).data, m2.forward(x).data)

    def test_multitask_round_trip(self, tmp_path):
        m = MultiTaskNet(MultiTaskConfig(input_size=32, seed=7))
        path = tmp_path / "mt.ckpt"
        save_model(m, path)
        m2 = load_multitask(path)
        x = Tensor(np.random.default_rng(7).random((1, 1, 32, 32)).astype(np.float32))
        ya, oa = m.forward(x)
        yb, ob = m2.forward(x)
        assert np.array_equal(ya.data, yb.data)
        assert np.array_equal(oa.data, ob.data)

    def test_kind_mismatch_rejected(self, tmp_path):
        m = SimpleCnn(SimpleCnnConfig(input_size=32))
        path = tmp_path / "simple.ckpt"
        save_model(m, path)
        with pytest.raises(ValueError):
            load_multitask(path)
