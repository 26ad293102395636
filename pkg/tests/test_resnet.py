import numpy as np
import pytest

from slotnet.heslots import SimConfig, SlotEngine
from slotnet.resnet import (
    BLOCK,
    GRID,
    ReluEvaluator,
    Runner,
    SoftmaxEvaluator,
    avg_pool,
    batch_norm,
    conv_siso,
    fold_bn,
    fully_connected,
    infer_float,
    load_cifar10,
    load_text_image,
    load_weights,
    pack_image,
    random_weights,
    resnet20,
    save_text_image,
    save_weights,
    softmax,
    tempered_softmax,
    unpack,
    valid_mask,
)

CFG = SimConfig(n_slots=2048, sparse_block=1024)


def naive_conv(w, x, stride):
    """Independent nested-loop convolution oracle (zero padding)."""
    o_ch, i_ch, k, _ = w.shape
    _, h, _ = x.shape
    pad = (k - 1) // 2
    side = h // stride
    out = np.zeros((o_ch, side, side))
    for o in range(o_ch):
        for r in range(side):
            for c in range(side):
                acc = 0.0
                for i in range(i_ch):
                    for dy in range(k):
                        for dx in range(k):
                            rr = r * stride + dy - pad
                            cc = c * stride + dx - pad
                            if 0 <= rr < h and 0 <= cc < h:
                                acc += w[o, i, dy, dx] * x[i, rr, cc]
                out[o, r, c] = acc
    return out


class TestPacking:
    def test_round_trip(self, rng):
        e = SlotEngine(CFG)
        img = rng.standard_normal((3, GRID, GRID))
        cts = pack_image(e, img)
        for c in range(3):
            assert np.array_equal(unpack(e, cts[c], 1), img[c])

    def test_constant_image(self):
        e = SlotEngine(CFG)
        cts = pack_image(e, np.full((3, GRID, GRID), 2.5))
        assert np.all(cts[0].block() == 2.5)

    def test_index_formula(self, rng):
        e = SlotEngine(CFG)
        img = rng.standard_normal((3, GRID, GRID))
        cts = pack_image(e, img)
        block = cts[1].block()
        for r, c in ((0, 0), (3, 17), (31, 31), (12, 5)):
            assert block[r * GRID + c] == img[1, r, c]

    def test_hwc_accepted(self, rng):
        e = SlotEngine(CFG)
        img = rng.standard_normal((GRID, GRID, 3))
        cts = pack_image(e, img)
        assert np.array_equal(unpack(e, cts[0], 1), img[:, :, 0])

    def test_shape_rejected(self, rng):
        e = SlotEngine(CFG)
        with pytest.raises(ValueError):
            pack_image(e, rng.standard_normal((3, 16, 16)))


class TestConv:
    @pytest.mark.parametrize("i_ch,o_ch,k,stride,layout", [
        (3, 4, 3, 1, 1),     # stem shape (narrowed)
        (4, 4, 3, 1, 1),
        (4, 6, 3, 2, 1),     # first downsample
        (4, 6, 1, 2, 1),     # projection shortcut
        (6, 6, 3, 1, 2),     # inner layer at stride-2 layout
        (6, 8, 3, 2, 2),     # second downsample
        (8, 8, 3, 1, 4),     # deepest layout
    ])
    def test_against_nested_loop_oracle(self, rng, i_ch, o_ch, k, stride, layout):
        e = SlotEngine(CFG)
        side = GRID // layout
        x = rng.standard_normal((i_ch, side, side))
        w = rng.standard_normal((o_ch, i_ch, k, k))
        cts = []
        for i in range(i_ch):
            block = np.zeros((GRID, GRID))
            block[::layout, ::layout] = x[i]
            cts.append(e.pack(block.reshape(-1)))
        out = conv_siso(e, cts, w, stride, layout)
        want = naive_conv(w, x, stride)
        for o in range(o_ch):
            got = unpack(e, out[o], layout * stride)
            scale = max(1.0, float(np.max(np.abs(want[o]))))
            assert np.max(np.abs(got - want[o])) / scale <= 1e-6

    def test_identity_1x1(self, rng):
        e = SlotEngine(CFG)
        block = rng.standard_normal(BLOCK)
        ct = e.pack(block)
        out = conv_siso(e, [ct], np.ones((1, 1, 1, 1)), 1, 1)
        assert np.allclose(out[0].block(), block, atol=1e-12)
        assert out[0].level == ct.level - 1

    def test_zero_input(self):
        e = SlotEngine(CFG)
        out = conv_siso(e, [e.pack(np.zeros(BLOCK))], np.ones((2, 1, 3, 3)), 1, 1)
        assert all(np.all(o.slots == 0.0) for o in out)

    def test_stride2_same_rotations_as_stride1(self, rng):
        w = rng.standard_normal((4, 3, 3, 3))
        counts = []
        for stride in (1, 2):
            e = SlotEngine(CFG)
            cts = [e.pack(rng.standard_normal(BLOCK)) for _ in range(3)]
            conv_siso(e, cts, w, stride, 1)
            counts.append(e.counter.rotations)
        assert counts[0] == counts[1]

    def test_junk_lanes_pinned_to_zero(self, rng):
        e = SlotEngine(CFG)
        cts = [e.pack(rng.standard_normal(BLOCK))]
        out = conv_siso(e, cts, rng.standard_normal((1, 1, 3, 3)), 2, 1)
        lanes = out[0].block()[valid_mask(2) == 0.0]
        assert np.all(lanes == 0.0)

    def test_channel_count_mismatch(self, rng):
        e = SlotEngine(CFG)
        with pytest.raises(ValueError):
            conv_siso(e, [e.pack(np.zeros(BLOCK))], np.ones((1, 2, 3, 3)), 1, 1)

    def test_threads_match_serial(self, rng):
        w = rng.standard_normal((6, 3, 3, 3))
        blocks = [rng.standard_normal(BLOCK) for _ in range(3)]
        outs = []
        counters = []
        for threads in (1, 4):
            e = SlotEngine(CFG)
            cts = [e.pack(b) for b in blocks]
            out = conv_siso(e, cts, w, 1, 1, threads=threads)
            outs.append(np.stack([o.block() for o in out]))
            counters.append(e.counter.snapshot())
        assert np.array_equal(outs[0], outs[1])
        assert counters[0] == counters[1]


class TestBatchNorm:
    def test_identity_level_only(self, rng):
        e = SlotEngine(CFG)
        ct = e.pack(rng.standard_normal(BLOCK))
        out = batch_norm(e, ct, 1.0, 0.0)
        assert np.array_equal(out.slots, ct.slots)
        assert out.level == ct.level - 1

    def test_shift_only(self, rng):
        e = SlotEngine(CFG)
        block = rng.standard_normal(BLOCK)
        out = batch_norm(e, e.pack(block), 1.0, 3.25)
        assert np.allclose(out.block(), block + 3.25, atol=1e-12)

    def test_affine_oracle(self, rng):
        e = SlotEngine(CFG)
        block = rng.standard_normal(BLOCK)
        out = batch_norm(e, e.pack(block), -1.7, 0.4)
        assert np.allclose(out.block(), -1.7 * block + 0.4, atol=1e-12)

    def test_fold_formula(self, rng):
        gamma, beta = rng.uniform(0.5, 2, 8), rng.standard_normal(8)
        mean, var = rng.standard_normal(8), rng.uniform(0.2, 3, 8)
        scale, shift = fold_bn(gamma, beta, mean, var, eps=1e-5)
        x = rng.standard_normal(8)
        want = gamma * (x - mean) / np.sqrt(var + 1e-5) + beta
        assert np.max(np.abs((scale * x + shift) - want)) <= 1e-12

    def test_fold_rejects_bad_variance(self):
        with pytest.raises(ValueError):
            fold_bn([1.0], [0.0], [0.0], [0.0])


class TestRelu:
    def test_zero_slots(self, sign13):
        e = SlotEngine(CFG)
        ev = ReluEvaluator.from_composite(sign13)
        out = ev(e, e.pack(np.zeros(BLOCK)), 40.0)
        assert np.max(np.abs(out.slots)) <= 1e-12

    def test_exactly_two_bootstraps(self, sign13, rng):
        e = SlotEngine(CFG)
        ev = ReluEvaluator.from_composite(sign13)
        ev(e, e.pack(rng.uniform(-40, 40, BLOCK)), 40.0)
        assert e.counter.bootstraps == 2

    def test_random_slots_precision(self, sign13, rng):
        e = SlotEngine(CFG)
        ev = ReluEvaluator.from_composite(sign13)
        block = rng.uniform(-40, 40, BLOCK)
        out = ev(e, e.pack(block), 40.0)
        err = np.abs(out.block() - np.maximum(block, 0.0))
        assert err.max() <= 40.0 * 2.0**-13
        assert err.mean() <= 40.0 * 2.0**-16

    def test_range_warning(self, sign13):
        e = SlotEngine(CFG)
        ev = ReluEvaluator.from_composite(sign13)
        ev(e, e.pack(np.full(BLOCK, 55.0)), 40.0)
        assert any("relu-range" in w for w in e.warnings)

    def test_entry_need_enforced(self, sign13, rng):
        from slotnet.heslots import LevelUnderflowError

        e = SlotEngine(CFG)
        ev = ReluEvaluator.from_composite(sign13)
        low = e.mod_switch(e.pack(rng.uniform(-1, 1, BLOCK)), 2)
        with pytest.raises(LevelUnderflowError):
            ev(e, low, 40.0)


class TestPoolAndFc:
    def _packed(self, e, values):
        block = np.zeros((GRID, GRID))
        block[::4, ::4] = values
        return e.pack(block.reshape(-1))

    def test_constant_channel_pools_to_itself(self):
        e = SlotEngine(CFG)
        ct = self._packed(e, np.full((8, 8), 3.0))
        out = avg_pool(e, [ct])[0]
        assert abs(out.slots[0] - 3.0) <= 1e-12

    def test_pool_matches_mean(self, rng):
        e = SlotEngine(CFG)
        vals = rng.standard_normal((8, 8))
        out = avg_pool(e, [self._packed(e, vals)])[0]
        assert abs(out.slots[0] - vals.mean()) <= 1e-12

    def test_fc_identity_rows(self, rng):
        e = SlotEngine(CFG)
        means = rng.standard_normal(64)
        pooled = avg_pool(e, [self._packed(e, np.full((8, 8), m)) for m in means])
        w = np.zeros((10, 64))
        w[np.arange(10), np.arange(10)] = 1.0
        logits = fully_connected(e, pooled, w, np.zeros(10))
        assert np.allclose(logits.slots[:10], means[:10], atol=1e-9)

    def test_fc_dense_oracle(self, rng):
        e = SlotEngine(CFG)
        means = rng.standard_normal(64)
        pooled = avg_pool(e, [self._packed(e, np.full((8, 8), m)) for m in means])
        w = rng.standard_normal((10, 64))
        b = rng.standard_normal(10)
        logits = fully_connected(e, pooled, w, b)
        assert np.max(np.abs(logits.slots[:10] - (w @ means + b))) <= 1e-8

    def test_logit_placement(self, rng):
        e = SlotEngine(CFG)
        pooled = avg_pool(e, [self._packed(e, np.full((8, 8), float(i))) for i in range(64)])
        w = np.zeros((10, 64))
        w[3, 5] = 1.0
        logits = fully_connected(e, pooled, w, np.zeros(10))
        assert abs(logits.slots[3] - 5.0) <= 1e-9


class TestSoftmax:
    def _logits_ct(self, e, vals):
        block = np.zeros(BLOCK)
        block[:10] = vals
        return e.pack(block)

    def test_symmetric_inputs(self, sign13):
        e = SlotEngine(CFG)
        ev = SoftmaxEvaluator.build()
        out = softmax(e, self._logits_ct(e, np.zeros(10)), 40.0, ev)
        assert np.max(np.abs(out.slots[:10] - 0.1)) <= 1e-3

    def test_symmetric_negative(self):
        e = SlotEngine(CFG)
        ev = SoftmaxEvaluator.build()
        out = softmax(e, self._logits_ct(e, np.full(10, -40.0)), 40.0, ev)
        assert np.max(np.abs(out.slots[:10] - 0.1)) <= 1e-3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_dominant_logit_argmax(self):
        # (40, 0, ..., 0) pushes the exponential sum past the reciprocal
        # window; the argmax survives and the violation is recorded
        e = SlotEngine(CFG)
        ev = SoftmaxEvaluator.build()
        vals = np.zeros(10)
        vals[0] = 40.0
        out = softmax(e, self._logits_ct(e, vals), 40.0, ev)
        assert int(np.argmax(out.slots[:10])) == 0
        assert any("inverse-domain" in w for w in e.warnings)

    def test_dominant_logit_accuracy_inside_domain(self):
        e = SlotEngine(CFG)
        ev = SoftmaxEvaluator.build()
        vals = np.zeros(10)
        vals[0] = 30.0
        out = softmax(e, self._logits_ct(e, vals), 40.0, ev)
        probs = out.slots[:10]
        assert int(np.argmax(probs)) == 0
        assert np.max(np.abs(probs - tempered_softmax(vals))) <= 1e-2

    def test_random_component_error(self, rng):
        e = SlotEngine(CFG)
        ev = SoftmaxEvaluator.build()
        worst = 0.0
        for _ in range(20):
            vals = rng.uniform(-40, 40, 10)
            if np.sum(np.exp(vals / 4)) * 1e-4 >= 2.0:   # documented domain
                continue
            out = softmax(e, self._logits_ct(e, vals), 40.0, ev)
            worst = max(worst, float(np.max(np.abs(out.slots[:10] - tempered_softmax(vals)))))
        assert worst <= 1e-2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_domain_violation_warns(self):
        e = SlotEngine(CFG)
        ev = SoftmaxEvaluator.build()
        softmax(e, self._logits_ct(e, np.full(10, 40.0)), 40.0, ev)
        assert any("inverse-domain" in w for w in e.warnings)


class TestGraphAndWeights:
    def test_graph_matches_reference_shapes(self):
        g = resnet20()
        convs = {s.name: s for s in g.conv_layers()}
        assert len(convs) == 1 + 9 * 2 + 2          # stem + block convs + shortcuts
        assert convs["conv1"].in_ch == 3 and convs["conv1"].out_ch == 16
        assert convs["conv3_1_1"].stride == 2
        assert convs["conv3_1_s"].ksize == 1 and convs["conv3_1_s"].stride == 2
        assert convs["conv4_3_2"].out_ch == 64

    def test_random_weights_respect_bound(self, small_weights, rng):
        for _ in range(4):
            img = rng.uniform(-0.5, 0.5, (3, GRID, GRID))
            logits = infer_float(img, small_weights)
            assert np.max(np.abs(logits)) <= 40.0

    def test_manifest_round_trip(self, small_weights, tmp_path):
        manifest = save_weights(small_weights, tmp_path)
        back = load_weights(manifest)
        for name, w in small_weights.conv.items():
            assert np.allclose(back.conv[name], w, atol=1e-6)
        assert np.allclose(back.fc_w, small_weights.fc_w, atol=1e-6)

    def test_manifest_bn_raw_kind(self, tmp_path, rng):
        import json

        (tmp_path / "bn.bin").write_bytes(
            np.stack([
                rng.uniform(0.5, 2, 4), rng.standard_normal(4),
                rng.standard_normal(4), rng.uniform(0.5, 2, 4),
            ]).astype("<f4").tobytes()
        )
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({
            "format": "slotnet-weights-v1",
            "layers": {"bn1": {"file": "bn.bin", "shape": [4, 4], "kind": "bn"}},
        }))
        with pytest.raises(ValueError):
            load_weights(manifest)  # classifier blobs missing, bn parsed first

    def test_cifar_loader(self, tmp_path, rng):
        recs = []
        for label in (3, 7):
            body = rng.integers(0, 256, 3 * BLOCK, dtype=np.uint8)
            recs.append(bytes([label]) + body.tobytes())
        path = tmp_path / "batch.bin"
        path.write_bytes(b"".join(recs))
        out = load_cifar10(path)
        assert [lbl for lbl, _ in out] == [3, 7]
        assert out[0][1].shape == (3, GRID, GRID)
        assert np.max(out[0][1]) <= 1.0

    def test_cifar_loader_size_check(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"\x00" * 100)
        with pytest.raises(ValueError):
            load_cifar10(tmp_path / "bad.bin")

    def test_text_image_round_trip(self, tmp_path, rng):
        img = rng.standard_normal((3, GRID, GRID))
        save_text_image(img, tmp_path / "img.txt")
        back = load_text_image(tmp_path / "img.txt")
        assert np.array_equal(back, img)


class TestLayoutInduction:
    def test_valid_slots_after_downsampling(self, rng):
        # two stride-2 convolutions leave values exactly on the stride-4 set
        e = SlotEngine(CFG)
        cts = [e.pack(rng.uniform(1.0, 2.0, BLOCK))]
        w = np.full((1, 1, 3, 3), 1.0)
        out = conv_siso(e, cts, w, 2, 1)
        out = conv_siso(e, out, w, 2, 2)
        block = out[0].block()
        nz = np.nonzero(block)[0]
        mask = np.nonzero(valid_mask(4))[0]
        assert set(nz).issubset(set(mask))
        # positive-valued inputs with an all-ones kernel fill every valid slot
        assert set(mask) == set(nz)


class TestInference:
    def test_zero_weights_trivially_agree(self):
        g = resnet20()
        ws = random_weights(seed=3)
        for name in ws.conv:
            ws.conv[name] = np.zeros_like(ws.conv[name])
        for name in ws.bn:
            sc, sh = ws.bn[name]
            ws.bn[name] = (np.zeros_like(sc), np.zeros_like(sh))
        ws.fc_w = np.zeros_like(ws.fc_w)
        ws.fc_b = np.zeros_like(ws.fc_b)
        runner = Runner(ws, CFG, exact_nonlinear=True)
        rep = runner.infer(np.zeros((3, GRID, GRID)))
        assert rep.agreement
        assert np.allclose(rep.logits, 0.0)

    def test_exact_nonlinear_equals_float_oracle(self, small_weights, rng):
        img = rng.uniform(-0.5, 0.5, (3, GRID, GRID))
        runner = Runner(small_weights, CFG, exact_nonlinear=True)
        rep = runner.infer(img)
        ref = np.asarray(rep.float_logits)
        scale = max(1.0, float(np.max(np.abs(ref))))
        assert np.max(np.abs(np.asarray(rep.logits) - ref)) / scale <= 1e-9

    def test_full_path_agreement_and_counters(self, small_weights, rng):
        img = rng.uniform(-0.5, 0.5, (3, GRID, GRID))
        runner = Runner(small_weights, CFG)
        rep = runner.infer(img, seed=4)
        assert rep.agreement
        assert np.max(np.abs(np.asarray(rep.logits) - np.asarray(rep.float_logits))) <= 1e-2
        embedded = sum(v for k, v in rep.bootstrap_sites.items() if "embedded" in k)
        assert embedded == 2 * (16 * 7 + 32 * 6 + 64 * 6)
        assert rep.counters["bootstraps"] >= embedded
        assert all(0.0 <= p <= 1.0 for p in rep.softmax)

    def test_report_layer_maxes_bounded(self, small_weights, rng):
        img = rng.uniform(-0.5, 0.5, (3, GRID, GRID))
        rep = Runner(small_weights, CFG, exact_nonlinear=True).infer(img)
        assert 0 < max(rep.layer_max.values()) <= 40.0

    def test_threads_do_not_change_results(self, small_weights, rng):
        img = rng.uniform(-0.5, 0.5, (3, GRID, GRID))
        reps = [
            Runner(small_weights, CFG, threads=t).infer(img, seed=2)
            for t in (1, 4)
        ]
        assert reps[0].logits == reps[1].logits
        assert reps[0].counters == reps[1].counters

    def test_quantized_mode_close_to_exact(self, small_weights, rng):
        img = rng.uniform(-0.5, 0.5, (3, GRID, GRID))
        qcfg = SimConfig(n_slots=2048, sparse_block=1024, fidelity="quantized")
        rep_q = Runner(small_weights, qcfg).infer(img, seed=2)
        rep_e = Runner(small_weights, CFG).infer(img, seed=2)
        assert np.max(np.abs(np.asarray(rep_q.logits) - np.asarray(rep_e.logits))) <= 0.05
