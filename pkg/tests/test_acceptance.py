"""The ten acceptance criteria, each reported as one PASS/FAIL line at the end of the run.

Criteria 7, 8 and 10 train the shipped directional suite (8 arms x 3 seeds);
expect this module to take tens of minutes on one CPU.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from em3 import autodiff as ad
from em3.analysis import (behavioral_similarity, low_exposure_items, material_similarity, popular_items,
                          reference_content_space, train_exposure)
from em3.autodiff import Parameter, Tensor
from em3.cache import (LiveFeatures, OfflineFeatureCache, OnlineEmbeddingCache, build_offline_cache,
                       direct_embedder, fusion_fingerprint, load_generation)
from em3.checkpoint import load_checkpoint, save_checkpoint
from em3.cic import CicConfig, cic_loss, sample_negative_table
from em3.encoders import TEXT, VISUAL, ModalityToken, StubEncoder
from em3.exceptions import CorruptFileError
from em3.experiment import CONFIG_DIR, DataContext, ExperimentConfig, load_suite, run_experiment, run_suite
from em3.fqformer import FqFormerParams, fuse
from em3.metrics import auc
from em3.nn import Linear, LoraLinear
from em3.sequence import AttentionPoolParams
from em3.training import Trainer, TrainConfig

from conftest import TINY_BASE, make_small_model
from oracles import (attention_pool_direct, auc_pairwise, central_difference, cic_bruteforce, gradcheck,
                     relative_error)

SEEDS = range(10)
FD_STEP = 1e-5
FD_TOL = 1e-4
# central-difference round-off is about eps * |L| / h ~ 1e-11, so gradients that are exactly
# zero (e.g. the key bias under softmax shift invariance) need a denominator floor above that
FD_FLOOR = 1e-6
SUITE_DIR = CONFIG_DIR / "suites" / "directional"


# criterion 1: gradient integrity

def _op_cases():
    """(name, builder, input shapes, input kind) for every differentiable op."""
    take_idx = np.array([2, 0, 2, 1])
    along = np.array([[0, 2], [1, 1], [3, 0]])
    mask = np.array([[True, False, True, True], [True, True, True, False], [False, True, True, True]])
    return [
        ("add", ad.add, [(3, 4), (4,)], "normal"),
        ("sub", ad.sub, [(3, 1), (1, 4)], "normal"),
        ("mul", ad.mul, [(2, 3, 4), (3, 4)], "normal"),
        ("div", ad.div, [(3, 4), (3, 4)], "positive"),
        ("neg", ad.neg, [(3, 4)], "normal"),
        ("matmul", ad.matmul, [(3, 4), (4, 2)], "normal"),
        ("matmul_batched", ad.matmul, [(2, 3, 4), (2, 4, 5)], "normal"),
        ("matmul_vector", ad.matmul, [(4,), (4, 3)], "normal"),
        ("exp", ad.exp, [(3, 4)], "normal"),
        ("log", ad.log, [(3, 4)], "positive"),
        ("tanh", ad.tanh, [(3, 4)], "normal"),
        ("relu", ad.relu, [(3, 4)], "off_kink"),
        ("gelu", ad.gelu, [(3, 4)], "normal"),
        ("sigmoid", ad.sigmoid, [(3, 4)], "normal"),
        ("clip", lambda a: ad.clip(a, -0.5, 0.5), [(3, 4)], "off_kink"),
        ("sum", lambda a: ad.sum(a, axis=1), [(3, 4)], "normal"),
        ("mean", lambda a: ad.mean(a, axis=0, keepdims=True), [(3, 4)], "normal"),
        ("reshape", lambda a: ad.reshape(a, (4, 3)), [(3, 4)], "normal"),
        ("transpose", lambda a: ad.transpose(a, (1, 0, 2)), [(2, 3, 4)], "normal"),
        ("broadcast_to", lambda a: ad.broadcast_to(a, (2, 3, 4)), [(3, 1)], "normal"),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), [(3, 2), (3, 4)], "normal"),
        ("slice", lambda a: ad.slice(a, 1, 3, axis=1), [(3, 4)], "normal"),
        ("take", lambda a: ad.take(a, take_idx), [(3, 4)], "normal"),
        ("take_along_axis", lambda a: ad.take_along_axis(a, along, axis=1), [(3, 4)], "normal"),
        ("embedding_lookup", lambda t: ad.embedding_lookup(t, take_idx), [(3, 4)], "normal"),
        ("softmax", lambda a: ad.softmax(a, axis=1), [(3, 4)], "normal"),
        ("masked_softmax", lambda a: ad.softmax(a, axis=1, mask=mask), [(3, 4)], "normal"),
        ("logsumexp", lambda a: ad.logsumexp(a, axis=1), [(3, 4)], "normal"),
        ("layer_norm", lambda x, g, b: ad.layer_norm(x, g, b), [(3, 4), (4,), (4,)], "normal"),
        ("l2_normalize", lambda a: ad.l2_normalize(a, axis=1), [(3, 4)], "normal"),
        ("cosine_similarity", lambda a, b: ad.cosine_similarity(a, b, axis=1), [(3, 4), (3, 4)], "normal"),
    ]


def _inputs(rng, shapes, kind):
    out = []
    for s in shapes:
        if kind == "positive":
            a = rng.uniform(0.5, 2.0, s)
        else:
            a = rng.normal(size=s)
            if kind == "off_kink":
                # keep every coordinate well away from the non-differentiable points
                a = np.where(np.abs(a) < 0.1, 0.3, a)
                a = np.where(np.abs(np.abs(a) - 0.5) < 0.1, 0.3 * np.sign(a), a)
        out.append(a)
    return out


@pytest.mark.criterion(1, "gradient integrity (central differences, rel err < 1e-4, 10 seeds)")
class TestGradientIntegrity:
    @pytest.mark.parametrize("case", _op_cases(), ids=lambda c: c[0])
    def test_every_op(self, case):
        name, build, shapes, kind = case
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            arrays = _inputs(rng, shapes, kind)
            params = [Parameter(a) for a in arrays]
            out = build(*params)
            weight = rng.normal(size=out.shape)
            ad.sum(out * weight).backward()

            def f():
                with ad.no_grad():
                    return float(np.sum(build(*[Tensor(a) for a in arrays]).data * weight))

            for a, p in zip(arrays, params):
                for idx in np.ndindex(a.shape):
                    num = central_difference(f, a, idx, FD_STEP)
                    err = relative_error(p.grad[idx], num)
                    assert err < FD_TOL, (name, seed, idx, p.grad[idx], num)

    @staticmethod
    def _end_to_end_failures(model, ds, features, seed, per_tensor=8, prefixes=("",)):
        rng = np.random.default_rng(seed)
        rows = rng.choice(len(ds.train), size=4, replace=False)
        batch = ds.train.batch(rows, n_active=12)

        def loss_value():
            with ad.no_grad():
                return model.loss(batch, features, np.random.default_rng(seed)).loss.item()

        model.zero_grad()
        model.loss(batch, features, np.random.default_rng(seed)).loss.backward()
        arrays, grads = {}, {}
        for name, p in model.named_parameters():
            if p.frozen or not name.startswith(prefixes):
                continue
            arrays[name], grads[name] = p.data, p.grad
        fails = gradcheck(loss_value, arrays, grads, rng, per_tensor=per_tensor, h=FD_STEP, tol=FD_TOL,
                          floor=FD_FLOOR)
        # table rows outside the batch have a zero gradient in both senses; probe the rows in use
        used = {"ranking.user_emb": batch.user, "ranking.item_emb": batch.item,
                "ranking.category_emb": batch.category}
        for name, ids in used.items():
            if name not in arrays:
                continue
            for i in np.unique(ids):
                for j in range(arrays[name].shape[1]):
                    num = central_difference(loss_value, arrays[name], (i, j), FD_STEP)
                    err = relative_error(grads[name][i, j], num, FD_FLOOR)
                    if err >= FD_TOL:
                        fails.append((name, (i, j), grads[name][i, j], num, err))
        return fails

    @pytest.mark.parametrize("seed", SEEDS)
    def test_end_to_end_loss(self, seed, tiny_ds, tiny_features):
        model = make_small_model(tiny_ds, seed=seed, n_queries=2, n_layers=1, n_heads=2, d=8)
        assert model.config.alpha > 0
        assert not self._end_to_end_failures(model, tiny_ds, tiny_features, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_end_to_end_loss_with_lora(self, seed, tiny_ds, tiny_features):
        model = make_small_model(tiny_ds, seed=seed, n_queries=2, n_layers=1, n_heads=2, d=8)
        model.attach_lora()
        for _, p in model.named_parameters():
            if p.frozen:
                continue
            if p.data.ndim == 2 and not p.data.any():
                # zero-initialised adapter halves: give them a value so both factors are exercised
                p.data[...] = np.random.default_rng(seed).normal(scale=0.1, size=p.shape)
        # finite differences see through sg(Wx), the analytic gradient by definition does not, so
        # only parameters with no stop-gradient between them and the loss are comparable here
        clean = ("ranking.", "cic_proj.", "pool.cand_proj.lora_", "pool.seq_proj.lora_")
        assert not self._end_to_end_failures(model, tiny_ds, tiny_features, seed, prefixes=clean)


# criterion 2: FQ-Former fixed length and permutation invariance

@pytest.mark.criterion(2, "FQ-Former output is Q x d and permutation invariant for all (M,K) in {0..3}^2")
class TestFqFormerGrid:
    @pytest.mark.parametrize("m,k", list(itertools.product(range(4), range(4))))
    def test_cell(self, m, k):
        rng = np.random.default_rng(10 * m + k)
        params = FqFormerParams(8, 2, 1, 2, rng)
        toks = ([ModalityToken(VISUAL, Tensor(rng.normal(size=8))) for _ in range(m)]
                + [ModalityToken(TEXT, Tensor(rng.normal(size=8))) for _ in range(k)])
        ref = fuse(toks, params).tokens.data
        assert ref.shape == (2, 8)
        for perm in itertools.permutations(range(m + k)):
            out = fuse([toks[i] for i in perm], params).tokens.data
            assert out.shape == (2, 8)
            assert out.tobytes() == ref.tobytes(), perm


# criterion 3: stop-gradient and LoRA contracts

@pytest.mark.criterion(3, "LoRA: frozen weights get bitwise-zero grads, switch is output-continuous, 2rd trainables")
class TestLoraContracts:
    def test_frozen_base_gradients_are_zero(self, tiny_ds, tiny_features):
        model = make_small_model(tiny_ds, seed=4)
        model.attach_lora()
        wrapped = [n for n, mod in model.named_modules() if isinstance(mod, LoraLinear)]
        assert len(wrapped) == len(model.config.lora_targets)
        for name, mod in model.named_modules():
            if isinstance(mod, LoraLinear):
                mod.lora_b.data[...] = np.random.default_rng(1).normal(size=mod.lora_b.shape)
        batch = tiny_ds.train.batch(np.arange(16), n_active=12)
        model.zero_grad()
        model.loss(batch, tiny_features, np.random.default_rng(0)).loss.backward()
        for name, mod in model.named_modules():
            if isinstance(mod, LoraLinear):
                for p in (mod.base.weight, mod.base.bias):
                    if p is None:
                        continue
                    assert p.frozen
                    assert p.grad is not None and p.grad.tobytes() == np.zeros_like(p.data).tobytes(), name
                assert np.any(mod.lora_a.grad != 0) and np.any(mod.lora_b.grad != 0), name

    def test_switch_is_bitwise_continuous(self, tiny_ds, tiny_features):
        model = make_small_model(tiny_ds, seed=5)
        Trainer(model, tiny_features, TrainConfig(batch_size=64, epochs=1, n_warm=6, n_long=12,
                                                  lora_switch=None, seed=5)).fit(tiny_ds.train)
        batch = tiny_ds.test.batch(np.arange(64), n_active=12)
        before = model.predict_batch(batch, tiny_features)
        model.attach_lora()
        after = model.predict_batch(batch, tiny_features)
        assert before.tobytes() == after.tobytes()

    @pytest.mark.parametrize("d,r", [(8, 1), (8, 2), (16, 4), (32, 4), (64, 8)])
    def test_trainable_count(self, d, r):
        layer = LoraLinear(Linear(d, d, np.random.default_rng(0)), r, np.random.default_rng(1))
        assert sum(p.size for _, p in layer.trainable_parameters()) == 2 * r * d

    def test_model_square_targets(self, tiny_ds):
        model = make_small_model(tiny_ds)
        model.attach_lora()
        r = model.config.lora_rank
        for name, mod in model.named_modules():
            if isinstance(mod, LoraLinear) and mod.base.weight.shape[0] == mod.base.weight.shape[1]:
                d = mod.base.weight.shape[0]
                assert sum(p.size for _, p in mod.trainable_parameters()) == 2 * r * d, name


# criterion 4: CIC oracle

@pytest.mark.criterion(4, "CIC matches extended-precision enumeration within 1e-10; H=0 gives 0; B=2 closed form")
class TestCicOracle:
    @pytest.mark.parametrize("seed", range(20))
    def test_b4_h2(self, seed):
        rng = np.random.default_rng(seed)
        c, i = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        tau = float(rng.uniform(0.05, 2.0))
        negs = sample_negative_table(4, 2, rng)
        got = cic_loss(Tensor(c), Tensor(i), CicConfig(tau=tau), negs)
        ref = cic_bruteforce(c, i, *negs, tau)
        for g, r in zip(got, ref):
            assert abs(g.item() - float(r)) < 1e-10

    def test_h0_is_exactly_zero(self):
        rng = np.random.default_rng(0)
        negs = sample_negative_table(4, 0, rng)
        got = cic_loss(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 3))), CicConfig(), negs)
        assert [g.item() for g in got] == [0.0, 0.0, 0.0]

    def test_b2_closed_form(self):
        c = np.array([[1.0, 0.0], [0.0, 1.0]])
        negs = (np.array([[1], [0]]), np.array([[1], [0]]))
        c2i, i2c, _ = cic_loss(Tensor(c), Tensor(c), CicConfig(tau=1.0), negs)
        expect = np.log1p(np.exp(-1.0))
        assert abs(c2i.item() - 0.31326) < 1e-5 and abs(i2c.item() - 0.31326) < 1e-5
        assert abs(c2i.item() - expect) < 1e-10


# criterion 5: attention pool oracle

@pytest.mark.criterion(5, "attention pool matches direct oracle within 1e-10; convex hull and normalisation hold")
class TestPoolOracle:
    @staticmethod
    def _case(seed, b, n, d=6):
        rng = np.random.default_rng(seed)
        params = AttentionPoolParams(d, rng)
        cand, seq = rng.normal(size=(b, d)), rng.normal(size=(b, n, d))
        mask = rng.random((b, n)) < 0.7
        mask[np.arange(b), rng.integers(0, n, size=b)] = True
        return params, cand, seq, mask

    @pytest.mark.parametrize("seed", range(20))
    def test_oracle(self, seed):
        params, cand, seq, mask = self._case(seed, 3, 7)
        u, w = params.pool(Tensor(cand), Tensor(seq), mask)
        u_ref, w_ref = attention_pool_direct(cand, seq, params.cand_proj.weight.data,
                                             params.seq_proj.weight.data, mask)
        assert np.max(np.abs(u.data - u_ref.astype(np.float64))) < 1e-10
        assert np.max(np.abs(w.data - w_ref.astype(np.float64))) < 1e-10

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 9))
    def test_invariants(self, seed, b, n):
        params, cand, seq, mask = self._case(seed, b, n)
        u, w = params.pool(Tensor(cand), Tensor(seq), mask)
        assert np.all(np.abs(w.data.sum(axis=1) - 1.0) < 1e-12)
        assert np.all(w.data >= 0) and np.all(w.data[~mask] == 0)
        lo = np.where(mask[..., None], seq, np.inf).min(axis=1)
        hi = np.where(mask[..., None], seq, -np.inf).max(axis=1)
        assert np.all(u.data >= lo - 1e-12) and np.all(u.data <= hi + 1e-12)


# criterion 6: AUC

@pytest.mark.criterion(6, "AUC matches the pairwise oracle within 1e-12 on 100 instances; monotone invariance")
class TestAuc:
    def test_oracle_100_instances(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 300))
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [0, 1]
            # coarse grid forces plenty of ties
            scores = rng.integers(0, max(2, n // 4), size=n) / 7.0 if seed % 2 else rng.normal(size=n)
            assert abs(auc(scores, labels) - auc_pairwise(scores, labels)) < 1e-12

    def test_monotone_invariance(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            scores = rng.integers(-50, 50, size=200) / 10.0
            labels = rng.integers(0, 2, size=200)
            base = auc(scores, labels)
            for f in (np.exp, lambda s: 3.0 * s - 1.0, lambda s: s ** 3, np.arctan):
                assert auc(f(scores), labels) == base


# criterion 9: caches

@pytest.fixture(scope="module")
def small_items(tiny_ds):
    return tiny_ds.raw_items()[:6]


@pytest.mark.criterion(9, "caches: training unchanged, lookup == direct fuse, no partial generation, files exact")
class TestCaches:
    def test_offline_cache_changes_no_training_bit(self, tiny_ds, tiny_features):
        live = LiveFeatures(tiny_ds.raw_items(), StubEncoder(0, tiny_ds.encoder_dims), 3, 3)
        runs = []
        for feats in (tiny_features, live):
            m = make_small_model(tiny_ds, seed=9)
            tr = Trainer(m, feats, TrainConfig(batch_size=64, epochs=2, n_warm=6, n_long=12, seed=9))
            h = tr.fit(tiny_ds.train)
            runs.append((h.loss, [p.data.tobytes() for _, p in m.named_parameters()]))
        assert live.calls > 0
        assert runs[0] == runs[1]

    def test_lookup_equals_direct_fuse_per_generation(self, tiny_ds, tiny_features):
        model = make_small_model(tiny_ds, seed=2)
        cache = OnlineEmbeddingCache()
        for gen in (1, 2, 3):
            embed = direct_embedder(model, tiny_features)
            cache.refresh(fusion_fingerprint(list(model.content_parameters())), embed, range(tiny_ds.n_items))
            for i in range(tiny_ds.n_items):
                e = cache.lookup(i)
                assert e.generation == gen
                assert e.embedding.tobytes() == model.embed_item(i, tiny_features).tobytes()
            model.fusion.queries.data = model.fusion.queries.data * 1.5 + 0.1

    def test_interrupted_refresh_never_visible(self, tiny_ds, tiny_features):
        model = make_small_model(tiny_ds, seed=3)
        cache = OnlineEmbeddingCache()
        embed = direct_embedder(model, tiny_features)
        cache.refresh(b"0" * 32, embed, range(tiny_ds.n_items))
        snapshot = {k: v.tobytes() for k, v in cache.current.embeddings.items()}
        model.fusion.queries.data = model.fusion.queries.data + 1.0
        job = cache.begin_refresh(b"1" * 32, direct_embedder(model, tiny_features), range(tiny_ds.n_items))
        for _ in range(tiny_ds.n_items - 1):
            job.step(1)
            assert cache.generation == 1
            assert {k: v.tobytes() for k, v in cache.current.embeddings.items()} == snapshot

        def dying(item):
            if int(item) == 7:
                raise RuntimeError("refresh worker lost")
            return embed(item)

        with pytest.raises(RuntimeError):
            cache.refresh(b"2" * 32, dying, range(tiny_ds.n_items))
        assert cache.generation == 1
        assert {k: v.tobytes() for k, v in cache.current.embeddings.items()} == snapshot

    @staticmethod
    def _every_byte_flip_detected(path, loader):
        blob = path.read_bytes()
        bad = path.with_name(path.name + ".bad")
        for offset in range(len(blob)):
            mutated = bytearray(blob)
            mutated[offset] ^= 0xFF
            bad.write_bytes(bytes(mutated))
            with pytest.raises(CorruptFileError):
                loader(bad)

    def test_offline_file_round_trip_and_corruption(self, tiny_ds, small_items, tmp_path):
        enc = StubEncoder(0, tiny_ds.encoder_dims)
        cache = build_offline_cache(small_items, enc, 3, 3)
        a, b = tmp_path / "off.bin", tmp_path / "off2.bin"
        cache.save(a)
        OfflineFeatureCache.load(a).save(b)
        assert a.read_bytes() == b.read_bytes()
        self._every_byte_flip_detected(a, OfflineFeatureCache.load)

    def test_online_file_round_trip_and_corruption(self, tmp_path):
        rng = np.random.default_rng(0)
        vecs = {i: rng.normal(size=8) for i in range(12)}
        cache = OnlineEmbeddingCache()
        cache.refresh(b"f" * 32, lambda i: vecs[i], range(12))
        a, b = tmp_path / "emb.bin", tmp_path / "emb2.bin"
        cache.save(a)
        OnlineEmbeddingCache.load(a).save(b)
        assert a.read_bytes() == b.read_bytes()
        gen = load_generation(a)
        assert all(gen.embeddings[str(i)].tobytes() == v.tobytes() for i, v in vecs.items())
        self._every_byte_flip_detected(a, load_generation)

    def test_checkpoint_round_trip_and_corruption(self, tiny_ds, tmp_path):
        model = make_small_model(tiny_ds, d=4, n_heads=1, cic_dim=4, hidden=(4,))
        a, b = tmp_path / "m.ckpt", tmp_path / "m2.ckpt"
        save_checkpoint(a, model, meta={"k": 1})
        ck = load_checkpoint(a)
        save_checkpoint(b, ck.model, meta=ck.meta)
        assert a.read_bytes() == b.read_bytes()
        self._every_byte_flip_detected(a, load_checkpoint)


# criteria 7, 8, 10: the shipped directional suite

@pytest.fixture(scope="module")
def suite():
    spec = load_suite(SUITE_DIR)
    result = run_suite(SUITE_DIR)
    for name, s in result.summary().items():
        print(f"{name}: mean={s['mean']:.4f} min={s['min']:.4f} max={s['max']:.4f} auc={s['auc']}")
    return spec, result


@pytest.mark.slow
@pytest.mark.criterion(7, "directional orderings of seed-mean test AUC on the shipped config (>= 3 seeds)")
def test_directional_orderings(suite):
    spec, result = suite
    assert len(spec["seeds"]) >= 3
    ctx_ds = result.runs["em3"][0].report.config
    assert ctx_ds["dataset"] is None and ctx_ds["data"] == spec["base"]["data"]
    for runs in result.runs.values():
        assert all(r.report.status == "ok" for r in runs)
    names = {c.name for c in result.checks}
    assert names == {"em3_beats_id_baseline", "cic_helps", "item_and_user_features", "long_sequence_lora",
                     "e2e_over_task_specific_pe", "task_specific_pe_over_pe", "pe_over_baseline"}
    for c in result.checks:
        print(c.line())
    failed = [c.line() for c in result.checks if not c.passed]
    assert not failed, failed


def _suite_dataset(result):
    cfg = ExperimentConfig.from_dict(result.runs["em3"][0].report.config)
    return DataContext.for_config(cfg)


@pytest.mark.slow
@pytest.mark.criterion(8, "similarity analyses: CIC material >= baseline, E2E behavioural >= frozen content")
def test_similarity_directions(suite):
    _, result = suite
    ctx = _suite_dataset(result)
    ds = ctx.dataset
    pool = np.flatnonzero(train_exposure(ds) > 0)
    reference = reference_content_space(ctx.features)
    tail, head = low_exposure_items(ds), popular_items(ds)
    seeds = len(result.runs["em3"])
    assert seeds >= 3
    mat_cic, mat_base, beh_e2e, beh_pe = [], [], [], []
    for s in range(seeds):
        em3, base, pe = result.runs["em3"][s].model, result.runs["baseline"][s].model, result.runs["pe"][s].model
        mat_cic.append(material_similarity(em3.ranking.item_emb.data, reference, tail, 3, pool))
        mat_base.append(material_similarity(base.ranking.item_emb.data, reference, tail, 3, pool))
        behavioural_ref = base.ranking.item_emb.data
        beh_e2e.append(behavioral_similarity(em3.all_content(ctx.features), behavioural_ref, head, 3, pool))
        beh_pe.append(behavioral_similarity(pe.frozen_content, behavioural_ref, head, 3, pool))
    print(f"material: cic={np.mean(mat_cic):.4f} {mat_cic} baseline={np.mean(mat_base):.4f} {mat_base}")
    print(f"behavioural: e2e={np.mean(beh_e2e):.4f} {beh_e2e} frozen={np.mean(beh_pe):.4f} {beh_pe}")
    assert np.mean(mat_cic) >= np.mean(mat_base)
    assert np.mean(beh_e2e) >= np.mean(beh_pe)


# criterion 10: determinism

@pytest.mark.criterion(10, "identical config and seed reproduce loss curves and AUC bitwise")
class TestDeterminism:
    @pytest.mark.parametrize("regime", ["e2e", "pe", "task_specific_pe"])
    def test_small_runs(self, regime):
        cfg = ExperimentConfig.from_dict(dict(TINY_BASE, regime=regime))
        a, b = run_experiment(cfg).report, run_experiment(cfg).report
        assert a.losses == b.losses and a.cic_losses == b.cic_losses and a.stage_losses == b.stage_losses
        assert a.auc == b.auc

    @pytest.mark.slow
    def test_shipped_config_rerun(self, suite):
        _, result = suite
        first = result.runs["em3"][0].report
        again = run_experiment(ExperimentConfig.from_dict(first.config)).report
        assert np.asarray(again.losses).tobytes() == np.asarray(first.losses).tobytes()
        assert again.auc == first.auc
