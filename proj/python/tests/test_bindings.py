import numpy as np
import pytest

import splatfield as sf


@pytest.fixture(scope="module")
def scene():
    return sf.synth(seed=3, size=16, m_dim=8, noise=0.05)


def test_version():
    assert sf.__version__ == "0.3.0"
    assert "SPSC v1" in sf.version_banner()


def test_synth_counts(scene):
    b = scene["bundle"]
    assert b.fine_count == 2 * 16 * 16
    assert b.coarse_count == 2 * 2 * 2
    assert b.validate() == []
    assert len(scene["cameras"]) == 2
    assert scene["rgb"][0].shape == (16, 16, 3)
    assert scene["redundant"].shape == (b.fine_count,)


def test_bundle_round_trip(scene, tmp_path):
    b = scene["bundle"]
    assert sf.Bundle.decode(b.encode()) == b
    path = tmp_path / "s.spsc"
    b.save(path)
    assert sf.Bundle.load(path) == b


def test_format_errors_carry_kind_and_offset(scene):
    data = scene["bundle"].encode()
    with pytest.raises(sf.FormatError) as info:
        sf.Bundle.decode(b"XXXX" + data[4:])
    assert info.value.kind == "bad_magic"
    assert info.value.offset == 0
    with pytest.raises(sf.FormatError) as info:
        sf.Bundle.decode(data[: len(data) // 2])
    assert info.value.kind == "truncated"
    assert isinstance(info.value, sf.Error)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(sf.IoError):
        sf.Bundle.load(tmp_path / "nope.spsc")


def test_render_shapes_and_range(scene):
    b = scene["bundle"]
    out = sf.render(b, scene["cameras"][0])
    assert out["rgb"].shape == (16, 16, 3)
    assert out["inst"].shape == (16, 16, 8)
    assert out["sem"].shape == (16, 16, 8)
    assert np.all((out["acc"] >= 0) & (out["acc"] <= 1))


def test_render_is_deterministic(scene):
    a = sf.render(scene["bundle"], scene["cameras"][1])
    b = sf.render(scene["bundle"], scene["cameras"][1])
    assert np.array_equal(a["rgb"], b["rgb"])


def test_gate_values():
    assert sf.gate(0.7) == 0.7
    assert sf.gate(0.3) == pytest.approx(0.0003, rel=1e-12)
    with pytest.raises(sf.ValidationError):
        sf.gate(0.5, tau=1.5)


def test_combine_default_weights():
    assert sf.combine(1, 1, 1, 1) == 2.21


def test_gate_loss_gradient_matches_finite_difference():
    betas = np.array([0.2, 0.45, 0.55, 0.9])
    res = sf.gate_loss(betas)
    h = 1e-6
    for i in range(len(betas)):
        up, dn = betas.copy(), betas.copy()
        up[i] += h
        dn[i] -= h
        fd = (sf.gate_loss(up)["value"] - sf.gate_loss(dn)["value"]) / (2 * h)
        assert res["grad"][i] == pytest.approx(fd, rel=1e-5)


def test_prune_drops_low_scores(scene):
    b = sf.Bundle.decode(scene["bundle"].encode())
    betas = b.fine_betas
    betas[: len(betas) // 4] = 0.1
    b.fine_betas = betas
    pruned, report = sf.prune(b, tau=0.5)
    assert pruned.fine_count == b.fine_count - len(betas) // 4
    assert report["fine_kept"] == pruned.fine_count
    assert report["confusion"] is not None


def test_contrastive_estimators_agree_without_noise():
    masks = np.zeros((8, 8), dtype=np.uint16)
    masks[:4, :4] = 1
    masks[4:, 4:] = 2
    masks[:4, 4:] = 3
    inst = np.zeros((8, 8, 4))
    for k in range(1, 4):
        inst[masks == k, k] = 2.0
    exact = sf.contrastive(inst, masks, estimator="exact")
    linear = sf.contrastive(inst, masks, estimator="linear", seed=5)
    assert exact["value"] == linear["value"]
    assert exact["grad"].shape == inst.shape


def test_query_on_noiseless_scene():
    sc = sf.synth(seed=2, size=32, m_dim=8, overlap=0.0)
    queries = np.eye(8)[:4]
    res = sf.query(sc["bundle"], queries, sc["cameras"][0])
    valid = (res["acc"][..., 0] > 0.5).astype(np.uint8)
    m = sf.seg_metrics(res["labels"], sc["classes"][0], 5, valid)
    assert m["miou"] == 1.0
    assert m["accuracy"] == 1.0


def test_metrics():
    a = np.zeros((16, 16, 3))
    b = np.full((16, 16, 3), 0.5)
    assert sf.psnr(a, b) == pytest.approx(6.020599913279624, abs=1e-12)
    assert sf.ssim(b, b) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(sf.ValidationError):
        sf.psnr(a, b[..., :1])
    assert sf.adjusted_rand_index([0, 0, 1, 1], [3, 3, 7, 7]) == pytest.approx(1.0)


def test_storage_baseline():
    d = sf.SceneDims()
    r = sf.account_counts(d.pixelwise_fine_count(), d.pixelwise_coarse_count(), d)
    assert r["pixelwise_count"] == 131072
    assert r["scalars_geometry"] == 59
    assert r["baseline_plain_bytes"] / 1e6 == pytest.approx(30.93, abs=0.01)
