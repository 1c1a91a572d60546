import json

import numpy as np
import pytest

from restain.data import (
    CONTENT_DIR,
    MANIFEST_NAME,
    CorpusManifest,
    Patch,
    PatchSpec,
    StainDomain,
    default_domains,
    extract_patches,
    foreground_fraction,
    generate_content_field,
    generate_synthetic_corpus,
    ingest_image_folder,
    invert_render,
    load_corpus,
    palette_domain,
    render_domain,
)
from restain.errors import ConfigurationError, CorpusError
from restain.metrics import ssim
from restain.utils import save_image, sha256_file


# ---------------------------------------------------------------------------
# domains and rendering


def test_palette_domain_endpoints():
    d = palette_domain(0, "x", (0.9, 0.8, 0.7), (0.2, 0.3, 0.1))
    flat = np.zeros((2, 2))
    assert np.allclose(render_domain(d, flat), np.array([0.9, 0.8, 0.7]) * 2 - 1)
    full = np.ones((2, 2))
    assert np.allclose(render_domain(d, full), np.array([0.2, 0.3, 0.1]) * 2 - 1)


def test_render_matches_per_pixel_loop():
    d = default_domains()[1]
    rng = np.random.default_rng(3)
    content = rng.uniform(0, 1, size=(4, 5))
    out = render_domain(d, content)
    for i in range(4):
        for j in range(5):
            powered = content[i, j] ** d.gamma
            expected01 = d.mix @ powered + d.bias
            assert np.allclose(out[i, j], expected01 * 2 - 1, atol=1e-12)


def test_render_is_channelwise_monotone_in_content():
    for d in default_domains():
        lo = render_domain(d, np.full((1, 1), 0.3))[0, 0]
        hi = render_domain(d, np.full((1, 1), 0.6))[0, 0]
        sign = np.sign(d.bias - (d.bias + d.mix.sum(axis=1)))  # bg vs fg per channel
        assert ((hi - lo) * -sign > 0).all()


def test_render_invert_round_trip_all_domains():
    rng = np.random.default_rng(0)
    content = rng.uniform(0, 1, size=(16, 16))
    for d in default_domains():
        back = invert_render(d, render_domain(d, content))
        assert np.max(np.abs(back - content)) < 1e-10


def test_render_output_stays_in_range():
    rng = np.random.default_rng(1)
    content = rng.uniform(0, 1, size=(32, 32))
    for d in default_domains():
        out = render_domain(d, content)
        assert out.min() >= -1 - 1e-9 and out.max() <= 1 + 1e-9


def test_cross_domain_luminance_ssim_exceeds_threshold():
    # recolorings of shared geometry keep high structural similarity when the
    # tone curves are linear
    a = palette_domain(0, "a", (0.94, 0.90, 0.95), (0.48, 0.20, 0.52))
    b = palette_domain(1, "b", (0.95, 0.93, 0.90), (0.16, 0.42, 0.52))
    content = generate_content_field(64, np.random.default_rng(9))
    lum_a = render_domain(a, content).mean(axis=-1)
    lum_b = render_domain(b, content).mean(axis=-1)
    assert ssim(lum_a, lum_b) > 0.8


def test_domain_validation_errors():
    with pytest.raises(ConfigurationError):
        StainDomain(id=0, name="bad", mix=np.zeros((3, 3)), bias=np.zeros(3), gamma=np.ones(3))
    with pytest.raises(ConfigurationError):
        StainDomain(id=0, name="bad", mix=np.eye(3), bias=np.zeros(3), gamma=(1.0, 0.0, 1.0))
    with pytest.raises(ConfigurationError):
        palette_domain(0, "flat", (0.5, 0.5, 0.5), (0.5, 0.2, 0.1))  # equal in channel 0


def test_domain_json_round_trip():
    d = default_domains()[2]
    d2 = StainDomain.from_json(json.loads(json.dumps(d.to_json())))
    assert d2.id == d.id and d2.name == d.name
    assert np.allclose(d2.mix, d.mix) and np.allclose(d2.bias, d.bias) and np.allclose(d2.gamma, d.gamma)


# ---------------------------------------------------------------------------
# content fields


def test_content_field_range_and_peak():
    field = generate_content_field(48, np.random.default_rng(7))
    assert field.shape == (48, 48)
    assert field.min() >= 0.0
    assert field.max() == pytest.approx(1.0)


def test_content_field_is_deterministic_per_seed():
    a = generate_content_field(32, np.random.default_rng(42))
    b = generate_content_field(32, np.random.default_rng(42))
    c = generate_content_field(32, np.random.default_rng(43))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_content_field_has_structure():
    field = generate_content_field(64, np.random.default_rng(5))
    assert field.std() > 0.05  # not flat
    gy, gx = np.gradient(field)
    assert np.hypot(gy, gx).max() < 1.0  # smooth, no hard edges


# ---------------------------------------------------------------------------
# corpus generation and loading


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_synthetic_corpus(
        root, 5, domains=default_domains()[:2], image_size=24, seed=3, test_fraction=0.4
    )
    return root, manifest


def test_manifest_has_exact_keys(small_corpus):
    root, _ = small_corpus
    raw = json.loads((root / MANIFEST_NAME).read_text())
    assert sorted(raw.keys()) == ["corpus_root", "domains", "samples", "seed"]
    assert all(sorted(s.keys()) == ["domain", "id", "path", "split"] for s in raw["samples"])
    assert raw["seed"] == 3


def test_corpus_counts_and_splits(small_corpus):
    root, manifest = small_corpus
    corpus = load_corpus(root)
    assert len(corpus) == 5 * 2
    assert len(corpus.sample_ids()) == 5
    # round(5 * 0.4) = 2 trailing samples are the held-out split
    assert corpus.sample_ids(split="test") == ["s00003", "s00004"]
    assert corpus.sample_ids(split="train") == ["s00000", "s00001", "s00002"]
    assert {d.name for d in corpus.domains} == {"he", "mas"}


def test_corpus_images_match_renders(small_corpus):
    root, _ = small_corpus
    corpus = load_corpus(root)
    content = corpus.content("s00001")
    img = corpus.image("s00001", 0)
    assert img.shape == (24, 24, 3)
    # PNG quantization holds each channel within half a level
    assert np.max(np.abs(img - render_domain(corpus.domain_by_id(0), content))) <= 1.0 / 255.0


def test_content_invertibility_through_files(small_corpus):
    root, _ = small_corpus
    corpus = load_corpus(root)
    content = corpus.content("s00000")
    recovered = invert_render(corpus.domain_by_id(1), corpus.image("s00000", 1))
    assert np.max(np.abs(recovered - content)) < 0.02  # 8-bit quantization bound


def test_regeneration_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        generate_synthetic_corpus(out, 3, domains=default_domains()[:2], image_size=16, seed=8)
    for rel in [MANIFEST_NAME, "he/s00000.png", "mas/s00002.png", f"{CONTENT_DIR}/s00001.npy"]:
        assert sha256_file(a / rel) == sha256_file(b / rel), rel


def test_different_seed_changes_content(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_synthetic_corpus(a, 2, domains=default_domains()[:2], image_size=16, seed=1)
    generate_synthetic_corpus(b, 2, domains=default_domains()[:2], image_size=16, seed=2)
    assert sha256_file(a / "he/s00000.png") != sha256_file(b / "he/s00000.png")


def test_generate_rejects_bad_arguments(tmp_path):
    with pytest.raises(ConfigurationError):
        generate_synthetic_corpus(tmp_path / "x", 0)
    with pytest.raises(ConfigurationError):
        generate_synthetic_corpus(tmp_path / "x", 2, domains=default_domains()[:1])
    dupes = (default_domains()[0], palette_domain(0, "dupe", (0.9, 0.9, 0.9), (0.1, 0.1, 0.1)))
    with pytest.raises(ConfigurationError):
        generate_synthetic_corpus(tmp_path / "x", 2, domains=dupes)


def test_load_corpus_names_missing_file(tmp_path):
    generate_synthetic_corpus(tmp_path, 2, domains=default_domains()[:2], image_size=16, seed=0)
    (tmp_path / "he" / "s00001.png").unlink()
    with pytest.raises(CorpusError, match="s00001"):
        load_corpus(tmp_path)


def test_load_corpus_names_unknown_domain(tmp_path):
    generate_synthetic_corpus(tmp_path, 2, domains=default_domains()[:2], image_size=16, seed=0)
    raw = json.loads((tmp_path / MANIFEST_NAME).read_text())
    raw["samples"][0]["domain"] = 9
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(raw))
    with pytest.raises(CorpusError, match="unknown domain 9"):
        load_corpus(tmp_path)


def test_load_corpus_rejects_split_conflict(tmp_path):
    generate_synthetic_corpus(tmp_path, 2, domains=default_domains()[:2], image_size=16, seed=0)
    raw = json.loads((tmp_path / MANIFEST_NAME).read_text())
    raw["samples"][0]["split"] = "test" if raw["samples"][1]["split"] == "train" else "train"
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(raw))
    with pytest.raises(CorpusError, match="both splits"):
        load_corpus(tmp_path)


def test_load_corpus_rejects_malformed_manifest(tmp_path):
    path = tmp_path / MANIFEST_NAME
    path.write_text("not json {")
    with pytest.raises(CorpusError, match="malformed"):
        load_corpus(tmp_path)
    path.write_text(json.dumps({"seed": 0}))
    with pytest.raises(CorpusError):
        load_corpus(tmp_path)


def test_corpus_accessor_errors(small_corpus):
    root, _ = small_corpus
    corpus = load_corpus(root)
    with pytest.raises(KeyError):
        corpus.domain_by_id(77)
    with pytest.raises(KeyError):
        corpus.domain_by_name("nope")
    with pytest.raises(KeyError):
        corpus.record("missing", 0)
    with pytest.raises(CorpusError):
        corpus.content("missing")


# ---------------------------------------------------------------------------
# patch extraction


def test_extract_patches_matches_brute_force():
    rng = np.random.default_rng(2)
    img = rng.uniform(-1, 1, size=(10, 12, 3))
    spec = PatchSpec(size=4, overlap=2)
    patches = extract_patches(img, spec)
    expected = []
    for y in (0, 2, 4, 6):
        for x in (0, 2, 4, 6, 8):
            expected.append((y, x))
    assert [(p.y, p.x) for p in patches] == expected
    for p in patches:
        assert np.array_equal(p.data, img[p.y : p.y + 4, p.x : p.x + 4])


def test_extract_patches_clamps_trailing_window():
    img = np.arange(11 * 9).reshape(11, 9).astype(float)
    patches = extract_patches(img, PatchSpec(size=4, overlap=1))
    ys = sorted({p.y for p in patches})
    xs = sorted({p.x for p in patches})
    assert ys == [0, 3, 6, 7]  # 7 = 11 - 4, clamped to the edge
    assert xs == [0, 3, 5]  # 5 = 9 - 4
    covered = np.zeros_like(img, dtype=bool)
    for p in patches:
        covered[p.y : p.y + 4, p.x : p.x + 4] = True
    assert covered.all()


def test_extract_patches_validation():
    with pytest.raises(ConfigurationError):
        PatchSpec(size=4, overlap=4)
    with pytest.raises(ConfigurationError):
        PatchSpec(size=4, overlap=-1)
    with pytest.raises(ValueError):
        extract_patches(np.zeros((3, 10)), PatchSpec(size=4, overlap=0))
    with pytest.raises(ValueError):
        extract_patches(np.zeros(10), PatchSpec(size=4, overlap=0))


def test_foreground_fraction_extremes():
    dark = -np.ones((8, 8, 3))
    bright = np.ones((8, 8, 3))
    assert foreground_fraction(dark) == 1.0
    assert foreground_fraction(bright) == 0.0
    half = np.concatenate([dark[:4], bright[:4]])
    assert foreground_fraction(half) == 0.5


def test_ingest_image_folder_filters_and_writes(tmp_path):
    src, out = tmp_path / "src", tmp_path / "out"
    src.mkdir()
    rng = np.random.default_rng(4)
    img = np.ones((8, 8, 3))  # all background
    img[:4, :4] = -1.0  # one dark quadrant
    save_image(img, src / "tile.png")
    save_image(rng.uniform(-1, 1, (8, 8, 3)), src / "noise.png")
    (src / "ignore.txt").write_text("not an image")

    records = ingest_image_folder(src, out, PatchSpec(size=4, overlap=0), min_foreground=0.9)
    names = [r[0] for r in records]
    assert "ignore.txt" not in names
    # only the fully dark quadrant of tile.png passes the 90% threshold
    tile_records = [r for r in records if r[0] == "tile.png"]
    assert [(r[1], r[2]) for r in tile_records] == [(0, 0)]
    for r in records:
        assert (out / r[3]).exists() or (tmp_path / r[3]).exists()
