import itertools

import numpy as np
import pytest

from limkit import synth
from limkit.evaluation import parse_annotation_file
from limkit.synth import MaterialClass, SceneSpec, Shape


def test_materials_fixed():
    assert len(MaterialClass) == 3
    r, g, b = MaterialClass.ORGANIC.rgb
    assert r > g > b  # orange
    assert max(MaterialClass.INORGANIC.rgb) == MaterialClass.INORGANIC.rgb[2]
    assert max(MaterialClass.MIXTURE.rgb) == MaterialClass.MIXTURE.rgb[1]


def test_same_seed_identical_scene():
    a = synth.generate_scene(SceneSpec(seed=3))
    b = synth.generate_scene(SceneSpec(seed=3))
    assert a.image.tobytes() == b.image.tobytes()
    assert a.boxes == b.boxes and a.categories == b.categories


def test_single_shape_not_occluded():
    s = Shape("rectangle", 10, 10, 8, 6, MaterialClass.ORGANIC, 1.0)
    _, masks = synth.render([s], 32, 32)
    assert synth.occlusion_fractions(masks) == [0.0]


def test_coincident_shapes_occlusion():
    s = Shape("ellipse", 16, 16, 10, 12, MaterialClass.MIXTURE, 1.0)
    _, masks = synth.render([s, s], 32, 32)
    assert synth.occlusion_fractions(masks) == [1.0, 0.0]


def test_render_order_independent():
    rng = np.random.default_rng(0)
    spec = SceneSpec(height=48, width=48, min_size=8, max_size=30)
    shapes = [synth._sample_shape(rng, spec) for _ in range(3)]
    ref, _ = synth.render(shapes, 48, 48)
    for perm in itertools.permutations(shapes):
        np.testing.assert_allclose(synth.render(list(perm), 48, 48)[0], ref, rtol=1e-15)


def test_overlap_darkens_and_background_white():
    a = Shape("rectangle", 10, 10, 10, 10, MaterialClass.ORGANIC, 1.0)
    b = Shape("rectangle", 14, 10, 10, 10, MaterialClass.INORGANIC, 1.0)
    img, _ = synth.render([a, b], 24, 32)
    assert (img[0, -1] == 1.0).all()
    assert img[10, 12].sum() < min(img[10, 6].sum(), img[10, 18].sum())


def test_tight_box_is_mask_hull():
    m = np.zeros((10, 10), dtype=bool)
    m[2:5, 3:8] = True
    assert synth.tight_box(m).as_tuple() == (3.0, 2.0, 8.0, 5.0)


@pytest.mark.parametrize("kind", synth.SHAPE_KINDS)
def test_shape_masks_nonempty_and_bounded(kind):
    s = Shape(kind, 16, 16, 20, 9, MaterialClass.ORGANIC, 1.0)
    m = synth.shape_mask(s, 32, 32)
    b = synth.tight_box(m)
    # pixel centres on the outline count as inside
    assert b.x2 - b.x1 <= 21 and b.y2 - b.y1 <= 10


@pytest.mark.parametrize("seed", range(20))
def test_boxes_in_bounds(seed):
    spec = SceneSpec(height=64, width=48, seed=seed, min_size=10, max_size=40)
    sc = synth.generate_scene(spec)
    assert 1 <= len(sc.boxes) <= 10
    assert sc.image.shape == (64, 48, 3) and sc.image.dtype == np.uint8
    for b in sc.boxes:
        assert 0 <= b.x1 < b.x2 <= 48 and 0 <= b.y1 < b.y2 <= 64


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(max_instances=11)
    with pytest.raises(ValueError):
        SceneSpec(height=32, width=32, max_size=40)


def test_instance_histogram_skews_small():
    counts = [len(synth.generate_scene(SceneSpec(seed=s, height=32, width=32, min_size=4, max_size=8)).boxes)
              for s in range(300)]
    hist = np.bincount(counts, minlength=11)
    assert hist[1] > hist[3] > hist[6]


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    synth.write_ppm(tmp_path / "x.ppm", img)
    raw = (tmp_path / "x.ppm").read_bytes()
    assert raw.startswith(b"P6\n7 5\n255\n")
    np.testing.assert_array_equal(synth.read_ppm(tmp_path / "x.ppm"), img)
    assert synth.ppm_size(tmp_path / "x.ppm") == (7, 5)


def test_ppm_with_comment_and_errors(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# hi\n1 1\n255\n\x01\x02\x03")
    assert synth.read_ppm(p).tolist() == [[[1, 2, 3]]]
    p.write_bytes(b"P3\n1 1\n255\n1 2 3")
    with pytest.raises(ValueError, match="P6"):
        synth.read_ppm(p)
    with pytest.raises(ValueError):
        synth.write_ppm(p, np.zeros((2, 2, 3)))


def test_write_dataset_split_and_files(tmp_path):
    entries = synth.write_dataset(5, tmp_path, base_seed=7, height=32, width=32, min_size=6, max_size=16)
    assert sorted(p.name for p in (tmp_path / "images").iterdir()) == [f"{i:06d}.ppm" for i in range(5)]
    assert len(list((tmp_path / "annotations").iterdir())) == 5
    assert [e.split for e in entries] == ["train"] * 4 + ["test"]
    assert synth.read_manifest(tmp_path / "manifest.txt") == [
        synth.ManifestEntry(e.filename, e.split, e.instances, tuple(round(o, 4) for o in e.occlusion)) for e in entries]
    for e in entries:
        anns, errors = parse_annotation_file(tmp_path / "annotations" / f"{e.image_id}.txt")
        assert not errors and len(anns) == e.instances == len(e.occlusion)


def test_write_dataset_byte_identical(tmp_path):
    kw = dict(height=32, width=32, min_size=6, max_size=16)
    synth.write_dataset(3, tmp_path / "a", base_seed=1, **kw)
    synth.write_dataset(3, tmp_path / "b", base_seed=1, **kw)
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_load_dataset_roundtrip(tmp_path):
    synth.write_dataset(2, tmp_path, height=32, width=32, min_size=6, max_size=16)
    entries, images, anns = synth.load_dataset(tmp_path)
    sc = synth.generate_scene(SceneSpec(seed=1, height=32, width=32, min_size=6, max_size=16))
    np.testing.assert_array_equal(images["000001"], sc.image)
    assert [a.box for a in anns["000001"]] == sc.boxes


def test_write_dataset_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="cannot write"):
        synth.write_dataset(1, blocker / "sub")
