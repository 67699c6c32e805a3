"""Synthetic corpus: specs, rendering, partition, samplers, export round-trip."""

import hashlib

import numpy as np
import pytest

from stylemix import glyphs, netpbm
from stylemix.glyphs import (
    Corpus,
    CorpusConfig,
    CorpusError,
    DatasetPartition,
    GlyphSpec,
    StyleSpec,
    build_eval_sets,
    export_corpus,
    glyph_spec,
    load_corpus,
    make_partition,
    render_glyph,
    sample_training_batch,
    style_spec,
)

# sha256 of the float64 raster for (corpus seed 7, style 3, content 5, 64 px),
# frozen from the reference run of this renderer
GOLDEN_RENDER_SHA256 = "179bb659768dab7cd976d7ed5467361c815d9a767ecf838f360a197cd34ef3fe"


class TestStyleSpec:
    def test_parameters_inside_declared_ranges(self):
        for style_id in range(50):
            spec = style_spec(3, style_id)
            assert 0.03 <= spec.stroke_thickness <= 0.12
            assert -0.3 <= spec.slant <= 0.3
            assert 0.7 <= spec.scale <= 1.0
            assert 0.4 <= spec.darkness <= 1.0

    def test_deterministic(self):
        assert style_spec(11, 4) == style_spec(11, 4)

    def test_seed_changes_parameters(self):
        assert style_spec(1, 0) != style_spec(2, 0)

    def test_no_duplicate_parameter_tuples_over_1000_ids(self):
        tuples = {style_spec(0, i).as_tuple() for i in range(1000)}
        assert len(tuples) == 1000


class TestGlyphSpec:
    def test_skeleton_nonempty_and_inside_unit_square(self):
        for content_id in range(60):
            spec = glyph_spec(content_id)
            assert len(spec.strokes) >= 1
            for stroke in spec.strokes:
                assert stroke.shape[0] >= 2
                assert (stroke >= 0.0).all() and (stroke <= 1.0).all()

    def test_deterministic(self):
        a, b = glyph_spec(9), glyph_spec(9)
        assert all(np.array_equal(x, y) for x, y in zip(a.strokes, b.strokes))

    def test_alphabet_has_at_least_40_distinct_skeletons(self):
        signatures = set()
        for content_id in range(60):
            spec = glyph_spec(content_id)
            signatures.add(tuple(stroke.tobytes() for stroke in spec.strokes))
        assert len(signatures) == 60


class TestRenderGlyph:
    def test_centerline_is_near_black_at_full_darkness(self):
        style = StyleSpec(style_id=0, stroke_thickness=0.08, slant=0.0,
                          scale=1.0, darkness=1.0)
        image = render_glyph(style, glyph_spec(2), 64)
        assert image.min() <= 0.05

    def test_far_pixels_are_exactly_white(self):
        style = StyleSpec(style_id=0, stroke_thickness=0.05, slant=0.0,
                          scale=1.0, darkness=1.0)
        glyph = GlyphSpec(content_id=0,
                          strokes=(np.array([[0.45, 0.5], [0.55, 0.5]]),))
        image = render_glyph(style, glyph, 64)
        assert image[0, 0] == 1.0
        assert image[-1, -1] == 1.0

    def test_golden_hash_is_stable(self):
        image = render_glyph(style_spec(7, 3), glyph_spec(5), 64)
        assert hashlib.sha256(image.tobytes()).hexdigest() == GOLDEN_RENDER_SHA256

    def test_pure_function(self):
        style, glyph = style_spec(1, 2), glyph_spec(3)
        a = render_glyph(style, glyph, 32)
        b = render_glyph(style, glyph, 32)
        assert a.tobytes() == b.tobytes()

    def test_values_in_unit_interval(self):
        image = render_glyph(style_spec(0, 0), glyph_spec(0), 32)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_rejects_tiny_sizes(self):
        with pytest.raises(ValueError, match="size"):
            render_glyph(style_spec(0, 0), glyph_spec(0), 8)


class TestPartition:
    def test_eight_splits_six_two(self):
        part = make_partition(8, 8, seed=0)
        assert len(part.known_styles) == 6 and len(part.novel_styles) == 2
        assert len(part.known_contents) == 6 and len(part.novel_contents) == 2

    def test_same_seed_identical(self):
        assert make_partition(12, 20, 5) == make_partition(12, 20, 5)

    @pytest.mark.parametrize("seed", range(5))
    def test_disjoint_and_exhaustive(self, seed):
        rng = np.random.default_rng(seed)
        n_styles = int(rng.integers(4, 40))
        n_contents = int(rng.integers(4, 40))
        part = make_partition(n_styles, n_contents, seed)
        assert not set(part.known_styles) & set(part.novel_styles)
        assert sorted(part.known_styles + part.novel_styles) == list(range(n_styles))
        assert not set(part.known_contents) & set(part.novel_contents)
        assert sorted(part.known_contents + part.novel_contents) == list(range(n_contents))

    def test_rejects_small_grids(self):
        with pytest.raises(CorpusError):
            make_partition(3, 8, 0)

    def test_cell_mapping(self):
        part = DatasetPartition(known_styles=(0,), novel_styles=(1,),
                                known_contents=(0,), novel_contents=(1,))
        assert part.cell(0, 0) == "d1"
        assert part.cell(0, 1) == "d2"
        assert part.cell(1, 0) == "d3"
        assert part.cell(1, 1) == "d4"


@pytest.fixture(scope="module")
def small_corpus():
    return Corpus(CorpusConfig(n_styles=8, n_contents=8, image_size=32, seed=1))


class TestTrainingSampler:
    def test_r_one_gives_single_image_sets(self, small_corpus):
        batch = sample_training_batch(small_corpus, n_t=10, r=1, batch_size=3, seed=0)
        for triplet in batch:
            assert len(triplet.style_refs.images) == 1
            assert len(triplet.content_refs.images) == 1
            assert triplet.style_refs.anchor_id == triplet.style_id
            assert triplet.content_refs.anchor_id == triplet.content_id

    def test_targets_come_from_known_known(self, small_corpus):
        part = small_corpus.partition
        for step in range(20):
            batch = sample_training_batch(small_corpus, 50, 2, 4, seed=3, step=step)
            for t in batch:
                assert t.style_id in part.known_styles
                assert t.content_id in part.known_contents

    def test_references_share_the_anchor_factor(self, small_corpus):
        batch = sample_training_batch(small_corpus, 50, 3, 4, seed=4)
        for t in batch:
            for image, j in zip(t.style_refs.images, t.style_refs.counterpart_ids):
                assert image.tobytes() == small_corpus.image(t.style_id, j).tobytes()
            for image, i in zip(t.content_refs.images, t.content_refs.counterpart_ids):
                assert image.tobytes() == small_corpus.image(i, t.content_id).tobytes()

    def test_counterparts_sampled_without_replacement(self, small_corpus):
        for step in range(10):
            batch = sample_training_batch(small_corpus, 50, 4, 2, seed=5, step=step)
            for t in batch:
                assert len(set(t.style_refs.counterpart_ids)) == 4
                assert len(set(t.content_refs.counterpart_ids)) == 4

    def test_deterministic_per_seed_and_step(self, small_corpus):
        a = sample_training_batch(small_corpus, 50, 2, 4, seed=6, step=9)
        b = sample_training_batch(small_corpus, 50, 2, 4, seed=6, step=9)
        assert [(t.style_id, t.content_id) for t in a] == [(t.style_id, t.content_id) for t in b]
        assert all(x.target.tobytes() == y.target.tobytes() for x, y in zip(a, b))

    def test_pool_is_stable_across_steps(self, small_corpus):
        """With a single-entry pool every step must draw the same triplet."""
        seen = set()
        for step in range(6):
            batch = sample_training_batch(small_corpus, n_t=1, r=2, batch_size=2,
                                          seed=7, step=step)
            for t in batch:
                seen.add((t.style_id, t.content_id,
                          t.style_refs.counterpart_ids, t.content_refs.counterpart_ids))
        assert len(seen) == 1

    def test_rejects_oversized_r(self, small_corpus):
        with pytest.raises(CorpusError, match="exceeds"):
            sample_training_batch(small_corpus, 10, 7, 1, seed=0)

    def test_every_d1_cell_is_sampled(self, small_corpus):
        part = small_corpus.partition
        hit = set()
        for step in range(250):
            for t in sample_training_batch(small_corpus, 5000, 1, 40, seed=8, step=step):
                hit.add((t.style_id, t.content_id))
        all_cells = {(i, j) for i in part.known_styles for j in part.known_contents}
        assert hit == all_cells


class TestEvalSets:
    def test_d4_targets_have_novel_ids(self, small_corpus):
        suites = build_eval_sets(small_corpus, r=2, seed=0, per_set=4)
        part = small_corpus.partition
        for item in suites["d4"]:
            assert item.style_id in part.novel_styles
            assert item.content_id in part.novel_contents

    def test_reference_sets_never_contain_the_target(self, small_corpus):
        suites = build_eval_sets(small_corpus, r=4, seed=1, per_set=6)
        for items in suites.values():
            for item in items:
                assert item.content_id not in item.style_refs.counterpart_ids
                assert item.style_id not in item.content_refs.counterpart_ids

    def test_same_seed_identical(self, small_corpus):
        a = build_eval_sets(small_corpus, 2, seed=2, per_set=4)
        b = build_eval_sets(small_corpus, 2, seed=2, per_set=4)
        for cell in glyphs.CELLS:
            ids_a = [(i.style_id, i.content_id, i.style_refs.counterpart_ids) for i in a[cell]]
            ids_b = [(i.style_id, i.content_id, i.style_refs.counterpart_ids) for i in b[cell]]
            assert ids_a == ids_b

    def test_all_four_cells_present(self, small_corpus):
        suites = build_eval_sets(small_corpus, 2, seed=3, per_set=4)
        assert sorted(suites) == ["d1", "d2", "d3", "d4"]
        assert all(len(items) == 4 for items in suites.values())


class TestReferenceProvenance:
    def test_style_set_re_renders_from_the_same_style(self, small_corpus):
        ref = small_corpus.style_reference_set(2, (0, 3, 5))
        spec = small_corpus.styles[2]
        for image, j in zip(ref.images, ref.counterpart_ids):
            again = render_glyph(spec, small_corpus.glyphs[j], 32)
            assert image.tobytes() == again.tobytes()


class TestExportImport:
    def test_round_trip(self, tmp_path):
        corpus = Corpus(CorpusConfig(6, 5, 32, seed=9))
        manifest = export_corpus(corpus, tmp_path / "corp")
        assert manifest.is_file()
        files = sorted((tmp_path / "corp").glob("*.pgm"))
        assert len(files) == 30
        loaded = load_corpus(tmp_path / "corp")
        assert loaded.config == corpus.config
        assert loaded.partition == corpus.partition
        assert loaded.image(0, 0).tobytes() == corpus.image(0, 0).tobytes()

    def test_export_is_byte_deterministic(self, tmp_path):
        corpus = Corpus(CorpusConfig(4, 4, 32, seed=2))
        export_corpus(corpus, tmp_path / "a")
        export_corpus(Corpus(CorpusConfig(4, 4, 32, seed=2)), tmp_path / "b")
        for path_a in sorted((tmp_path / "a").iterdir()):
            path_b = tmp_path / "b" / path_a.name
            assert path_a.read_bytes() == path_b.read_bytes()

    def test_exported_pgm_matches_quantized_render(self, tmp_path):
        corpus = Corpus(CorpusConfig(4, 4, 32, seed=3))
        export_corpus(corpus, tmp_path / "c")
        image = netpbm.read_image(tmp_path / "c" / glyphs.image_filename(1, 2))
        want = netpbm.quantize(corpus.image(1, 2)).astype(np.float64) / 255.0
        assert np.array_equal(image, want)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(CorpusError, match="manifest"):
            load_corpus(tmp_path)

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / glyphs.MANIFEST_NAME).write_text("not-a-manifest\n")
        with pytest.raises(CorpusError, match="manifest"):
            load_corpus(tmp_path)

    def test_tampered_split_rejected(self, tmp_path):
        corpus = Corpus(CorpusConfig(4, 4, 32, seed=4))
        manifest = export_corpus(corpus, tmp_path / "d")
        text = manifest.read_text().replace(
            "known_styles " + " ".join(map(str, corpus.partition.known_styles)),
            "known_styles 0 1 2",
        )
        manifest.write_text(text)
        with pytest.raises(CorpusError, match="split"):
            load_corpus(tmp_path / "d")

    def test_tampered_style_parameters_rejected(self, tmp_path):
        corpus = Corpus(CorpusConfig(4, 4, 32, seed=5))
        manifest = export_corpus(corpus, tmp_path / "e")
        lines = manifest.read_text().splitlines()
        lines = [line.replace("thickness", "thickness 0.05 #", 1)
                 if line.startswith("style 0 ") else line for line in lines]
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusError):
            load_corpus(tmp_path / "e")


class TestNetpbm:
    def test_pgm_write_read_write_is_byte_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        image = rng.uniform(size=(7, 9))
        first = tmp_path / "a.pgm"
        second = tmp_path / "b.pgm"
        netpbm.write_pgm(first, image)
        netpbm.write_pgm(second, netpbm.read_image(first))
        assert first.read_bytes() == second.read_bytes()

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        image = rng.uniform(size=(3, 4, 5))
        path = tmp_path / "c.ppm"
        netpbm.write_ppm(path, image)
        back = netpbm.read_image(path)
        assert back.shape == (3, 4, 5)
        assert np.abs(back - image).max() <= 0.5 / 255 + 1e-12

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "d.pgm"
        path.write_bytes(b"P5 # comment\n# another\n2 1\n255\n\x00\xff")
        image = netpbm.read_image(path)
        assert image.tolist() == [[0.0, 1.0]]

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "e.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(netpbm.NetpbmError, match="truncated"):
            netpbm.read_image(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "f.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\x00EXTRA")
        with pytest.raises(netpbm.NetpbmError, match="trailing"):
            netpbm.read_image(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "g.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(netpbm.NetpbmError, match="magic"):
            netpbm.read_image(path)
