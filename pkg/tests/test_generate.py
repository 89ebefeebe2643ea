"""Seeded generation, edit algebra, and chained composition."""

import numpy as np
import pytest

from toy import toy_song
from ttvae.errors import InvalidInputError
from ttvae.generate import (
    ChainPlan,
    ChainSection,
    GenerationRequest,
    check_compatibility,
    compose_chain,
    generate,
    pair_to_score,
    seed_latent,
)
from ttvae.latent import AttributeVector, VectorsFile
from ttvae.midi import parse_midi, write_midi
from ttvae.pianoroll import NoteEvent, TrackPair
from ttvae.vae import ModelConfig, TensionVae

CFG = ModelConfig(latent_dim=6, hidden=16, gru_layers=1, rng_seed=2)


def model():
    return TensionVae.initialize(CFG)


def vectors_file(checkpoint_id=""):
    up = np.zeros(6)
    up[1] = 1.0
    return VectorsFile(latent_dim=6, checkpoint_id=checkpoint_id, vectors={
        "tensile_strain_direction": AttributeVector(
            "tensile_strain_direction", up, (4, 4)),
        "cloud_diameter_level": AttributeVector(
            "cloud_diameter_level", -2 * up, (4, 4)),
    })


class TestRequestValidation:
    def test_needs_exactly_one_seed(self):
        with pytest.raises(InvalidInputError):
            GenerationRequest()
        with pytest.raises(InvalidInputError):
            GenerationRequest(sample_seed=1, seed_midi="x.mid")

    def test_section_must_be_multiple_of_four(self):
        with pytest.raises(InvalidInputError):
            ChainSection(bars=6)

    def test_plan_needs_sections(self):
        with pytest.raises(InvalidInputError):
            ChainPlan(sections=[])


class TestSeedLatent:
    def test_sampled_seed_is_deterministic(self):
        m = model()
        z1, info1 = seed_latent(m, GenerationRequest(sample_seed=5))
        z2, _ = seed_latent(m, GenerationRequest(sample_seed=5))
        np.testing.assert_array_equal(z1, z2)
        assert info1["kind"] == "sampled"

    def test_seed_midi_uses_posterior_mean(self, tmp_path):
        path = tmp_path / "seed.mid"
        path.write_bytes(write_midi(toy_song(0)))
        m = model()
        z, info = seed_latent(m, GenerationRequest(seed_midi=path))
        assert z.shape == (6,)
        assert info["kind"] == "seed_midi"
        z2, _ = seed_latent(m, GenerationRequest(seed_midi=path,
                                                 fragment_index=1))
        assert np.abs(z - z2).max() > 0

    def test_fragment_index_out_of_range(self, tmp_path):
        path = tmp_path / "seed.mid"
        path.write_bytes(write_midi(toy_song(0)))
        with pytest.raises(InvalidInputError):
            seed_latent(model(), GenerationRequest(seed_midi=path,
                                                   fragment_index=99))


class TestCompatibility:
    def test_latent_dim_mismatch(self):
        bad = VectorsFile(latent_dim=12, checkpoint_id="", vectors={})
        with pytest.raises(InvalidInputError, match="latent_dim"):
            check_compatibility(model(), bad)

    def test_checkpoint_id_mismatch(self):
        vf = vectors_file(checkpoint_id="aaaa")
        with pytest.raises(InvalidInputError, match="checkpoint id"):
            check_compatibility(model(), vf, checkpoint_id="bbbb")

    def test_blank_ids_accepted(self):
        check_compatibility(model(), vectors_file(), checkpoint_id="anything")


class TestGenerate:
    def test_empty_edits_reconstruct_seed(self):
        m = model()
        result = generate(m, vectors_file(), GenerationRequest(sample_seed=3))
        assert result.report["edits"] == []
        assert result.midi_bytes[:4] == b"MThd"
        parsed = parse_midi(result.midi_bytes)
        assert [t.name for t in parsed.tracks] == ["melody", "bass"]

    def test_cancelling_edits_match_empty(self):
        m = model()
        vf = vectors_file()
        plain = generate(m, vf, GenerationRequest(sample_seed=3))
        cancelled = generate(m, vf, GenerationRequest(
            sample_seed=3,
            edits=[("tensile_strain_direction", 3.0),
                   ("tensile_strain_direction", -3.0)]))
        np.testing.assert_array_equal(plain.roll, cancelled.roll)

    def test_unknown_vector_rejected(self):
        with pytest.raises(InvalidInputError):
            generate(model(), vectors_file(),
                     GenerationRequest(sample_seed=1, edits=[("nope", 1.0)]))

    def test_report_has_both_curve_families(self):
        result = generate(model(), vectors_file(),
                          GenerationRequest(sample_seed=1,
                                            edits=[("cloud_diameter_level", 3.0)]))
        for side in ("original", "modified"):
            block = result.report[side]
            assert len(block["predicted_tensile"]) == 64
            assert len(block["recomputed_diameter"]) == 64

    def test_deterministic_bytes(self):
        m = model()
        r1 = generate(m, vectors_file(), GenerationRequest(sample_seed=9))
        r2 = generate(m, vectors_file(), GenerationRequest(sample_seed=9))
        assert r1.midi_bytes == r2.midi_bytes


class TestComposeChain:
    def plan(self):
        return ChainPlan(sections=[
            ChainSection(bars=8, edits=[("tensile_strain_direction", 6.0)]),
            ChainSection(bars=8, edits=[("cloud_diameter_level", 3.0)]),
        ])

    def test_total_bars_and_markers(self):
        result = compose_chain(model(), vectors_file(), self.plan(),
                               GenerationRequest(sample_seed=4))
        assert result.report["total_bars"] == 16
        parsed = parse_midi(result.midi_bytes)
        assert [m[1] for m in parsed.markers] == ["section 1", "section 2"]
        assert parsed.markers[1][0] == 32.0  # second section starts at bar 8
        end = max(n.onset + n.duration for t in parsed.tracks for n in t.notes)
        assert end <= 16 * 4.0

    def test_single_section_no_edits_equals_generate(self):
        m = model()
        vf = vectors_file()
        chain = compose_chain(m, vf, ChainPlan(sections=[ChainSection(bars=4)]),
                              GenerationRequest(sample_seed=4))
        plain = generate(m, vf, GenerationRequest(sample_seed=4))
        chain_notes = [(n.pitch, n.onset, n.duration)
                       for t in parse_midi(chain.midi_bytes).tracks
                       for n in t.notes]
        plain_notes = [(n.pitch, n.onset, n.duration)
                       for t in parse_midi(plain.midi_bytes).tracks
                       for n in t.notes]
        assert chain_notes == plain_notes

    def test_deterministic(self):
        m = model()
        b1 = compose_chain(m, vectors_file(), self.plan(),
                           GenerationRequest(sample_seed=4)).midi_bytes
        b2 = compose_chain(m, vectors_file(), self.plan(),
                           GenerationRequest(sample_seed=4)).midi_bytes
        assert b1 == b2

    def test_edits_accumulate_across_sections(self):
        m = model()
        vf = vectors_file()
        # Section 2 with an edit that cancels section 1's must reproduce the
        # seed's own block in its second half.
        plan = ChainPlan(sections=[
            ChainSection(bars=4, edits=[("tensile_strain_direction", 2.0)]),
            ChainSection(bars=4, edits=[("tensile_strain_direction", -2.0)]),
        ])
        chain = compose_chain(m, vf, plan, GenerationRequest(sample_seed=4))
        plain = generate(m, vf, GenerationRequest(sample_seed=4))
        parsed = parse_midi(chain.midi_bytes)
        second_half = [(n.pitch, n.onset - 16.0, n.duration)
                       for t in parsed.tracks for n in t.notes
                       if n.onset >= 16.0]
        plain_notes = [(n.pitch, n.onset, n.duration)
                       for t in parse_midi(plain.midi_bytes).tracks
                       for n in t.notes]
        assert sorted(second_half) == sorted(plain_notes)


class TestPairToScore:
    def test_render_settings(self):
        pair = TrackPair(melody=[NoteEvent(60, 0, 4)], bass=[NoteEvent(36, 0, 8)])
        score = pair_to_score(pair)
        assert score.tempos == [(0.0, 120.0)]
        assert score.meters == [(0.0, 4, 4)]
        assert score.tracks[0].notes[0].velocity == 80
        assert score.tracks[0].notes[0].duration == 1.0  # 4 steps = 1 beat
