import json

import numpy as np
import pytest

from petprompt import nifti
from petprompt.backends import RegionGrowBackend, SegmentRequest
from petprompt.clicks import select_click
from petprompt.errors import PlacementError
from petprompt.metrics import connected_components
from petprompt.phantoms import (
    SOLVABLE_FRAC,
    PhantomSpec,
    generate,
    suite,
    write_suite,
)
from petprompt.volume import PointPrompt, mask_volume


class TestGenerate:
    def test_deterministic_bytes(self):
        spec = PhantomSpec(seed=42, dims=(32, 32, 32), n_organs=2, n_lesions=2,
                           noise_sigma=0.2)
        g1, l1 = generate(spec)
        g2, l2 = generate(spec)
        assert np.asarray(g1.data).tobytes() == np.asarray(g2.data).tobytes()
        assert np.asarray(l1.labels).tobytes() == np.asarray(l2.labels).tobytes()

    def test_different_seeds_differ(self):
        a, _ = generate(PhantomSpec(seed=1, dims=(32, 32, 32)))
        b, _ = generate(PhantomSpec(seed=2, dims=(32, 32, 32)))
        assert not np.array_equal(np.asarray(a.data), np.asarray(b.data))

    def test_single_ellipsoid_analytic(self):
        spec = PhantomSpec(seed=5, dims=(32, 32, 32), n_organs=1, n_lesions=0,
                           noise_sigma=0.0)
        grid, labels = generate(spec)
        member = np.asarray(labels.labels) == 1
        assert member.any()
        values = np.asarray(grid.data)
        # interior intensity constant at the organ peak, background constant
        assert set(np.unique(values[member])) == {np.float32(spec.organ_suv)}
        assert set(np.unique(values[~member])) == {np.float32(spec.background_suv)}
        # single 26-connected ellipsoid
        _, count = connected_components(labels.mask_for([1]), 26)
        assert count == 1

    def test_lesion_component_count(self):
        spec = PhantomSpec(seed=9, dims=(48, 48, 48), n_organs=0, n_lesions=3,
                           noise_sigma=0.0)
        _, labels = generate(spec)
        pooled = labels.mask_for([1, 2, 3])
        _, count = connected_components(pooled, 26)
        assert count == 3

    def test_labels_and_names(self):
        spec = PhantomSpec(seed=11, dims=(48, 48, 48), n_organs=2, n_lesions=2)
        _, labels = generate(spec)
        assert labels.label_names == {
            1: "organ_1", 2: "organ_2", 3: "lesion_1", 4: "lesion_2"
        }
        present = set(np.unique(np.asarray(labels.labels))) - {0}
        assert present == {1, 2, 3, 4}

    def test_structures_separated(self):
        # no two structures 26-touch: pooled components == structure count
        spec = PhantomSpec(seed=13, dims=(48, 48, 48), n_organs=2, n_lesions=3)
        _, labels = generate(spec)
        pooled = labels.mask_for([1, 2, 3, 4, 5])
        _, count = connected_components(pooled, 26)
        assert count == 5

    def test_placement_error_when_overcrowded(self):
        with pytest.raises(PlacementError):
            generate(PhantomSpec(seed=1, dims=(16, 16, 16), n_organs=0, n_lesions=60))

    def test_dims_validation(self):
        with pytest.raises(ValueError):
            PhantomSpec(seed=1, dims=(8, 32, 32))

    def test_noise_margin_validation(self):
        with pytest.raises(ValueError):
            PhantomSpec(seed=1, noise_sigma=3.0)

    def test_satellites_single_component(self):
        spec = PhantomSpec(seed=21, dims=(64, 64, 64), n_organs=1,
                           satellites=(2, 4), noise_sigma=0.0)
        _, labels = generate(spec)
        organ = labels.mask_for([1])
        _, c26 = connected_components(organ, 26)
        _, c6 = connected_components(organ, 6)
        assert c26 == 1 and c6 == 1

    def test_solvable_by_region_grow_at_half_or_less(self):
        # zero noise: a grow at a fraction <= 0.5 from the interior-most
        # voxel reproduces the whole target exactly
        for seed in (3, 17, 29):
            spec = PhantomSpec(seed=seed, dims=(64, 64, 64), n_organs=1,
                               satellites=(2, 4), noise_sigma=0.0)
            grid, labels = generate(spec)
            target = labels.mask_for([1])
            click = select_click(target, spec.spacing)
            resp = RegionGrowBackend(SOLVABLE_FRAC).segment(
                SegmentRequest(
                    patch=np.asarray(grid.data),
                    prompts=(PointPrompt(click, "pos", 0),),
                )
            )
            assert np.array_equal(resp.prob >= 0.5, target.bits)

    def test_plain_lobe_solvable_at_exactly_half(self):
        spec = PhantomSpec(seed=3, dims=(32, 32, 32), n_organs=1, noise_sigma=0.0)
        grid, labels = generate(spec)
        target = labels.mask_for([1])
        click = select_click(target, spec.spacing)
        resp = RegionGrowBackend(0.5).segment(
            SegmentRequest(
                patch=np.asarray(grid.data), prompts=(PointPrompt(click, "pos", 0),)
            )
        )
        assert np.array_equal(resp.prob >= 0.5, target.bits)


class TestSuite:
    def test_organs_single_component(self):
        for case in suite("organs", 10, 7, dims=(48, 48, 48)):
            _, labels = generate(case.spec)
            target = labels.mask_for(case.target_labels)
            assert mask_volume(target) > 0
            _, count = connected_components(target, 26)
            assert count == 1

    def test_disseminated_component_count(self):
        for case in suite("disseminated", 5, 7):
            _, labels = generate(case.spec)
            target = labels.mask_for(case.target_labels)
            _, count = connected_components(target, 26)
            assert count >= 5

    def test_lesions_range(self):
        for case in suite("lesions", 10, 3):
            assert 1 <= len(case.target_labels) <= 3

    def test_repeatable(self):
        a = suite("lesions", 5, 7)
        b = suite("lesions", 5, 7)
        assert a == b

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            suite("bones", 1, 0)


class TestWriteSuite:
    def test_files_and_manifest(self, tmp_path):
        cases = suite("organs", 3, 7, dims=(32, 32, 32))
        manifest = write_suite(cases, tmp_path)
        entries = json.loads(manifest.read_text())
        assert len(entries) == 3
        files = sorted(p.name for p in tmp_path.iterdir())
        assert len([f for f in files if f.endswith(".nii.gz")]) == 6
        for entry in entries:
            grid = nifti.read_volume(tmp_path / entry["volume"])
            labels, _ = nifti.read_labels(tmp_path / entry["labels"])
            assert grid.dims == (32, 32, 32)
            assert entry["targets"][0]["labels"] == [1]
            assert entry["seed"] >= 7

    def test_round_trip_equals_generated(self, tmp_path):
        cases = suite("lesions", 2, 11, dims=(32, 32, 32))
        write_suite(cases, tmp_path)
        for case in cases:
            grid, labels = generate(case.spec)
            disk_grid = nifti.read_volume(tmp_path / f"{case.case_id}_suv.nii.gz")
            disk_labels, _ = nifti.read_labels(
                tmp_path / f"{case.case_id}_labels.nii.gz"
            )
            assert np.array_equal(np.asarray(disk_grid.data), np.asarray(grid.data))
            assert np.array_equal(
                np.asarray(disk_labels.labels), np.asarray(labels.labels)
            )

    def test_rerun_identical_bytes(self, tmp_path):
        cases = suite("organs", 2, 5, dims=(32, 32, 32))
        write_suite(cases, tmp_path / "a")
        write_suite(cases, tmp_path / "b")
        for name in ("manifest.json", "organs_0000_suv.nii.gz"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()
