import numpy as np
import pytest

from oracles import brute_distance_field
from petprompt.backends import PerfectOracleBackend, RegionGrowBackend, ThresholdBackend
from petprompt.clicks import (
    SegmentationState,
    discrepancy,
    next_prompt,
    run_interaction,
    run_lesion_wise,
    select_click,
)
from petprompt.metrics import dsc
from petprompt.patches import PatchConfig
from petprompt.phantoms import PhantomSpec, generate
from petprompt.volume import (
    BinaryMask,
    PromptSet,
    VoxelGrid,
    empty_mask,
    mask_difference,
    mask_union,
    mask_volume,
)

CFG = PatchConfig(edge=32, window_cap=64)


def _mask(dims, voxels):
    bits = np.zeros(dims, dtype=bool)
    for v in voxels:
        bits[v] = True
    return BinaryMask(bits)


def _state(prob, iteration=0, prompts=PromptSet()):
    return SegmentationState(
        prob=prob, mask=BinaryMask(prob >= 0.5), iteration=iteration, prompts=prompts
    )


class TestDiscrepancy:
    def test_perfect_prediction(self):
        g = _mask((4, 4, 4), [(1, 1, 1)])
        state = _state(g.bits.astype(np.float32))
        field = discrepancy(g, state)
        assert mask_volume(field.fn_mask) == 0
        assert mask_volume(field.fp_mask) == 0

    def test_empty_prediction(self):
        g = _mask((4, 4, 4), [(1, 1, 1), (2, 2, 2)])
        field = discrepancy(g, _state(np.zeros((4, 4, 4), np.float32)))
        assert field.fn_mask == g
        assert mask_volume(field.fp_mask) == 0

    def test_one_spurious_voxel(self):
        g = _mask((4, 4, 4), [(1, 1, 1)])
        pred = mask_union(g, _mask((4, 4, 4), [(3, 3, 3)]))
        field = discrepancy(g, _state(pred.bits.astype(np.float32)))
        assert mask_volume(field.fn_mask) == 0
        assert field.fp_mask == _mask((4, 4, 4), [(3, 3, 3)])

    def test_partitions_symmetric_difference(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            dims = tuple(rng.integers(3, 9, size=3))
            g = BinaryMask(rng.random(dims) < 0.4)
            pred = (rng.random(dims) < 0.4).astype(np.float32)
            field = discrepancy(g, _state(pred))
            sym = g.bits ^ (pred >= 0.5)
            assert not (field.fn_mask.bits & field.fp_mask.bits).any()
            assert np.array_equal(field.fn_mask.bits | field.fp_mask.bits, sym)
            assert not (field.fn_mask.bits & ~g.bits).any()


class TestSelectClick:
    def test_single_voxel(self):
        m = _mask((4, 4, 4), [(2, 1, 3)])
        assert select_click(m) == (2, 1, 3)

    def test_cube_center_via_brute_force(self):
        bits = np.zeros((7, 7, 7), bool)
        bits[2:5, 2:5, 2:5] = True
        assert select_click(BinaryMask(bits)) == (3, 3, 3)
        # independent check: deepest voxel by brute-force EDT to the complement
        outside = np.pad(~bits, 1, constant_values=True)
        depth = brute_distance_field(outside)[1:-1, 1:-1, 1:-1]
        assert depth[3, 3, 3] == depth[bits].max()

    def test_prefers_larger_component(self):
        big = [(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0), (4, 0, 0)]
        small = [(0, 4, 4), (1, 4, 4)]
        m = _mask((5, 5, 5), big + small)
        click = select_click(m)
        assert click in big

    def test_empty_region_error(self):
        with pytest.raises(ValueError):
            select_click(empty_mask((3, 3, 3)))

    def test_tie_break_smallest_linear_index(self):
        # two symmetric voxels: equal depth, pick the smaller linear index
        m = _mask((4, 1, 1), [(1, 0, 0), (2, 0, 0)])
        assert select_click(m) == (1, 0, 0)


class TestNextPrompt:
    def test_round_zero_positive_inside_target(self):
        g = _mask((5, 5, 5), [(1, 1, 1), (1, 2, 1), (2, 1, 1)])
        prompt = next_prompt(g, None)
        assert prompt.polarity == "pos"
        assert prompt.iteration == 0
        assert g.bits[prompt.index]

    def test_fp_only_giv_negative(self):
        g = _mask((5, 5, 5), [(1, 1, 1)])
        pred = np.zeros((5, 5, 5), np.float32)
        pred[1, 1, 1] = 1.0  # target hit
        pred[3, 3, 3] = 1.0  # spurious blob
        prompt = next_prompt(g, _state(pred))
        assert prompt.polarity == "neg"
        assert prompt.index == (3, 3, 3)
        assert prompt.iteration == 1

    def test_tie_favors_fn(self):
        g = _mask((5, 5, 5), [(0, 0, 0), (1, 1, 1)])
        pred = np.zeros((5, 5, 5), np.float32)
        pred[1, 1, 1] = 1.0  # one FN (0,0,0), one FP below
        pred[4, 4, 4] = 1.0
        prompt = next_prompt(g, _state(pred))
        assert prompt.polarity == "pos"
        assert prompt.index == (0, 0, 0)

    def test_converged_returns_none(self):
        g = _mask((4, 4, 4), [(1, 1, 1)])
        assert next_prompt(g, _state(g.bits.astype(np.float32))) is None

    def test_empty_ground_truth_error(self):
        with pytest.raises(ValueError):
            next_prompt(empty_mask((3, 3, 3)), None)


def _phantom(seed=7, dims=(48, 48, 48), **kw):
    spec = PhantomSpec(seed=seed, dims=dims, **kw)
    grid, labels = generate(spec)
    return grid, labels


class TestRunInteraction:
    def test_single_point_single_positive_prompt(self):
        grid, labels = _phantom(n_organs=1)
        g = labels.mask_for([1])
        traj = run_interaction(ThresholdBackend(2.0), grid, g, 1, CFG)
        assert len(traj.states) == 1
        prompts = list(traj.final_state.prompts)
        assert len(prompts) == 1
        assert prompts[0].polarity == "pos"
        assert g.bits[prompts[0].index]

    def test_oracle_converges_after_first_round(self):
        grid, labels = _phantom(n_organs=1, n_lesions=1)
        g = labels.mask_for([1])
        traj = run_interaction(PerfectOracleBackend(g), grid, g, 5, CFG)
        assert len(traj.states) == 1
        assert traj.converged
        assert traj.metrics[0].dsc == 1.0
        assert traj.metrics[0].nsd == 1.0

    def test_click_validity_replay(self):
        grid, labels = _phantom(seed=23, dims=(64, 64, 64), n_organs=1,
                                satellites=(2, 4), noise_sigma=0.05)
        g = labels.mask_for([1])
        traj = run_interaction(RegionGrowBackend(0.41), grid, g, 5, CFG)
        for t, state in enumerate(traj.states):
            new = [p for p in state.prompts if p.iteration == t]
            assert len(new) == 1
            p = new[0]
            if t == 0:
                assert p.polarity == "pos" and g.bits[p.index]
                continue
            previous = traj.states[t - 1].mask
            if p.polarity == "pos":
                assert g.bits[p.index] and not previous.bits[p.index]
            else:
                assert previous.bits[p.index] and not g.bits[p.index]

    def test_deterministic(self):
        grid, labels = _phantom(seed=31, dims=(48, 48, 48), n_organs=1,
                                satellites=(1, 2), noise_sigma=0.05)
        g = labels.mask_for([1])
        t1 = run_interaction(RegionGrowBackend(0.41), grid, g, 4, CFG)
        t2 = run_interaction(RegionGrowBackend(0.41), grid, g, 4, CFG)
        assert len(t1.states) == len(t2.states)
        for s1, s2 in zip(t1.states, t2.states):
            assert np.array_equal(s1.prob, s2.prob)
            assert s1.mask == s2.mask
            assert s1.prompts == s2.prompts

    def test_stalls_on_click_blind_backend(self):
        # threshold backend ignores prompts: after the FN and FP clicks the
        # discrepancy repeats, so the loop stops instead of re-clicking
        grid, labels = _phantom(n_organs=1)
        g = labels.mask_for([1])
        traj = run_interaction(ThresholdBackend(100.0), grid, g, 5, CFG)
        assert traj.stalled
        assert len(traj.states) < 5

    def test_budget_indexing(self):
        grid, labels = _phantom(seed=40, dims=(64, 64, 64), n_organs=1,
                                satellites=(2, 3), noise_sigma=0.05)
        g = labels.mask_for([1])
        traj = run_interaction(RegionGrowBackend(0.41), grid, g, 5, CFG)
        assert traj.metric_at_budget(1) == traj.metrics[0]
        assert traj.metric_at_budget(len(traj.metrics)) == traj.metrics[-1]
        assert traj.metric_at_budget(99) == traj.metrics[-1]


class TestLesionWise:
    def test_single_component_matches_global(self):
        grid, labels = _phantom(seed=9, n_organs=1)
        g = labels.mask_for([1])
        global_run = run_interaction(RegionGrowBackend(0.41), grid, g, 3, CFG)
        lesion_run = run_lesion_wise(RegionGrowBackend(0.41), grid, g, 3, CFG)
        assert len(lesion_run.lesions) == 1
        assert lesion_run.final_mask == global_run.final_state.mask
        assert lesion_run.metrics[-1].dsc == global_run.metrics[-1].dsc

    def test_two_lesions_oracle_union(self):
        grid, labels = _phantom(seed=11, n_organs=0, n_lesions=2)
        g = labels.mask_for([1, 2])
        result = run_lesion_wise(PerfectOracleBackend(g), grid, g, 1, CFG)
        assert result.final_mask == g
        assert result.metrics[-1].dsc == 1.0

    def test_three_lesions_one_point_each(self):
        grid, labels = _phantom(seed=13, n_organs=0, n_lesions=3)
        g = labels.mask_for([1, 2, 3])
        result = run_lesion_wise(RegionGrowBackend(0.41), grid, g, 1, CFG)
        assert len(result.lesions) == 3
        assert result.total_prompts == 3
        for traj in result.lesions:
            assert all(p.polarity == "pos" for p in traj.final_state.prompts)

    def test_lesion_wise_beats_single_click_on_scattered_targets(self):
        grid, labels = _phantom(seed=15, dims=(64, 64, 64), n_organs=0, n_lesions=6)
        g = labels.mask_for(range(1, 7))
        single = run_interaction(RegionGrowBackend(0.41), grid, g, 1, CFG)
        wise = run_lesion_wise(RegionGrowBackend(0.41), grid, g, 1, CFG)
        assert wise.metrics[-1].dsc > single.metrics[-1].dsc


class TestInteractionBenefit:
    def test_more_clicks_never_hurt_on_lobed_organs(self):
        d1, d5 = [], []
        for seed in range(6):
            grid, labels = _phantom(seed=60 + seed, dims=(64, 64, 64), n_organs=1,
                                    satellites=(2, 4), noise_sigma=0.05)
            g = labels.mask_for([1])
            traj = run_interaction(RegionGrowBackend(0.41), grid, g, 5,
                                   PatchConfig(edge=64, window_cap=64))
            d1.append(traj.metric_at_budget(1).dsc)
            d5.append(traj.metric_at_budget(5).dsc)
        assert np.median(d5) >= np.median(d1)
        assert np.median(d5) > 0.97
