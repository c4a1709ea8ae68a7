"""Synthetic corpus generator: determinism, layout and downstream fitness."""

import numpy as np
import pytest

from irbindiff.errors import ConfigError
from irbindiff.ircorpus import (
    ParseDiagnostics,
    filter_small_functions,
    load_corpus_dir,
    simplify_function,
)
from irbindiff.retrieval import TASK_KINDS, label_pair, pair_matches_task
from irbindiff.synth import BINARY, PROJECT, VARIANTS, generate_corpus


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthcorpus")
    generate_corpus(root, n_groups=6, seed=0)
    return root


@pytest.fixture(scope="module")
def functions(corpus_dir):
    diags = ParseDiagnostics()
    funcs = load_corpus_dir(corpus_dir, diags)
    assert diags.unknown_pred_edges == []
    return funcs


class TestGeneration:
    def test_layout_one_module_per_variant(self, corpus_dir):
        paths = sorted(p.relative_to(corpus_dir)
                       for p in corpus_dir.rglob("*.ll"))
        expected = sorted(
            type(paths[0])(PROJECT) / f"{c}-{v}" / arch / opt / f"{BINARY}.ll"
            for c, v, opt, arch in VARIANTS)
        assert paths == expected

    def test_same_seed_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        paths_a = generate_corpus(a, n_groups=3, seed=9)
        paths_b = generate_corpus(b, n_groups=3, seed=9)
        for pa, pb in zip(paths_a, paths_b):
            assert pa.relative_to(a) == pb.relative_to(b)
            assert pa.read_bytes() == pb.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        paths_a = generate_corpus(a, n_groups=3, seed=9)
        paths_b = generate_corpus(b, n_groups=3, seed=10)
        assert any(pa.read_bytes() != pb.read_bytes()
                   for pa, pb in zip(paths_a, paths_b))

    def test_bad_group_count_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="n_groups"):
            generate_corpus(tmp_path, n_groups=0)


class TestParsedCorpus:
    def test_every_group_appears_in_every_variant(self, functions):
        names = {f.name for f in functions}
        assert names == {f"fn_{g:03d}" for g in range(6)}
        for name in names:
            instances = [f for f in functions if f.name == name]
            assert len(instances) == len(VARIANTS)
            settings = {f.meta.settings() for f in instances}
            assert len(settings) == len(VARIANTS)

    def test_path_metadata_round_trip(self, functions):
        for f in functions:
            assert f.meta.project == PROJECT
            assert f.meta.binary == BINARY
            setting = (f.meta.compiler, f.meta.compiler_version,
                       f.meta.optimization, f.meta.architecture)
            assert setting in VARIANTS

    def test_all_functions_survive_size_filter(self, functions):
        simplified = [simplify_function(f) for f in functions]
        assert len(filter_small_functions(simplified, min_blocks=5)) == \
            len(functions)

    def test_every_cfg_has_edges(self, functions):
        for f in functions:
            assert len(f.cfg.edges) >= len(f.blocks) - 1
            labels = {b.label for b in f.blocks}
            for src, dst in f.cfg.edges:
                assert src in labels and dst in labels

    def test_groups_have_distinct_structure(self, functions):
        # within one compile setting, block counts should not all collapse
        baseline = [f for f in functions
                    if f.meta.settings() == (("gcc", "9"), "O0", "x86")]
        shapes = {(len(f.blocks), len(f.cfg.edges)) for f in baseline}
        assert len(shapes) > 1

    def test_optimized_builds_drop_instructions(self, functions):
        def total_instructions(opt):
            return sum(len(b.instructions)
                       for f in functions
                       for b in simplify_function(f).blocks
                       if f.meta.settings() == (("gcc", "9"), opt, "x86"))

        assert total_instructions("O2") < total_instructions("O0")


class TestVariantTexture:
    def body_text(self, functions, setting):
        picked = [f for f in functions if f.meta.settings() == setting]
        assert picked
        return "\n".join(inst.text
                         for f in picked
                         for b in f.blocks
                         for inst in b.instructions)

    def test_clang_builds_carry_guard_and_sign_extensions(self, functions):
        clang = self.body_text(functions, (("clang", "11"), "O0", "x86"))
        gcc = self.body_text(functions, (("gcc", "9"), "O0", "x86"))
        assert "@stack_chk_guard" in clang
        assert "sext i1" in clang
        assert "@stack_chk_guard" not in gcc
        assert "sext i1" not in gcc

    def test_arm_builds_carry_arm_intrinsics(self, functions):
        arm = self.body_text(functions, (("gcc", "9"), "O0", "arm"))
        x86 = self.body_text(functions, (("gcc", "9"), "O0", "x86"))
        assert "@__arm_" in arm
        assert "@__arm_" not in x86

    def test_arm_builds_gain_spill_blocks(self, functions):
        by_setting = {}
        for f in functions:
            by_setting.setdefault(f.meta.settings(), {})[f.name] = f
        arm = by_setting[(("gcc", "9"), "O0", "arm")]
        x86 = by_setting[(("gcc", "9"), "O0", "x86")]
        assert sum(len(arm[n].blocks) for n in arm) > \
            sum(len(x86[n].blocks) for n in x86)


class TestTaskCoverage:
    def test_single_group_covers_every_task_kind(self, functions):
        group = [f.meta for f in functions if f.name == "fn_000"]
        assert len(group) == len(VARIANTS)
        for kind in TASK_KINDS:
            hits = [(a.settings(), b.settings())
                    for i, a in enumerate(group)
                    for b in group[i + 1:]
                    if pair_matches_task(a, b, kind)]
            assert hits, f"no positive pair for task {kind}"

    def test_positive_pairs_share_identity_across_variants(self, functions):
        group = [f for f in functions if f.name == "fn_001"]
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                assert label_pair(a.meta, b.meta) == 1

    def test_pair_budget_scales_with_groups(self, functions):
        """Every task kind must give at least groups-many positive pairs."""
        metas = [f.meta for f in functions]
        n_groups = len({f.name for f in functions})
        for kind in TASK_KINDS:
            n_pos = sum(1 for i in range(len(metas))
                        for j in range(i + 1, len(metas))
                        if label_pair(metas[i], metas[j])
                        and pair_matches_task(metas[i], metas[j], kind))
            assert n_pos >= n_groups, f"task {kind}: {n_pos} positives"


class TestTokenDrift:
    def test_same_group_differs_across_variants_before_normalization(
            self, functions):
        group = [f for f in functions if f.name == "fn_002"]
        texts = {"\n".join(inst.text for b in f.blocks
                           for inst in b.instructions) for f in group}
        assert len(texts) == len(group)

    def test_instruction_mix_is_plausible(self, functions):
        ops = [inst.text.split()[0] for f in functions for b in f.blocks
               for inst in b.instructions if inst.text]
        counts = {op: ops.count(op) for op in set(ops)}
        assert counts.get("store", 0) > 0
        assert counts.get("br", 0) > 0
        assert sum(v for k, v in counts.items() if k.startswith("%")) > 0
        assert np.mean([len(f.blocks) for f in functions]) >= 5.0
