import numpy as np
import pytest

from otsforge.errors import NoCandidates
from otsforge.fitting import FitConfig
from otsforge.funcimg import RenderConfig, render
from otsforge.search import (
    CandidateSource,
    enumerate_candidates,
    load_candidates_file,
    solve,
)
from otsforge.tree import build_tree, decode_structure, encode_bfs, is_reconstructable
from otsforge.vocab import lookup


def oracle_count(vocab, max_nodes, n_vars=1):
    """Brute-force census of constraint-satisfying trees, written as direct
    top-down tree construction (independent of the production enumerator)."""
    leaves = [lookup(vocab, f"x{i}") for i in range(n_vars)] + [lookup(vocab, "C")]
    unary = list(vocab.by_arity(1))
    binary = list(vocab.by_arity(2))

    def count_trees(size, parent, unary_chain, same_run, used):
        def ok(spec):
            if parent is not None and (
                spec.name in parent.forbidden_adjacent or parent.name in spec.forbidden_adjacent
            ):
                return False
            if spec.max_count is not None and used.get(spec.name, 0) >= spec.max_count:
                return False
            if spec.arity == 1:
                if unary_chain >= 3:
                    return False
                if (
                    spec.max_consecutive is not None
                    and parent is not None
                    and parent.name == spec.name
                    and same_run >= spec.max_consecutive
                ):
                    return False
            return True

        if size == 1:
            return [{spec.name: 1} for spec in leaves if ok(spec)]
        results = []
        for spec in unary:
            if not ok(spec):
                continue
            run = same_run + 1 if parent is not None and parent.name == spec.name else 1
            bumped = dict(used)
            bumped[spec.name] = bumped.get(spec.name, 0) + 1
            for sub in count_trees(size - 1, spec, unary_chain + 1, run, bumped):
                merged = dict(sub)
                merged[spec.name] = merged.get(spec.name, 0) + 1
                results.append(merged)
        for spec in binary:
            if not ok(spec) or size < 3:
                continue
            bumped = dict(used)
            bumped[spec.name] = bumped.get(spec.name, 0) + 1
            if spec.name == "pow":
                for left in count_trees(size - 2, spec, 0, 0, bumped):
                    merged = dict(left)
                    merged[spec.name] = merged.get(spec.name, 0) + 1
                    merged["C"] = merged.get("C", 0) + 1
                    results.append(merged)
                continue
            for left_size in range(1, size - 1):
                for left in count_trees(left_size, spec, 0, 0, bumped):
                    after_left = dict(bumped)
                    for name, n in left.items():
                        after_left[name] = after_left.get(name, 0) + n
                    for right in count_trees(size - 1 - left_size, spec, 0, 0, after_left):
                        merged = dict(left)
                        for name, n in right.items():
                            merged[name] = merged.get(name, 0) + n
                        merged[spec.name] = merged.get(spec.name, 0) + 1
                        results.append(merged)
        return results

    return sum(len(count_trees(size, None, 0, 0, {})) for size in range(1, max_nodes + 1))


def test_single_node_candidates(vocab):
    cands = list(enumerate_candidates(1, vocab, n_vars=1))
    names = {lookup(vocab, c[0]).name for c in cands}
    assert names == {"x0", "C"}


def test_budget_three_count_matches_bruteforce_oracle(vocab):
    produced = len(list(enumerate_candidates(3, vocab, limit=10**6, n_vars=1)))
    assert produced == oracle_count(vocab, 3, n_vars=1)


def test_budget_four_count_matches_bruteforce_oracle(vocab):
    produced = len(list(enumerate_candidates(4, vocab, limit=10**6, n_vars=2)))
    assert produced == oracle_count(vocab, 4, n_vars=2)


def test_all_emitted_reconstructable_and_ordered(vocab):
    cands = list(enumerate_candidates(3, vocab, limit=10**6, n_vars=1))
    assert all(is_reconstructable(c, vocab) for c in cands)
    sizes = [sum(1 for t in c if t != 0) for c in cands]
    assert sizes == sorted(sizes)
    # lexicographic within a size class
    by_size = {}
    for c, s in zip(cands, sizes):
        by_size.setdefault(s, []).append(c)
    for group in by_size.values():
        assert group == sorted(group)


def test_enumeration_respects_limit(vocab):
    cands = list(enumerate_candidates(3, vocab, limit=7, n_vars=1))
    assert len(cands) == 7


def test_enumeration_rejects_large_budget(vocab):
    with pytest.raises(ValueError):
        list(enumerate_candidates(8, vocab))


def test_solve_recovers_target_from_small_enumeration(vocab):
    tree = build_tree(vocab, ("sin", ("mul", "x0", ("C", [1.5]))))
    img = render(tree, RenderConfig(n_vars=1, resolution=32), vocab=vocab)
    solutions, diag = solve(
        img,
        CandidateSource("enumerate", node_budget=4, n_vars=1),
        k=3,
        fit_cfg=FitConfig(seed=9, restarts=2, max_iters=60),
    )
    assert solutions[0].fit.final_mse < 1e-10
    assert diag.n_candidates > 2000


def test_solve_truncates_to_survivors(vocab):
    tree = build_tree(vocab, "x0")
    img = render(tree, RenderConfig(n_vars=1, resolution=16), vocab=vocab)
    solutions, _ = solve(
        img,
        CandidateSource("enumerate", node_budget=1, n_vars=1),
        k=10,
        fit_cfg=FitConfig(seed=1),
    )
    # C-only candidate yields a flat rendering but still fits; both leaves survive
    assert 1 <= len(solutions) <= 2


def test_file_source_true_ots_ranks_first(tmp_path, vocab):
    target_tree = build_tree(vocab, ("L", [1.4, -0.2], ("sin", ("mul", "x0", ("C", [1.3])))))
    img = render(target_tree, RenderConfig(n_vars=1, resolution=32), vocab=vocab)
    true_ots, _ = encode_bfs(target_tree, vocab)
    distractors = [
        ("cos", "x0"),
        ("exp", "x0"),
        ("mul", "x0", "x0"),
        ("add", "x0", ("C", [0.0])),
        ("log", ("abs", "x0")),
        ("sqrt", ("abs", "x0")),
        ("tan", "x0"),
        ("div", ("C", [0.0]), "x0"),
        ("sub", "x0", "x1"),
    ]
    lines = [",".join(map(str, true_ots))]
    for spec in distractors:
        ots, _ = encode_bfs(build_tree(vocab, spec), vocab)
        lines.append(",".join(map(str, ots)))
    path = tmp_path / "candidates.txt"
    path.write_text("\n".join(lines) + "\n")
    assert len(load_candidates_file(path)) == 10

    solutions, diag = solve(
        img,
        CandidateSource("file", path=str(path), n_vars=2),
        k=3,
        fit_cfg=FitConfig(seed=3, restarts=3),
    )
    assert solutions[0].ots == true_ots
    assert solutions[0].fit.final_mse < 1e-8
    assert solutions[0].rank == 1


def test_exact_tie_broken_by_parsimony(tmp_path, vocab):
    # on a positive-only scale abs(x0) equals x0 exactly: identical MSE,
    # shorter OTS must win
    target = build_tree(vocab, "x0")
    img = render(target, RenderConfig(scales=((0.1, 1.0),), resolution=16, n_vars=1), vocab=vocab)
    x0_ots, _ = encode_bfs(build_tree(vocab, "x0"), vocab)
    abs_ots, _ = encode_bfs(build_tree(vocab, ("abs", "x0")), vocab)
    path = tmp_path / "cands.txt"
    path.write_text("\n".join([",".join(map(str, abs_ots)), ",".join(map(str, x0_ots))]))
    solutions, _ = solve(img, CandidateSource("file", path=str(path)), k=2,
                         fit_cfg=FitConfig(seed=1))
    assert solutions[0].fit.final_mse == solutions[1].fit.final_mse == 0.0
    assert solutions[0].ots == x0_ots


def test_no_candidates_error(tmp_path, vocab):
    target = build_tree(vocab, "x0")
    img = render(target, RenderConfig(n_vars=1, resolution=8), vocab=vocab)
    path = tmp_path / "empty.txt"
    path.write_text("# nothing\n")
    with pytest.raises(NoCandidates):
        solve(img, CandidateSource("file", path=str(path)), k=1, fit_cfg=FitConfig(seed=1))


def test_prescreen_matches_full_rank1(vocab):
    tree = build_tree(vocab, ("sin", ("mul", "x0", ("C", [1.5]))))
    img = render(tree, RenderConfig(n_vars=1, resolution=32), vocab=vocab)
    source = CandidateSource("enumerate", node_budget=3, n_vars=1)
    full, _ = solve(img, source, k=1, fit_cfg=FitConfig(seed=9, restarts=2))
    screened, diag = solve(img, source, k=1, fit_cfg=FitConfig(seed=9, restarts=2), prescreen=40)
    assert diag.prescreen_kept == 40
    assert screened[0].fit.final_mse < 1e-10
    assert screened[0].fit.final_mse <= full[0].fit.final_mse + 1e-12
