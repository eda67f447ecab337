from __future__ import annotations

import itertools
import math
import subprocess
import sys

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from needsense.errors import (
    CorpusSchemaError,
    DimensionMismatch,
    EmptyCluster,
    EmptySamples,
    InsufficientPoints,
    MissingCell,
    OutOfRange,
    ProviderError,
)
from needsense.evaluation import (
    HashingEmbedder,
    RemoteEmbedder,
    ablation_report,
    assign_cluster,
    avg_sim,
    canonical_relabel,
    evaluate_corpus,
    evaluate_task,
    kmeans,
    likert_percent,
    likert_stats,
    parse_corpus,
    parse_robot_responses,
    proportion_rate,
    segment,
    select_k_elbow,
)
from needsense.evaluation.cluster import ClusterModel, best_of
from needsense.evaluation.corpus import RobotResponse
from needsense.evaluation.report import RENDERERS, table_rows
from needsense.evaluation.text import stack_uniform
from needsense.model import PromptVariant


def blobs(per=3, spread=0.05, seed=0, centres=((0, 0), (10, 0), (0, 10))):
    rng = np.random.default_rng(seed)
    points, labels = [], []
    for i, c in enumerate(centres):
        points.append(np.asarray(c, float) + rng.normal(0, spread, (per, 2)))
        labels += [i] * per
    return np.vstack(points), labels


def same_partition(a, b):
    return {frozenset(np.flatnonzero(np.asarray(a) == c)) for c in set(a)} == \
        {frozenset(np.flatnonzero(np.asarray(b) == c)) for c in set(b)}


# --- brute-force oracles -------------------------------------------------


def partitions(n, k):
    """Every assignment of n items to exactly k unlabeled blocks (restricted growth strings)."""
    def grow(prefix, used):
        if len(prefix) == n:
            if used == k:
                yield list(prefix)
            return
        if used + (n - len(prefix)) < k:
            return
        for b in range(min(used + 1, k)):
            yield from grow(prefix + [b], max(used, b + 1))
    yield from grow([], 0)


def optimal_sse(x, k):
    best = math.inf
    for labels in partitions(len(x), k):
        total = 0.0
        for c in range(k):
            pts = x[[i for i, l in enumerate(labels) if l == c]]
            total += float(((pts - pts.mean(axis=0)) ** 2).sum())
        best = min(best, total)
    return best


def brute_avg_sim(r, members):
    total = 0.0
    for h in members:
        dot = 0.0
        rr = 0.0
        hh = 0.0
        for a, b in zip(r, h):
            dot += a * b
            rr += a * a
            hh += b * b
        total += dot / (math.sqrt(rr) * math.sqrt(hh))
    return total / len(members)


# --- segmentation and embedding -----------------------------------------


@pytest.mark.parametrize("raw, units", [
    ("Bring water; offer a napkin.", ["Bring water", "offer a napkin"]),
    ("", []),
    ("One need only", ["One need only"]),
    ("喝水。休息！", ["喝水", "休息"]),
    (" ..a .. b ", ["a", "b"]),
])
def test_segment(raw, units):
    assert segment(raw) == units


def test_segment_custom_delimiters():
    assert segment("a,b;c", ",") == ["a", "b;c"]


def test_local_embedding_is_deterministic_and_normalized():
    emb = HashingEmbedder()
    a, b = emb.vector("abc"), emb.vector("abc")
    assert np.array_equal(a, b)
    assert a.shape == (384,)
    assert abs(np.linalg.norm(emb.vector("bring the person some water")) - 1.0) < 1e-9


def test_local_embedding_empty():
    with pytest.raises(ProviderError):
        HashingEmbedder().vector("")
    with pytest.raises(ProviderError):
        HashingEmbedder().vector("...")


def test_local_embedding_across_processes():
    code = "from needsense.evaluation import HashingEmbedder; print(HashingEmbedder().vector('warm blanket').tolist())"
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)}
    assert len(outs) == 1
    assert outs.pop().strip() == str(HashingEmbedder().vector("warm blanket").tolist())


def test_remote_embedder():
    seen = []

    def handler(request):
        seen.append(httpx.Response(200, content=request.content).json())
        return httpx.Response(200, json={"data": [{"embedding": [1.0, 0.0]}, {"embedding": [0.0, 1.0]}]})

    emb = RemoteEmbedder("http://embed.test", client=httpx.Client(transport=httpx.MockTransport(handler)))
    out = emb.embed(["a", "b"])
    assert out.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    assert seen[0]["input"] == ["a", "b"]


def test_remote_embedder_errors():
    bad = RemoteEmbedder("http://embed.test", client=httpx.Client(
        transport=httpx.MockTransport(lambda r: httpx.Response(500))))
    with pytest.raises(ProviderError):
        bad.embed(["a"])
    ragged = RemoteEmbedder("http://embed.test", client=httpx.Client(transport=httpx.MockTransport(
        lambda r: httpx.Response(200, json={"data": [{"embedding": [1.0]}, {"embedding": [1.0, 2.0]}]}))))
    with pytest.raises(DimensionMismatch):
        ragged.embed(["a", "b"])


def test_stack_uniform():
    with pytest.raises(DimensionMismatch):
        stack_uniform([[1.0], [1.0, 2.0]])


# --- k-means -------------------------------------------------------------


def test_kmeans_recovers_blobs():
    x, labels = blobs()
    model = kmeans(x, 3, seed=0)
    assert same_partition(model.labels, labels)
    # nearest-centroid oracle: every point sits with its closest centroid
    d = ((x[:, None, :] - model.centroids[None]) ** 2).sum(axis=2)
    assert np.array_equal(d.argmin(axis=1), model.labels)


def test_kmeans_k1_is_global_mean():
    x, _ = blobs()
    model = kmeans(x, 1)
    assert model.sizes() == [len(x)]
    assert np.allclose(model.centroids[0], x.mean(axis=0))


def test_kmeans_too_many_clusters():
    x, _ = blobs()
    with pytest.raises(InsufficientPoints):
        kmeans(x, len(x) + 1)
    with pytest.raises(InsufficientPoints):
        kmeans(x, 0)


def test_kmeans_handles_duplicates():
    x = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]])
    model = kmeans(x, 3, seed=1)
    assert all(s >= 1 for s in model.sizes())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5), n=st.integers(5, 15))
def test_kmeans_sse_non_increasing(seed, k, n):
    x = np.random.default_rng(seed).normal(size=(n, 3))
    model = kmeans(x, k, seed=seed)
    hist = model.sse_history
    assert all(b <= a + 1e-9 * max(1, a) for a, b in zip(hist, hist[1:]))
    assert all(s >= 1 for s in model.sizes())
    assert model.iterations <= 100


@pytest.mark.parametrize("seed", range(4))
def test_kmeans_never_beats_exhaustive_optimum(seed):
    x = np.random.default_rng(seed).normal(size=(9, 2))
    for k in (2, 3):
        assert best_of(x, k, seed, 3).sse >= optimal_sse(x, k) - 1e-9


def test_kmeans_matches_exhaustive_optimum_on_blobs():
    x, _ = blobs(spread=0.3, seed=5)
    assert abs(best_of(x, 3, 0, 3).sse - optimal_sse(x, 3)) < 1e-9


# --- elbow ---------------------------------------------------------------


def test_elbow_three_blobs_matches_oracle_curve():
    x, _ = blobs(spread=0.3, seed=2)
    curve = {k: optimal_sse(x, k) for k in range(2, 7)}
    curvature = {k: curve[k - 1] - 2 * curve[k] + curve[k + 1] for k in range(3, 6)}
    oracle = max(curvature, key=lambda k: (curvature[k], -k))
    assert oracle == 3
    result = select_k_elbow(x, (2, 6))
    assert (result.raw_k, result.k, result.clamped) == (3, 3, False)


def test_elbow_flat_curve_takes_clamp_floor():
    x = np.ones((8, 4))
    result = select_k_elbow(x, (2, 6))
    assert result.k == 3
    assert all(v == 0 for v in result.sse.values())


def test_elbow_single_value_range_is_clamped():
    x, _ = blobs()
    result = select_k_elbow(x, (2, 2))
    assert (result.raw_k, result.k, result.clamped) == (2, 3, True)
    assert "clamped to 3" in result.notice


def test_elbow_range_validation():
    x, _ = blobs()
    for bad in ((1, 4), (4, 3), (2, 10)):
        with pytest.raises(InsufficientPoints):
            select_k_elbow(x, bad)


# --- assignment ----------------------------------------------------------


def model_of(centroids):
    c = np.asarray(centroids, float)
    return ClusterModel(c, np.arange(len(c)), (0.0,), 1)


def test_assign_to_equal_centroid():
    assert assign_cluster([0, 1, 0], model_of([[1, 0, 0], [0, 1, 0], [0, 0, 1]])) == 1


def test_assign_tie_goes_to_lower_id():
    assert assign_cluster([1, 1, 0], model_of([[0, 0, 1], [1, 0, 0], [0, 1, 0]])) == 1


def test_assign_orthogonal_still_assigned():
    assert assign_cluster([0, 0, 1], model_of([[1, 0, 0], [0, 1, 0]])) == 0


def test_canonical_relabel():
    assert canonical_relabel([5, 5, 2, 9, 9, 9], list("abcdef")) == [1, 1, 2, 0, 0, 0]


# --- AvgSim and proportion ---------------------------------------------


def test_avg_sim_examples():
    assert avg_sim([1, 0], [[1, 0], [1, 0]]) == 1.0
    assert avg_sim([1, 0], [[1, 0], [0, 1]]) == 0.5
    assert avg_sim([1, 0], [[0, 1], [0, -2]]) == 0.0
    with pytest.raises(EmptyCluster):
        avg_sim([1, 0], np.zeros((0, 2)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 20), d=st.integers(2, 16))
def test_avg_sim_equals_double_loop(seed, n, d):
    rng = np.random.default_rng(seed)
    r, members = rng.normal(size=d), rng.normal(size=(n, d))
    assert abs(avg_sim(r, members) - brute_avg_sim(r.tolist(), members.tolist())) <= 1e-12


def test_proportion_examples():
    assert proportion_rate(4, 10) == 0.4
    assert proportion_rate(7, 7) == 1.0
    for bad in ((0, 3), (4, 3)):
        with pytest.raises(OutOfRange):
            proportion_rate(*bad)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 20))
def test_proportions_sum_to_one(seed, n):
    x = np.random.default_rng(seed).normal(size=(n, 4))
    model = kmeans(x, 3, seed)
    assert abs(sum(proportion_rate(s, n) for s in model.sizes()) - 1.0) <= 1e-12


# --- Likert --------------------------------------------------------------


@pytest.mark.parametrize("mean, percent", [(6.42, 91.7), (6.15, 87.8), (6.17, 88.1), (7.0, 100.0)])
def test_likert_percent(mean, percent):
    assert likert_percent(mean) == percent


def test_likert_stats():
    stats = likert_stats([7, 7, 7])
    assert (stats.mean, stats.sd, stats.n, stats.percent) == (7.0, 0.0, 3, 100.0)
    assert likert_stats([5]).sd == 0.0
    assert likert_stats([5, 7]).sd == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("bad", [[0], [8], [3.5], [True]])
def test_likert_out_of_range(bad):
    with pytest.raises(OutOfRange):
        likert_stats(bad)


def test_likert_empty():
    with pytest.raises(EmptySamples):
        likert_stats([])


# --- ablation ------------------------------------------------------------

NEED = {"no_atom_no_constraints": 33.2, "atom_no_constraints": 68.7, "no_atom_constraints": 46.4,
        "full_atom_constraints": 72.8}
SOL = {"no_atom_no_constraints": 4.9, "atom_no_constraints": 31.0, "no_atom_constraints": 38.4,
       "full_atom_constraints": 69.6}


def grid_results():
    return {v: {"need_sim": NEED[v], "sol_sim": SOL[v]} for v in NEED}


def test_ablation_deltas():
    report = ablation_report(grid_results())
    assert report.deltas["need_sim"]["atom_removal"] == 26.4
    assert report.deltas["sol_sim"]["atom_removal"] == 31.2
    assert report.deltas["sol_sim"]["constraint_removal"] == 38.6
    assert report.grid("need_sim") == [[33.2, 68.7], [46.4, 72.8]]


def test_ablation_identical_cells():
    same = {v: {"need_sim": 50.0, "sol_sim": 50.0} for v in NEED}
    report = ablation_report(same)
    assert all(d == 0 for per in report.deltas.values() for d in per.values())


def test_ablation_missing_cell():
    partial = grid_results()
    del partial["atom_no_constraints"]
    with pytest.raises(MissingCell):
        ablation_report(partial)
    partial = grid_results()
    del partial["full_atom_constraints"]["sol_sim"]
    with pytest.raises(MissingCell):
        ablation_report(partial)


# --- corpus --------------------------------------------------------------

HEADER = "participant_id,task_id,stage,text,likert\n"


def test_corpus_parse_csv_and_tsv():
    rows = parse_corpus(HEADER + "p1,1,need,Thirsty. Hungry,6\np2,1,execution,,7\n")
    assert [r.stage for r in rows] == ["need", "execution"]
    assert rows[1].likert == 7
    tsv = parse_corpus(HEADER.replace(",", "\t") + "p1\t2\tsolution\tBring water, please\t5\n")
    assert tsv[0].text == "Bring water, please"


def test_corpus_missing_column():
    with pytest.raises(CorpusSchemaError, match="missing column 'likert'"):
        parse_corpus("participant_id,task_id,stage,text\np1,1,need,x\n")


@pytest.mark.parametrize("row, message", [
    ("p1,x,need,a,5", "task_id"),
    ("p1,1,dream,a,5", "stage"),
    ("p1,1,need,a,9", "likert"),
    ("p1,1,need,,", "neither text nor likert"),
])
def test_corpus_errors_carry_line_numbers(row, message):
    text = HEADER + "p0,1,need,fine,4\n" + row + "\n"
    with pytest.raises(CorpusSchemaError, match=message) as info:
        parse_corpus(text)
    assert info.value.line == 3
    assert str(info.value).startswith("line 3:")


def test_robot_responses():
    robots = parse_robot_responses("task_id,stage,text,variant\n1,need,Thirsty,full\n1,need,Thirsty,no_atom_constraints\n")
    assert [r.variant for r in robots] == [PromptVariant.FULL, PromptVariant.NO_ATOM_CONSTRAINTS]
    with pytest.raises(CorpusSchemaError, match="duplicate"):
        parse_robot_responses("task_id,stage,text\n1,need,a\n1,need,b\n")
    with pytest.raises(CorpusSchemaError):
        parse_robot_responses("task_id,stage,text,variant\n1,need,a,sonnet\n")


# --- task evaluation ----------------------------------------------------

UNITS = (["Bring a glass of water"] * 4 + ["Turn on the lamp"] * 3 + ["Fetch a warm blanket"] * 3)


def test_duplicate_robot_unit_scores_one():
    report = evaluate_task(1, "need", UNITS, "Bring a glass of water", HashingEmbedder())
    assert report.k == 3
    assert report.avg_sim == pytest.approx(1.0, abs=1e-12)
    assert report.proportion == 0.4
    assert sum(len(c.members) for c in report.clusters) == report.n == 10


def test_single_cluster_covers_everything():
    report = evaluate_task(10, "need", ["Drink water", "Drink water"], "water", HashingEmbedder())
    assert report.proportion == 1.0


def test_modal_mode_uses_largest_cluster():
    report = evaluate_task(1, "need", UNITS, "Fetch a warm blanket", HashingEmbedder(), mode="modal")
    assert report.assigned_cluster == 0
    assert report.proportion == 0.4
    assert report.avg_sim < 1.0


@settings(max_examples=10, deadline=None)
@given(perm=st.permutations(list(range(10))))
def test_report_is_permutation_invariant(perm):
    texts = ["Bring water", "Offer a drink", "Hand over a cup of water", "Turn on the lamp",
             "More light please", "Switch the lamp on", "Warm blanket", "Cover with a blanket",
             "Close the window", "Get a jacket"]
    base = evaluate_task(3, "need", texts, "Bring a cup of water", HashingEmbedder()).to_dict()
    shuffled = evaluate_task(3, "need", [texts[i] for i in perm], "Bring a cup of water", HashingEmbedder()).to_dict()
    assert base == shuffled


def test_corpus_evaluation_and_rendering():
    lines = [HEADER.strip()]
    for i, unit in enumerate(UNITS):
        lines.append(f"p{i},1,need,{unit},6")
        lines.append(f"p{i},1,solution,{unit},5")
        lines.append(f"p{i},1,execution,,7")
    rows = parse_corpus("\n".join(lines) + "\n")
    robots = [RobotResponse(1, "need", "Bring a glass of water"), RobotResponse(1, "solution", "Turn on the lamp")]
    result = evaluate_corpus(rows, robots, HashingEmbedder(), success={1: (8, 10)})
    row = table_rows(result)[0]
    assert row[:3] == ["1", "100.0%", "40.0%"]
    assert row[5] == "30.0%"
    assert row[7] == "8/10"
    assert table_rows(result)[-1][0] == "Average"
    assert result.ablation is None
    for render in RENDERERS.values():
        assert "Need Similarity" in render(result)
