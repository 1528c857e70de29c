import numpy as np
import pytest

from landmark_post.class_predict import NO_CLASS, Predictions
from landmark_post.errors import ConfigError, GridTooLargeError
from landmark_post.knn import RankedList
from landmark_post.metrics import map_at_100
from landmark_post.rerank import AdjustmentConfig, PreparedRerank, rerank_lists
from landmark_post.tuner import Grid, grid_search, load_grid, tune_rerank


@pytest.fixture
def inverted():
    """One query whose relevant item is ranked second; its class votes agree."""
    lists = [RankedList("q", ["a", "b"], [0.6, 0.5])]
    qp = Predictions(["q"], [[5, NO_CLASS, NO_CLASS]], [[0.9, 0, 0]])
    ip = Predictions(["a", "b"], [[2, NO_CLASS, NO_CLASS], [5, NO_CLASS, NO_CLASS]],
                     [[0.9, 0, 0], [0.9, 0, 0]])
    return PreparedRerank(lists, qp, ip), {"q": {"b"}}, (lists, qp, ip)


def test_single_point(inverted):
    prepared, truth, _ = inverted
    result = tune_rerank(Grid("map_at_100", {"g11": [0.0]}), prepared, truth)
    assert result.best_params == {"g11": 0.0}
    assert result.best_score == 0.5
    assert len(result.table) == 1


def test_boost_fixes_inversion(inverted):
    prepared, truth, (lists, qp, ip) = inverted
    result = tune_rerank(Grid("map_at_100", {"g11": [0.0, 1.0]}), prepared, truth)
    assert result.best_params == {"g11": 1.0}
    # independent run of the public rerank + metric
    g = np.zeros((3, 3))
    g[0, 0] = 1.0
    out = rerank_lists(lists, qp, ip, AdjustmentConfig(g=g))
    assert map_at_100({rl.query_id: rl.index_ids for rl in out}, truth) == result.best_score == 1.0


def test_tie_returns_first(inverted):
    prepared, truth, _ = inverted
    result = tune_rerank(Grid("map_at_100", {"g11": [2.0, 1.0, 0.0]}), prepared, truth)
    assert result.best_params == {"g11": 2.0}


def test_table_is_cartesian_product_in_order(inverted):
    prepared, truth, _ = inverted
    grid = Grid("map_at_100", {"g11": [0.0, 1.0], "h11": [0.0, 0.5, 1.0],
                               "penalty_condition": ["mismatch", "match"]})
    result = tune_rerank(grid, prepared, truth, threads=4)
    assert len(result.table) == 12
    assert [p for p, _ in result.table] == grid.points()
    assert result.best_score == max(s for _, s in result.table)
    again = tune_rerank(grid, prepared, truth, threads=1)
    assert again.table == result.table


def test_cap():
    with pytest.raises(GridTooLargeError):
        Grid("map_at_100", {"g11": list(range(10)), "g12": list(range(10))}, cap=99)


def test_unknown_param():
    with pytest.raises(ConfigError):
        Grid("map_at_100", {"alpha": [1.0]})


def test_grid_search_generic():
    result = grid_search(Grid("gap", {"beta": [0.0, 1.0, 2.0]}),
                         lambda p: -abs(p["beta"] - 1.0))
    assert result.best_params == {"beta": 1.0}


def test_load_grid(tmp_path):
    (tmp_path / "g.cfg").write_text("[tune]\ntarget = map_at_100\ncap = 20\n\n"
                                    "[rerank]\ng11 = 0, 0.5, 1\npenalty_condition = match, mismatch\n")
    grid = load_grid(tmp_path / "g.cfg")
    assert grid.params == {"g11": [0.0, 0.5, 1.0], "penalty_condition": ["match", "mismatch"]}
    assert grid.cap == 20 and grid.size == 6
    with pytest.raises(ConfigError):
        load_grid(tmp_path / "g.cfg", target="gap")
