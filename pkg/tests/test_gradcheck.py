import pytest

from dualattn import cli
from dualattn import gradcheck as G
from dualattn import tensor as T


@pytest.mark.parametrize("scope", ["primitives", "modules", "losses"])
def test_suite_under_threshold(scope):
    results = G.run(scope)
    assert results
    bad = [r.line() for r in results if not r.ok]
    assert not bad, bad


# tape op names that differ from the public function checked for them
OP_ITEM = {"broadcast": "broadcast_to", "max": "amax", "scatter": "getitem:2nd"}


def test_every_primitive_is_covered():
    names = {item.name for item in G.primitive_items()}
    names |= {n.split("/")[0] for n in names}
    missing = {op for op in T.BACKWARD if OP_ITEM.get(op, op) not in names}
    assert not missing, missing


def test_losses_suite_checks_penalty_with_second_order_tolerance():
    items = {item.name: item for item in G.loss_items()}
    assert items["magp_loss"].second_order
    assert items["magp_loss"].tol == G.SECOND_ORDER_TOL
    assert items["g_adv_loss"].tol == G.FIRST_ORDER_TOL


def test_result_line_format():
    res = G.Result("x", 2e-5, 1e-4, False, "x")
    assert res.ok and res.line().endswith("ok")
    assert not G.Result("y", 2e-3, 1e-3, True, "x").ok


def test_corrupted_backward_rule_is_caught(monkeypatch, capsys):
    original = T.BACKWARD["im2col"]

    def wrong(g, out, ins, attrs, needs):
        return tuple(None if r is None else r * 1.01 for r in original(g, out, ins, attrs, needs))

    monkeypatch.setitem(T.BACKWARD, "im2col", wrong)
    code = cli.main(["gradcheck", "primitives"])
    err = capsys.readouterr().err
    assert code == cli.EXIT_NUMERIC
    assert "conv2d" in err and "im2col" in err


def test_unknown_scope():
    with pytest.raises(ValueError):
        G.run("everything")
