"""Smoke test of the revmem Python bindings."""

import math
import random

import revmem_py as rm


def check_network():
    net = rm.Network.toy([1, 1], width=8, kind="basic", seed=3)
    shape = net.input_shape(2, 6)
    rng = random.Random(0)
    x = [rng.gauss(0.0, 1.0) for _ in range(math.prod(shape))]
    out_shape = net.output_shape(shape)
    dy = [rng.gauss(0.0, 1.0) for _ in range(math.prod(out_shape))]
    dx_rev, grads_rev = net.gradients(x, shape, dy, "reversible")
    dx_sto, grads_sto = net.gradients(x, shape, dy, "stored")
    worst = max(abs(a - b) for a, b in zip(dx_rev, dx_sto))
    for gr, gs in zip(grads_rev, grads_sto):
        worst = max(worst, max(abs(a - b) for a, b in zip(gr, gs)))
    assert worst < 1e-9, worst
    y, ledger = net.forward(x, shape, "reversible")
    assert len(y) == math.prod(out_shape)
    assert ledger["total"] == sum(ledger[k] for k in
                                  ("activations", "weights", "gradients", "optimizer_states", "workspace"))
    stored = net.plan(64, 200, "stored")
    rev = net.plan(64, 200, "reversible")
    assert rev["activations"] < stored["activations"]
    print(f"network: {net!r}, mode gradient gap {worst:.1e}")


def check_registry():
    names = rm.registry_names()
    assert "RevNet46" in names and len(names) == 25
    net = rm.Network(name="RevNet46")
    ref = rm.reference_param_count("RevNet46")
    assert abs(net.param_count / ref - 1.0) < 0.02
    assert rm.gpus_required(256, 31) == 9
    assert rm.gpus_required(256, 297) == 1
    print(f"registry: {len(names)} networks, RevNet46 has {net.param_count} parameters")


def check_quantizer():
    values = rm.dynamic_tree_values()
    assert len(values) == 256 and max(values) == 1.0 and min(values) == -1.0
    rng = random.Random(1)
    data = [rng.gauss(0.0, 1.0) for _ in range(5000)]
    q = rm.QuantizedState(data, 2048)
    back = q.dequantize()
    assert len(q) == 5000 and len(q.absmax) == 3
    assert q.nbytes == 5000 + 4 * 3
    gap = max(b - a for a, b in zip(sorted(set(values)), sorted(set(values))[1:]))
    for i, (a, b) in enumerate(zip(data, back)):
        assert abs(a - b) <= q.absmax[i // 2048] * gap / 2 * (1 + 1e-5)
    again = rm.QuantizedState.from_bytes(q.to_bytes())
    assert again.codes == q.codes
    print(f"quantizer: {q.nbytes} bytes for {len(q)} values")


def check_optimizer_and_scoring():
    opt = rm.Optimizer("sgd", [[1.0]], lr=0.1)
    assert abs(opt.step([[1.0]])[0][0] - 0.9) < 1e-12
    assert abs(opt.step([[1.0]])[0][0] - 0.71) < 1e-12
    assert abs(rm.eer([0.9, 0.8, 0.7], [0.75, 0.3, 0.1]) - 1.0 / 3.0) < 1e-9
    losses = rm.train_toy("adamw", steps=3, seed=0)
    assert len(losses) == 4 and all(math.isfinite(v) for v in losses)
    rows = rm.gradcheck([1, 1], width=8, kind="basic")
    assert all(ok for *_, ok in rows), rows
    try:
        rm.Network(name="NoSuchNet")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown network accepted")
    print(f"optimizer, eer, training and {len(rows)} gradient checks ok")


if __name__ == "__main__":
    check_network()
    check_registry()
    check_quantizer()
    check_optimizer_and_scoring()
    print("smoke test passed")
