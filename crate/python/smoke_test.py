"""Smoke test for the glimmer Python module.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import random

import glimmer

MASK = (1 << 64) - 1


def main():
    assert glimmer.measure(b"glimmer enclave v1").hex() == (
        "38345cfdbddcf572ec2e771bf9228ab703b4b0db16ddf1ea871b1bac8738bf12"
    )

    rng = random.Random(7)
    n, v = 5, 12
    pads = glimmer.gen_pads(1, n, v, bytes(range(32)))
    assert all(sum(col) & MASK == 0 for col in zip(*pads))
    assert glimmer.gen_pads(1, 1, 4, bytes(32)) == [[0, 0, 0, 0]]

    xs = [[rng.randint(0, glimmer.SCALE) for _ in range(v)] for _ in range(n)]
    ys = [glimmer.blind(1, x, p) for x, p in zip(xs, pads)]
    assert glimmer.aggregate_unblind(ys) == [sum(col) for col in zip(*xs)]
    # Client 0 drops out; its pad is revealed.
    assert glimmer.aggregate_unblind(ys[1:], [pads[0]]) == [sum(col) for col in zip(*xs[1:])]

    vocab = 3
    model = glimmer.train_local([0, 1, 0, 1, 0, 2], vocab, "conditional")
    assert model[0 * vocab + 1] == 666_667 and model[0 * vocab + 2] == 333_333
    assert glimmer.predict_next(model, vocab, 0, 2) == [1, 2]

    alice = [0] * 9
    alice[4] = 538 * glimmer.SCALE
    assert glimmer.validate_range(alice) == (False, "out_of_range")
    assert glimmer.validate_range(model) == (True, "ok")

    assert glimmer.audit_message(b"\x00" * 10, 1, bytes(16), bytes(32)) == "BadLength"

    names = [name for name, _ in glimmer.list_scenarios()]
    assert "alice_538" in names and "trending_trump" in names
    run = glimmer.run_scenario("alice_538")
    assert run.violations == 0
    for _, exact, accepted in run.rounds():
        assert exact is True and 1 not in accepted
    assert glimmer.run_scenario("trending_trump").predictions("donald")[0] == "trump"
    assert run.report_jsonl() == glimmer.run_scenario("alice_538").report_jsonl()

    print("glimmer python smoke test: ok")


if __name__ == "__main__":
    main()
