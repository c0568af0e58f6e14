"""Smoke test for the fclpy extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/fclpy-*.whl
"""

import fclpy


def main():
    spec = fclpy.LossSpec("fcl", gamma=3.0, lam=0.5)
    print(spec)
    print("loss", fclpy.eval_loss(spec, [0.7, 0.3], [1.0, 0.0]))

    perfect = fclpy.PredictionSet.from_probs([[1.0, 0.0], [0.0, 1.0]], [0, 1])
    assert fclpy.ece(perfect) == 0.0
    assert fclpy.smce(perfect)["value"] == 0.0

    assert fclpy.sigma_root(0.0, 1.0) == 0.5
    m = fclpy.minimize_risk(fclpy.LossSpec("brier"), [0.6, 0.3, 0.1])
    print("brier minimizer", m["q_star"])

    pts = fclpy.gen_moons(300, 0.2, 1)
    model, hist = fclpy.train(pts, spec, epochs=200)
    first, last = hist["epochs"][0], hist["epochs"][-1]
    print("train loss %.4f -> %.4f, test ece %.4f" % (first["train_loss"], last["train_loss"], last["test_ece"]))
    assert last["train_loss"] < first["train_loss"]

    probs = fclpy.predict(model, [(x0, x1) for x0, x1, _ in pts])
    s = fclpy.PredictionSet.from_probs(probs, [y for _, _, y in pts])
    report = fclpy.metric_report(s)
    print("ece %.4f  nll %.4f  error %.4f" % (report["ece"], report["nll"], report["error"]))
    print("ok")


if __name__ == "__main__":
    main()
