"""Smoke test for the ohcsupport Python extension.

Install first:  pip install -e crates/python --no-build-isolation
Run:            python python/smoke_test.py
"""

import os
import tempfile

import ohcsupport as oh


def main():
    synth = oh.synthetic_isr_corpus(n_pairs=600, seed=3)
    corpus, res = synth.corpus, synth.resources()
    train, test = corpus.split(0.8, seed=1, stratify="isr")
    print(f"corpus: {corpus!r}, train {len(train)}, test {len(test)}")

    pipe = oh.Pipeline.train(
        train, "isr", res, width=16, lr=3e-3, batch_size=32, epochs=20,
        baselines=["logistic", "gradient_boosting"],
    )
    rows = pipe.evaluate(test, res)
    for r in rows:
        print(f"{r['model']:<20} acc={r['accuracy']:.3f} auc={r['auc']:.3f}")
    assert rows[0]["model"] == "Fuse-late" and rows[0]["accuracy"] > 0.8

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        pipe.save(path)
        again = oh.Pipeline.load(path)
        assert again.predict(test, res) == pipe.predict(test, res)

    exp = pipe.explain(test, res, background=train, n_background=30, instances=10, n_samples=100)
    print("top features:", exp["ranking"][:3])
    assert "TFIDF_CS" in exp["ranking"][:3]

    m = oh.compute_metrics([0.1, 0.4, 0.35, 0.8], [False, False, True, True])
    assert m["auc"] == 0.75

    phi = oh.shap_exact(lambda rows: [2 * r[0] + r[1] for r in rows], [[0.0, 0.0]], [1.0, 1.0])["phi"]
    assert abs(phi[0] - 2.0) < 1e-12 and abs(phi[1] - 1.0) < 1e-12

    hc, isr = oh.synthetic_helpfulness_corpus(3000, 1.32, seed=0)
    h = oh.helpfulness_analysis(hc, isr)
    j = h["regression"]["names"].index("ISR")
    print(h["table"])
    print(f"OR(ISR) = {h['regression']['odds_ratios'][j]:.3f} on {h['n_matched']} matched pairs")

    assert abs(oh.vif([[1, -1, 1, -1], [1, 1, -1, -1]])[0] - 1.0) < 1e-9
    assert oh.cli_main(["--version"]) == 0
    print("smoke test passed")


if __name__ == "__main__":
    main()
