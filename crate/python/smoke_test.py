"""Smoke test for the emodetect Python extension.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import math
import tempfile
from pathlib import Path

import emodetect

EMOTIONS = ["anger", "fear", "joy", "sadness", "surprise"]


def check_prompts():
    prompts = emodetect.render_prompts(EMOTIONS, "b", "base", "A penny hit me square in the face.",
                                       {"anger": 2, "sadness": 1, "fear": 0, "joy": 0, "surprise": 0})
    assert prompts[0]["assistant"] == "moderate degree of anger, low degree of sadness"
    assert "with three levels of intensity" in prompts[0]["system"]
    pairwise = emodetect.render_prompts(EMOTIONS, "a", "pairwise", "I could not unbend my knees.")
    assert [p["target_label"] for p in pairwise] == EMOTIONS
    assert all(p["assistant"] is None for p in pairwise)
    parsed = emodetect.parse_completion("Moderate degree of anger", EMOTIONS, "b", "base")
    assert parsed["anger"] == 2 and parsed["joy"] == 0
    assert len(emodetect.template_hash()) == 64


def check_metrics():
    gold = [("s0", {"l1": 1, "l2": 0}), ("s1", {"l1": 1, "l2": 1}), ("s2", {"l1": 0, "l2": 0}), ("s3", {"l1": 0, "l2": 1})]
    pred = [("s0", {"l1": 1, "l2": 0}), ("s1", {"l1": 0, "l2": 1}), ("s2", {"l1": 0, "l2": 1}), ("s3", {"l1": 0, "l2": 1})]
    report = emodetect.macro_f1(pred, gold, ["l1", "l2"])
    assert abs(report["aggregate"] - 11 / 15) < 1e-12
    g = [(f"s{i}", {"joy": v}) for i, v in enumerate([0, 1, 2, 3])]
    p = [(f"s{i}", {"joy": v}) for i, v in enumerate([0, 2, 2, 2])]
    r = emodetect.pearson_score(p, g, ["joy"])["aggregate"]
    assert abs(r - math.sqrt(0.6)) < 1e-12
    prob = emodetect.pairwise_yes_probability([("yes", math.log(0.9)), ("no", math.log(0.1))])
    assert abs(prob - 0.9) < 1e-12


def check_pipeline():
    d = emodetect.Dataset.synthetic(60, ["eng", "amh"], "b", 3)
    assert len(d) == 60 and d.langs == ["amh", "eng"]
    train, dev = d.split(0.1, 7)
    assert len(dev) == 6 and len(train) == 54
    golds = d.golds()
    for strategy in ("base", "pairwise"):
        preds = d.infer_echo(strategy, 4)
        assert preds == golds
    eng = d.language("eng")
    r = emodetect.pearson_score(eng.infer_echo("base"), eng.golds(), eng.labels)
    assert r["aggregate"] == 1.0
    hist = emodetect.improvement_distribution(golds, golds, golds, d.labels, "b")
    assert sum(sum(c) for c in hist.values()) == 60
    with tempfile.TemporaryDirectory() as tmp:
        n = eng.export_instructions(Path(tmp) / "eng.jsonl", "pairwise")
        assert n == 30 * 5


def check_head():
    d = emodetect.Dataset.synthetic(80, ["eng"], "a", 1)
    train, dev = d.split(0.25, 0)
    head = emodetect.Head.train(train, dev, feature_dim=64, epochs=2)
    assert len(head.history) == 2
    assert len(head.probabilities("some sentence")) == len(d.labels)
    assert len(head.predict(dev)) == len(dev)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "head.json"
        head.save(path)
        assert emodetect.Head.load(path).history == head.history
    try:
        emodetect.render_system(["Anger"], "a")
    except emodetect.EmodetectError:
        pass
    else:
        raise AssertionError("uppercase label accepted")


if __name__ == "__main__":
    check_prompts()
    check_metrics()
    check_pipeline()
    check_head()
    print("python smoke test passed")
