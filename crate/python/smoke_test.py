"""Smoke test for the mitskit extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/mitskit-*.whl
"""

import json
import math
import tempfile
from pathlib import Path

import mitskit


def check_sample_round_trip():
    s = mitskit.Sample("demo", 1)
    s.add_numeric(0.88, "glucose", 170.0, storetime=0.93)
    s.add_numeric(3.8, "anion_gap", 11.0)
    s.add_text(4.0, "radiology_note", "Portable chest x-ray.", storetime=30.0)
    assert len(s) == 3 and s.validate() == []

    full = mitskit.serialize(s)
    assert full.splitlines()[0] == (
        "<time> 0.88 hours </time> <channel> Glucose (mg/dL) </channel> <value> 170.00 </value>"
    ), full
    assert mitskit.parse(full)[1] == ("3.80", "anion_gap", "11.00")

    redacted = mitskit.serialize(s, "redacted")
    assert "<value>" not in redacted
    assert all(v is None for _, _, v in mitskit.parse(redacted))

    shown = mitskit.parse(mitskit.serialize(s, "pending", countermeasure="show-presence"))
    assert [v is None for _, _, v in shown] == [False, False, True]
    dropped = mitskit.parse(mitskit.serialize(s, "pending"))
    assert len(dropped) == 2

    again = mitskit.Sample.from_json(s.to_json())
    assert mitskit.serialize(again) == full

    system, user, template = mitskit.build_prompt(s, "ihm", "redacted")
    assert template == "ihm_redacted" and redacted in user and system


def check_metrics():
    assert mitskit.auroc([0.9, 0.1, 0.8, 0.2], [True, True, False, False]) == 0.5
    assert mitskit.average_precision([0.9, 0.8, 0.3, 0.2], [True, False, False, True]) == 0.75
    ranks = dict(
        mitskit.average_ranks(
            [("a", "d1", 0.9, 0.5), ("b", "d1", 0.8, 0.6), ("a", "d2", 0.7, 0.4), ("b", "d2", 0.6, 0.3)]
        )
    )
    assert ranks == {"a": 1.25, "b": 1.75}, ranks


def check_class_probs():
    body = {
        "choices": [
            {
                "message": {"role": "assistant", "content": "<answer> B </answer>"},
                "logprobs": {
                    "content": [
                        {"token": "<answer>", "logprob": -0.01, "top_logprobs": []},
                        {
                            "token": " B",
                            "logprob": -0.3,
                            "top_logprobs": [
                                {"token": " B", "logprob": -0.3},
                                {"token": " A", "logprob": -1.6},
                            ],
                        },
                    ]
                },
            }
        ]
    }
    probs = mitskit.class_probs(json.dumps(body))
    expected = 1.0 / (1.0 + math.exp(-1.3))
    assert abs(probs[1] - expected) < 1e-12, probs


def check_synthetic_signal():
    data = mitskit.generate_synth(600, seed=7, intensity_ratio=2.0)
    scores = [mitskit.count_baseline(s) for s in data]
    labels = [s.label == 1 for s in data]
    auc = mitskit.auroc(scores, labels)
    assert auc > 0.75, auc
    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "data.jsonl")
        mitskit.write_dataset(path, data[:5])
        back = mitskit.read_dataset(path)
        assert [s.sample_id for s in back] == [s.sample_id for s in data[:5]]
    return auc


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "pipeline.toml"
        cfg.write_text(
            'out_dir = "out"\ntask = "ihm"\nseed = 1\n'
            'stages = ["generate-synth", "redact", "score", "evaluate"]\n\n'
            "[generate]\nn_samples = 200\n"
        )
        out = Path(mitskit.run_pipeline(str(cfg)))
        assert (out / "report.csv").exists()
    try:
        mitskit.parse("<time> x hours </time>")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed block was accepted")


def main():
    check_sample_round_trip()
    check_metrics()
    check_class_probs()
    auc = check_synthetic_signal()
    check_pipeline()
    print(f"python smoke test passed (synthetic count-baseline AU-ROC {auc:.3f})")


if __name__ == "__main__":
    main()
