"""Reference ROUGE, accuracy, macro-F1, MAE and RMSE from rouge-score and scikit-learn."""
import json
import math
import pathlib

from rouge_score import rouge_scorer
from sklearn.metrics import accuracy_score, f1_score, mean_absolute_error, mean_squared_error

OUT = pathlib.Path(__file__).resolve().parent.parent / "golden" / "metrics.json"

ROUGE_PAIRS = [
    ("a b c", "a b d"),
    ("Same text!", "same text"),
    ("", "nothing here"),
    ("the cat sat on the mat", "the cat was on the mat"),
    ("Police kill the gunman", "the gunman kill police"),
    ("A B a b A", "a a b"),
    ("New iPhone 15 launched; prices up 10%", "iPhone 15 launch: prices rise 10 percent"),
    ("completely unrelated words", "nothing in common"),
    ("x", "x"),
    ("one two three four five six", "six five four three two one"),
    ("Café déjà-vu, naïve résumé", "cafe deja vu naive resume"),
    ("repeat repeat repeat", "repeat"),
]

NONE = "__none__"

CLASSIFICATION = [
    (["a", "b", "a", "c"], ["a", "b", "b", "c"]),
    (["a", None, "b"], ["a", "a", "b"]),
    (["x", "x", "x", "x"], ["x", "y", "z", "x"]),
    ([None, None], ["p", "q"]),
    (["1", "2", "2", "1", "2"], ["1", "2", "1", "1", "1"]),
    (["comedy", "action", "sci-fi", "comedy", None, "romance"], ["comedy", "comedy", "sci-fi", "action", "romance", "violence"]),
    (["t"], ["t"]),
    (["a", "b", "c", "d"], ["d", "c", "b", "a"]),
    (["a", "a", "b", "b", None, "c"], ["a", "b", "b", "b", "c", "c"]),
    (["u", "v", "w"], ["u", "v", "v"]),
]

REGRESSION = [
    ([1, 3], [2, 3]),
    ([5, 5, 5], [1, 2, 3]),
    ([1, 2, 3, 4, 5], [1, 2, 3, 4, 5]),
    ([2, 4, 1, 3], [3, 3, 3, 3]),
    ([1], [5]),
    ([4, 4, 2, 5, 1, 3], [5, 3, 2, 4, 1, 1]),
    ([3, 3], [1, 5]),
    ([1, 1, 1, 5], [2, 2, 2, 2]),
    ([2, 3, 4], [4, 3, 2]),
    ([5, 1, 5, 1], [1, 5, 1, 5]),
]


def main():
    scorer = rouge_scorer.RougeScorer(["rouge1", "rougeL"], use_stemmer=False)
    rouge = []
    for pred, gold in ROUGE_PAIRS:
        s = scorer.score(gold, pred)
        rouge.append({
            "prediction": pred, "gold": gold,
            "rouge1": [s["rouge1"].precision, s["rouge1"].recall, s["rouge1"].fmeasure],
            "rougeL": [s["rougeL"].precision, s["rougeL"].recall, s["rougeL"].fmeasure],
        })

    cls = []
    for pred, gold in CLASSIFICATION:
        labels = sorted(set(gold) | {p for p in pred if p is not None})
        mapped = [NONE if p is None else p for p in pred]
        cls.append({
            "pred": pred, "gold": gold,
            "accuracy": accuracy_score(gold, mapped),
            "macro_f1": f1_score(gold, mapped, labels=labels, average="macro", zero_division=0),
        })

    reg = []
    for pred, gold in REGRESSION:
        reg.append({
            "pred": pred, "gold": gold,
            "mae": mean_absolute_error(gold, pred),
            "rmse": math.sqrt(mean_squared_error(gold, pred)),
        })

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"rouge": rouge, "classification": cls, "regression": reg}, indent=1) + "\n")


if __name__ == "__main__":
    main()
