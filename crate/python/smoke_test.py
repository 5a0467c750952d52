"""Smoke test for the forestbag Python module.

Build and install first:  pip install --no-build-isolation -e crates/python
"""

import json
import pathlib
import sys

import forestbag

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"


def main() -> int:
    forest = forestbag.Forest.load(FIXTURES / "f_med.json")
    assert forest.features == ["A", "B", "C", "Age"], forest.features
    assert forest.classes == ["Pos", "Neg"]
    assert forest.n_trees == 2 and forest.n_rules == 6
    assert forestbag.Forest.from_json(forest.to_json()).to_json() == forest.to_json()

    assert forest.classify(["1", "1", "0", 25]) == "Pos"
    assert forest.classify(["1", "0", "0", 25.0]) is None  # tie
    assert forest.votes(["0", "0", "1", 60]) == [0, 2]
    assert sum(line.startswith("arg ") for line in forest.graph().splitlines()) == 15

    model = forestbag.Model(forest)
    assert model.class_count() == 8
    assert model.exact_summary() == {"equivalence_classes": 8, "ambiguous": 4, "partition_function": 4}
    assert model.query("C=Pos | B=1, Age<=35") == 1.0
    assert model.query("A=0 | C=Neg") == 1.0
    assert model.is_sufficient("B=1, Age<=35", "Pos")
    assert model.is_necessary("A=0", "Neg")
    assert model.necessary_features("Neg") == ["A ∈ {0}", "B ∈ {0}"]
    kept, minimal = model.minimize("A=1, B=1, Age<=35", "Pos")
    assert kept == ["B ∈ {1}", "Age ∈ (-inf, 35]"] and minimal, kept

    report = model.sample(seed=7, samples=20_000, queries=["C=Pos | B=1, Age<=35"])
    assert 0.47 <= report["non_ambiguous"] <= 0.53, report
    (query, p, n), = report["queries"]
    assert p == 1.0 and n > 0
    assert any("'B'=1" in r for r in report["sufficient"]), report["sufficient"]
    assert report["necessary"], report
    assert model.sample(seed=7, samples=5000, workers=2) == model.sample(seed=7, samples=5000, workers=2)

    clause = forestbag.cnf_to_forest("p cnf 3 1\n1 2 3 0\n")
    assert forestbag.count_ambiguous(clause) == 7

    big = forestbag.Model(forestbag.Forest.load(FIXTURES / "forest100.json"), max_exact_classes=1000)
    try:
        big.exact_summary()
    except RuntimeError as e:
        assert "sampler" in str(e)
    else:
        raise AssertionError("cap not enforced")

    code, out, err = forestbag.run_cli(["exact", str(FIXTURES / "f_med.json"), "--format", "json"])
    assert code == 0, err
    assert json.loads(out)["results"]["partition_function"] == 4
    code, _, err = forestbag.run_cli(["inspect", "/nonexistent.json"])
    assert code == 2 and err

    try:
        forestbag.Forest.from_json("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed document accepted")

    print("forestbag", forestbag.__version__, "smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
