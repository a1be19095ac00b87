"""Score a slightly wrong document against a hand-written ground truth.

    python3 demos/score_against_truth.py
"""

import copy
import json
from pathlib import Path

from oops.evaluation import score

TRUTH = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "flask_todo_app.truth.json"


def main() -> None:
    truth = json.loads(TRUTH.read_text())
    print("Scoring the truth against itself:")
    print(score(truth, truth).to_table())

    gen = copy.deepcopy(truth)
    # a generator that missed DELETE, called the path parameter "id" and typed limit as a string
    item = gen["paths"].pop("/todos/{todo_id}")
    del item["delete"]
    item["get"]["parameters"][0]["name"] = "id"
    gen["paths"]["/todos/{id}"] = item
    gen["paths"]["/todos"]["get"]["parameters"][0]["schema"]["type"] = "string"

    print("\nA generated document with three mistakes:")
    print("  - DELETE /todos/{todo_id} is missing")
    print("  - the path parameter is named id (this one costs nothing)")
    print("  - limit is typed string instead of integer")
    print(score(gen, truth).to_table())


if __name__ == "__main__":
    main()
