"""Follow one sloppy model answer through repair, correction and assembly.

    python3 demos/repair_and_correct.py
"""

import json

from oops.errors import RefError
from oops.oas import upgrade_to_304, validate
from oops.repair import expand_refs, fix_syntax
from oops.synthesis import REQUEST, correct_semantics, rebuild_references

RAW = """Sure! Here is the parameter list:
```json
[
  {"name": "id", "in": "path", "type": "integer"},  // numeric id
  {'name': 'title', 'in': 'body', 'required': true, 'type': 'string', 'minLength': 1},
  {"name": "tags", "in": "body", "type": "array", "items": {"type": "string"},},
]
```"""


def show(title, value):
    print(f"\n== {title}")
    print(value if isinstance(value, str) else json.dumps(value, indent=2))


def main() -> None:
    show("raw model output", RAW)

    value, report = fix_syntax(RAW)
    show(f"after syntax repair (rules: {', '.join(report.applied_rules)})", value)

    try:
        expand_refs({"schema": {"$ref": "#/definitions/Tag"}})
    except RefError as exc:
        show("a dangling reference is reported, not guessed", str(exc))

    params = correct_semantics(value, REQUEST)
    show("after semantic correction (body fields merged)", params)

    draft = {
        "swagger": "2.0",
        "info": {"title": "Demo", "version": "1"},
        "paths": {"/notes/{id}": {"put": {"parameters": params, "responses": {"204": {"description": "saved"}}}}},
    }
    doc = upgrade_to_304(draft)
    show("upgraded to OpenAPI 3.0.4", doc["paths"])

    doc = rebuild_references(doc)
    show("schemas moved to components under content hashes", doc["components"])
    print(f"\nvalidate(): {len(validate(doc))} violations")


if __name__ == "__main__":
    main()
