"""Run the whole pipeline offline against the bundled nested-router app.

    python3 demos/offline_walkthrough.py

The model is replaced by the recorded transcript, so this needs no API key
and produces the same document every time.
"""

import json
import tempfile
from pathlib import Path

from oops.cli import cmd_report
from oops.pipeline import RunConfig, generate_openapi, make_gateway, write_outputs

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
REPO = FIXTURES / "nested_router_app"
TRANSCRIPT = FIXTURES / "nested_router_app.transcript.jsonl"


def main() -> None:
    print("Repository under analysis:")
    for f in sorted(REPO.rglob("*")):
        if f.is_file():
            print("  ", f.relative_to(REPO))

    config = RunConfig(repo_root=str(REPO), mode="replay", transcript_path=str(TRANSCRIPT))
    doc, report = generate_openapi(REPO, config, make_gateway(config))

    print(f"\nDetected technology: {report.technology.language} / {report.technology.framework}")
    print(f"Files kept by the filter: {report.files_kept} of {report.files_total}")

    graph = report.entries["graph"]
    print("\nDependency edges (handler file -> mounting file):")
    for a, b in graph["edges"]:
        print(f"   {a} -> {b}")

    print("\nEndpoint methods and the files consulted for each:")
    for em in report.entries["endpoints"]:
        print(f"   {em['method']:<6} {em['path']:<10} {' <- '.join(em['ordered_files'])}")

    print("\nRepairs applied to model output:")
    for label, parts in report.repairs.items():
        for kind, rep in parts.items():
            bits = rep["applied_rules"] + (["ref refine x%d" % rep["ref_refine_rounds"]] if rep["ref_refine_rounds"] else [])
            print(f"   {label:<12} {kind:<8} {', '.join(bits) or '-'}")

    with tempfile.TemporaryDirectory() as tmp:
        config.output_path = str(Path(tmp) / "openapi.json")
        out, rp = write_outputs(doc, report, config)
        print(f"\nWrote {out.name} ({len(out.read_bytes())} bytes) and {rp.name}")
        print("\nUsage summary:")
        cmd_report(str(rp))

    print("\nPOST /a/c/f as emitted:")
    print(json.dumps(doc["paths"]["/a/c/f"]["post"], indent=2))


if __name__ == "__main__":
    main()
