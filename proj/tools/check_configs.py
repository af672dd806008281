#!/usr/bin/env python3
"""Validate experiment configs against schemas/experiment_config.schema.json."""

import json
import pathlib
import sys

import jsonschema

root = pathlib.Path(__file__).resolve().parent.parent
schema = json.loads((root / "schemas/experiment_config.schema.json").read_text())
validator = jsonschema.Draft202012Validator(schema)
paths = [pathlib.Path(p) for p in sys.argv[1:]] or sorted((root / "configs").glob("*.json"))
failed = 0
for path in paths:
    errors = list(validator.iter_errors(json.loads(path.read_text())))
    for e in errors:
        print(f"{path}: {'.'.join(map(str, e.path)) or '<root>'}: {e.message}")
    failed += bool(errors)
print(f"{len(paths) - failed}/{len(paths)} configs valid")
sys.exit(1 if failed else 0)
