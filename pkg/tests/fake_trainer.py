"""Stand-in trainer for ExternalOracle tests.

Usage: fake_trainer.py MODE. Modes: ok, bad-error, bad-id, crash, garbage,
hang, bad-hello.
"""

import json
import sys
import time

mode = sys.argv[1] if len(sys.argv) > 1 else "ok"

for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "hello":
        proto = 2 if mode == "bad-hello" else 1
        print(json.dumps({"id": req["id"], "protocol": proto}), flush=True)
        continue
    if mode == "crash":
        print("trainer blew up", file=sys.stderr, flush=True)
        sys.exit(3)
    if mode == "garbage":
        print("not json", flush=True)
        continue
    if mode == "hang":
        time.sleep(30)
    rid = req["id"] + 1 if mode == "bad-id" else req["id"]
    err = 0.0 if mode == "bad-error" else 0.5
    print(json.dumps({"id": rid, "error": err, "cost": req["ratio"]}), flush=True)
