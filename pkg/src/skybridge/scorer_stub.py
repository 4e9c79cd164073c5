"""Reference external scorer speaking the newline-delimited JSON protocol.

Reads request lines {"id": k, "instruction": ..., "input": ...} from stdin
(or one TCP connection) and answers {"id": k, "output": ...}. Useful as a
loopback test double and as a template for wiring a real model server.

Modes:
  --table FILE    answer from an SFT JSONL dataset (lookup by input text)
  --constant D    answer a constant digit D for every intersection (default 5)
  --fault-every K produce a malformed output text on every K-th response
"""

from __future__ import annotations

import argparse
import json
import socket
import sys


def _n_actions(request: dict) -> int:
    return len(json.loads(request["input"])["node_weight"])


class Responder:
    def __init__(self, table=None, constant: int = 5, fault_every: int = 0):
        self.table = table or {}
        self.constant = constant
        self.fault_every = fault_every
        self.count = 0

    def respond(self, line: str) -> str:
        req = json.loads(line)
        self.count += 1
        if self.fault_every and self.count % self.fault_every == 0:
            output = "oops not json {"
        else:
            output = self.table.get(req["input"])
            if output is None:
                n = _n_actions(req)
                output = json.dumps({"scores": str(self.constant) * n},
                                    separators=(",", ":"))
        return json.dumps({"id": req["id"], "output": output},
                          separators=(",", ":"))


def load_table(path) -> dict:
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            table[rec["input"]] = rec["output"]
    return table


def serve_stream(rfile, wfile, responder: Responder) -> None:
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        wfile.write(responder.respond(line) + "\n")
        wfile.flush()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--table", help="SFT JSONL dataset to answer from")
    ap.add_argument("--constant", type=int, default=5)
    ap.add_argument("--fault-every", type=int, default=0)
    ap.add_argument("--tcp", type=int, metavar="PORT",
                    help="serve one TCP connection instead of stdio")
    args = ap.parse_args(argv)
    responder = Responder(
        table=load_table(args.table) if args.table else None,
        constant=args.constant, fault_every=args.fault_every,
    )
    if args.tcp is not None:
        srv = socket.create_server(("127.0.0.1", args.tcp))
        conn, _ = srv.accept()
        with conn:
            rfile = conn.makefile("r", encoding="utf-8")
            wfile = conn.makefile("w", encoding="utf-8")
            serve_stream(rfile, wfile, responder)
        srv.close()
    else:
        serve_stream(sys.stdin, sys.stdout, responder)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
