"""Line-delimited JSON worker used by the external backend tests.

Modes (first argument):
  echo      answer every request; correct iff instance_seed is even
  reverse   buffer requests and answer each group of four in reverse order
  silent    read requests, never answer
  garbage   answer with a malformed record for the right request id
  crash     exit after the first request
"""
import json
import sys


def answer(req):
    return {"request_id": req["request_id"], "correct": req["instance_seed"] % 2 == 0}


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "echo"
    pending = []
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        if mode == "silent":
            continue
        if mode == "crash":
            sys.exit(1)
        if mode == "garbage":
            print(json.dumps({"request_id": req["request_id"], "correct": "maybe"}), flush=True)
            continue
        if mode == "reverse":
            pending.append(req)
            if len(pending) == 4:
                for r in reversed(pending):
                    print(json.dumps(answer(r)), flush=True)
                pending.clear()
            continue
        print(json.dumps(answer(req)), flush=True)


if __name__ == "__main__":
    main()
