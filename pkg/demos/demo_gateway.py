"""Drive the monitoring gateway exactly as the console does.

Starts the three-operator demo scenario at 25x speed with the HTTP gateway
attached, polls the summary endpoint while the run progresses, issues a
sampling-period command mid-run and shows the acknowledgment, then prints
where to point a browser or curl for the event stream.
"""

import time

import requests

from fieldlink.gateway import GatewayServer, LiveRunner
from fieldlink.scenario import scenario_live_demo

runner = LiveRunner(scenario_live_demo(duration_s=120), speed=25).start()
server = GatewayServer(runner.provider).start()
print(f"gateway listening on {server.url}")
print(f"  curl {server.url}/operators")
print(f"  curl {server.url}/operators/op-1/history'?after_seq=0&limit=5'")
print(f"  curl -N {server.url}/events        # server-sent event stream\n")

try:
    for _ in range(6):
        time.sleep(0.8)
        snapshot = requests.get(f"{server.url}/operators", timeout=5).json()
        row = "  ".join(
            f"{op['op_id']}:{op['icon']:<5} seq {op['last_seq']:>3}" for op in snapshot["operators"]
        )
        print(f"t+{_:>2}  {row}")

    print("\nsetting op-1 sampling period to 2000 ms through the gateway...")
    reply = requests.post(f"{server.url}/operators/op-1/period", json={"period_ms": 2000}, timeout=30)
    print(f"  HTTP {reply.status_code}: {reply.json()}")

    runner.wait(60)
    sessions = requests.get(f"{server.url}/sessions", timeout=5).json()["sessions"]
    for row in sessions:
        print(f"\nfinal: {row['label']} correct {row['pct_correct']}% realtime {row['pct_realtime']}%")
finally:
    server.close()
