"""Command line front end: ``kst serve | demo | inject | trace``.

Exit status is 0 on success, 1 on a runtime failure and 2 on bad usage.
"""

import argparse
import contextlib
import json
import logging
import math
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, client, sidechannel
from .connection import parse_address
from .errors import KSTError
from .kinematics import load_geometry
from .protocol import DEFAULT_PORT, DEFAULT_SIDE_PORT
from .server import SimServer
from .sim import RobotSim

log = logging.getLogger("kstsim")

SIDE_PORT_ENV = "KST_SIDE_PORT"


def _data_file(*parts):
    return str(resources.files("kstsim.data").joinpath(*parts))


def build_parser():
    p = argparse.ArgumentParser(prog="kst", description="Simulated robot controller and toolbox demos.", allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    sp = sub.add_parser("serve", help="run the simulated controller")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=DEFAULT_PORT, help="control port (default %(default)s)")
    sp.add_argument("--side-port", type=int, default=DEFAULT_SIDE_PORT, help="side-channel port (default %(default)s)")
    sp.add_argument("--geometry", help="robot geometry file (.toml or .json)")
    sp.add_argument("--virtual-time", action="store_true", help="advance the clock only on simTick commands")
    sp.add_argument("--trace", help="write one JSON line of robot state per tick to this file")

    dp = sub.add_parser("demo", help="run one of the application demos")
    dsub = dp.add_subparsers(dest="demo", metavar="DEMO")
    dsub.required = True

    def connection_args(q, side=True):
        q.add_argument("--address", help="controller host[:port] (default $KST_ADDRESS or 127.0.0.1)")
        if side:
            q.add_argument("--side-port", type=int, help=f"side-channel port (default ${SIDE_PORT_ENV} or {DEFAULT_SIDE_PORT})")
        q.add_argument("--local", action="store_true", help="start a private virtual-time simulator instead of connecting")

    r = dsub.add_parser("rectangle", help="draw an a x b rectangle with straight flange moves")
    connection_args(r)
    r.add_argument("--origin", type=float, nargs=6, metavar="V", default=[400.0, 0.0, 580.0, -math.pi, 0.0, -math.pi],
                   help="start vertex x y z alpha beta gamma (mm, rad)")
    r.add_argument("--a", type=float, default=100.0, help="side along base x, mm")
    r.add_argument("--b", type=float, default=50.0, help="side along base y, mm")
    r.add_argument("--v", type=float, default=50.0, help="flange speed, mm/s")
    r.add_argument("--trace", help="write traced flange poses (JSONL)")

    t = dsub.add_parser("teach", help="teach points by scripted hand guiding, then replay them")
    connection_args(t)
    t.add_argument("--session", default=_data_file("sessions", "five_points.jsonl"), help="operator session file")
    t.add_argument("--out", default="teach_path.jsonl", help="where to save the taught path")
    t.add_argument("--override", type=float, default=0.25, help="replay override in (0, 1]")
    t.add_argument("--timeout", type=float, default=30.0, help="seconds to wait for a guiding session to end")

    a = dsub.add_parser("avoidance", help="potential-field obstacle avoidance over direct servo")
    connection_args(a, side=False)
    a.add_argument("--scenario", default=_data_file("scenarios", "approach.jsonl"), help="obstacle stream (JSONL)")
    a.add_argument("--rate", type=float, default=300.0, help="command rate, Hz")
    a.add_argument("--duration", type=float, help="run length in s (default: scenario end plus settle time)")
    a.add_argument("--k-att", type=float, default=2.0)
    a.add_argument("--k-rep", type=float, default=1.0e4)
    a.add_argument("--rho0", type=float, default=300.0, help="influence distance, mm")
    a.add_argument("--z-floor", type=float, default=300.0, help="table-top height, mm")
    a.add_argument("--trace", default="avoidance_trace.jsonl", help="trace output (JSONL)")

    ip = sub.add_parser("inject", help="act on the simulated world through the side channel")
    ip.add_argument("--address", help="controller host (default $KST_ADDRESS or 127.0.0.1)")
    ip.add_argument("--side-port", type=int)
    isub = ip.add_subparsers(dest="what", metavar="EVENT")
    isub.required = True
    b = isub.add_parser("button", help="press or release a flange button")
    b.add_argument("button", type=str.upper, choices=["WHITE", "GREEN"])
    b.add_argument("edge", type=str.upper, choices=["PRESS", "RELEASE"])
    pin = isub.add_parser("pin", help="drive an input pin")
    pin.add_argument("pin", type=int, choices=sidechannel.INPUT_PINS)
    pin.add_argument("level", type=int, choices=[0, 1])
    w = isub.add_parser("wrench", help="apply a base-frame wrench at the flange")
    w.add_argument("values", type=float, nargs=6, metavar="V", help="fx fy fz (N) mx my mz (N m)")
    pose = isub.add_parser("pose", help="push the arm toward a configuration while hand guiding")
    pose.add_argument("q", type=float, nargs=7, metavar="Q")
    tick = isub.add_parser("tick", help="advance a virtual-time server")
    tick.add_argument("n", type=int, nargs="?", default=1)
    isub.add_parser("state", help="print the full robot state")

    tp = sub.add_parser("trace", help="pretty-print a JSONL trace or path file")
    tp.add_argument("file")
    tp.add_argument("--every", type=int, default=1, help="print every n-th record")
    return p


# -- helpers -----------------------------------------------------------------


def _side_port(args):
    if getattr(args, "side_port", None) is not None:
        return args.side_port
    return int(os.environ.get(SIDE_PORT_ENV, DEFAULT_SIDE_PORT))


@contextlib.contextmanager
def _connections(args, want_side):
    with contextlib.ExitStack() as stack:
        if args.local:
            srv = stack.enter_context(SimServer(port=0, side_port=0, virtual=True))
            address, side_port = f"127.0.0.1:{srv.port}", srv.side_port
        else:
            address, side_port = args.address, _side_port(args) if want_side else None
        t = client.net_establishConnection(address)
        stack.callback(t.close)
        side = None
        if want_side:
            side = sidechannel.open_side_channel(t.sock.getpeername()[0], side_port)
            stack.callback(side.close)
        yield t, side


def _fmt(values, prec=4):
    return "[" + ", ".join(f"{v:.{prec}f}" for v in values) + "]"


# -- commands ----------------------------------------------------------------


def cmd_serve(args):
    geometry = load_geometry(args.geometry) if args.geometry else None
    srv = SimServer(RobotSim(geometry), host=args.host, port=args.port, side_port=args.side_port,
                    virtual=args.virtual_time, trace_path=args.trace)
    try:
        srv.start()
    except OSError as exc:
        print(f"kst serve: cannot listen: {exc}", file=sys.stderr)
        return 1
    clock = "virtual" if args.virtual_time else "wall-clock"
    print(f"kst {__version__} serving {srv.sim.g.name} on {args.host}:{srv.port} "
          f"(side channel {srv.side_port}, {clock} time)", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.stop()
    print("kst server stopped", flush=True)
    return 0


def cmd_demo(args):
    if args.demo == "rectangle":
        from .demos.rectangle import edge_errors, run_rectangle_demo

        with _connections(args, want_side=True) as (t, side):
            res = run_rectangle_demo(t, args.origin, args.a, args.b, args.v, side=side, trace_path=args.trace)
        for e in edge_errors(res["records"], res["vertices"]):
            print(f"edge {e['edge']}: {e['samples']} samples, max deviation {e['max_deviation']:.2e} mm, "
                  f"corner error {e['corner_error']:.2e} mm")
        print("final pose", _fmt(res["final_pose"]))
        return 0
    if args.demo == "teach":
        from .demos.teach import run_teach_demo

        with _connections(args, want_side=True) as (t, side):
            res = run_teach_demo(t, side, args.session, args.out, args.override, args.timeout)
        print(f"captured {len(res['points'])} points -> {res['path_file']}")
        print("final joints", _fmt(res["final_q"], 6))
        return 0
    from .demos.avoidance import AvoidanceConfig, load_scenario, run_avoidance_demo

    cfg = AvoidanceConfig(k_att=args.k_att, k_rep=args.k_rep, rho0=args.rho0, rate_hz=args.rate, z_floor=args.z_floor)
    samples = load_scenario(args.scenario)
    with _connections(args, want_side=False) as (t, _):
        footer = run_avoidance_demo(t, samples, cfg, trace_path=args.trace, duration=args.duration)
    rho = footer["min_rho"]
    print(f"{footer['cycles']} commands, mean rate {footer['mean_rate_hz']:.1f} Hz, "
          f"p99 gap {footer['p99_gap_ms']:.2f} ms, min distance {'n/a' if rho is None else f'{rho:.1f} mm'}")
    print(f"trace written to {args.trace}")
    return 0


def cmd_inject(args):
    host, _ = parse_address(args.address)
    with sidechannel.open_side_channel(host, _side_port(args)) as s:
        if args.what == "button":
            sidechannel.inject_button(s, args.button, args.edge)
        elif args.what == "pin":
            sidechannel.inject_pin(s, args.pin, args.level)
        elif args.what == "wrench":
            sidechannel.inject_wrench(s, args.values)
        elif args.what == "pose":
            sidechannel.inject_guide_pose(s, args.q)
        elif args.what == "tick":
            print(sidechannel.sim_tick(s, args.n))
        else:
            st = sidechannel.get_state(s)
            for k, v in st.items():
                if isinstance(v, np.ndarray):
                    v = _fmt(v)
                elif hasattr(v, "name"):
                    v = v.name
                print(f"{k:9s} {v}")
    return 0


def _trace_line(rec):
    if rec.get("footer"):
        rate = rec.get("mean_rate_hz")
        rho = rec.get("min_rho")
        return (f"-- {rec.get('cycles')} commands, mean rate {rate:.1f} Hz, p99 gap {rec.get('p99_gap_ms'):.2f} ms, "
                f"min rho {'n/a' if rho is None else f'{rho:.1f} mm'}")
    if "mode" in rec:
        return f"t={rec['t']:9.3f} {rec['mode']:12s} led={rec['led']:7s} q={_fmt(rec['q'])}"
    if "edge" in rec:
        return f"edge {rec['edge']} tick {rec['tick']:7d} pose={_fmt(rec['pose'], 3)}"
    if "rho" in rec:
        rho = rec["rho"]
        rho = "    -   " if rho is None else f"{rho:8.2f}"
        return f"t={rec['stamp']:8.3f} rho={rho} x={_fmt(rec['x_eef'], 2)} q={_fmt(rec['q'])}"
    if "pose" in rec and "q" in rec:
        return f"t={rec['stamp']:8.3f} q={_fmt(rec['q'])} pose={_fmt(rec['pose'], 3)}"
    return json.dumps(rec)


def cmd_trace(args):
    path = Path(args.file)
    if not path.exists():
        print(f"kst trace: {path}: no such file", file=sys.stderr)
        return 1
    with path.open() as f:
        for i, line in enumerate(f):
            if not line.strip():
                continue
            rec = json.loads(line)
            if i % args.every and not rec.get("footer"):
                continue
            print(_trace_line(rec))
    return 0


COMMANDS = {"serve": cmd_serve, "demo": cmd_demo, "inject": cmd_inject, "trace": cmd_trace}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (KSTError, ConnectionError, TimeoutError, OSError, ValueError) as exc:
        print(f"kst {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
