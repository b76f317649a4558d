"""A substation PMU streams synchrophasor frames to a control centre through
a pair of encrypting proxies keyed from QKD pair keys.

Run:  python3 demos/secure_pmu_link.py
"""
from nqc import qkm
from nqc.channel import frames, pmu, proxy
from nqc.network import config, run

TOML = """
[network]
master_seed = 11
pulses_per_client = 10000000

[hub]
blocking_time = 5.0

[[clients]]
id = 1
name = "substation"

[[clients]]
id = 2
name = "control"
"""

RATE = 30              # frames per second
DURATION = 20.0        # seconds; the fault scenario steps at 10 s
REKEY_FRAMES = 200


def main():
    cfg = config.loads(TOML)
    _, state = run.run_network(cfg, epochs=2)
    hub, sub, ctl = state.hub, state.clients[1], state.clients[2]

    # Both ends build their key feeds from the same records in the same order.
    records = [qkm.publish_pair_key(hub, 1, 2) for _ in range(3)]
    seal_feed = frames.KeyFeed(0, [qkm.derive_from_store(sub, r) for r in records])
    open_feed = frames.KeyFeed(0, [qkm.receive_key(ctl, r) for r in records])
    print(f"{len(records)} pair keys, rekey every {REKEY_FRAMES} frames")

    source = list(pmu.pmu_source(RATE, "fault", duration=DURATION))
    wire = [pmu.encode_pmu(f) for f in source]
    res = proxy.run_loopback(wire, seal_feed, open_feed, rekey_frames=REKEY_FRAMES)

    delivered = res.delivered == b"".join(wire)
    print(f"{len(wire)} frames sent, {res.open.forwarded} delivered, identical: {delivered}")
    print(f"epochs used: {res.seal.epochs}, tag failures: {res.open.tag_failures}")
    rep = res.report()
    print(f"added latency: p50 {rep.p50_us:.0f} us over {rep.count} frames")

    # Decode what arrived and show the voltage step at the fault.
    size = pmu.frame_length(len(source[0].phasors))
    got = [pmu.decode_pmu(res.delivered[i:i + size]) for i in range(0, len(res.delivered), size)]
    t0 = got[0].time
    for f in got[RATE * 10 - 2:RATE * 10 + 2]:
        mag, ang = f.phasors[0]
        print(f"  t={f.time - t0:7.3f} s  |V| {mag:.3f} pu  angle {ang:+.3f} rad")

    # 600 frames at 200 per key used all three keys. A proxy with no key
    # holds and then drops frames rather than sending them in the clear.
    more = proxy.run_loopback(wire[:20], frames.KeyFeed(0), frames.KeyFeed(0))
    print(f"no key left: {more.seal.dropped_no_key} frames dropped, {len(more.delivered)} bytes delivered")


if __name__ == "__main__":
    main()
