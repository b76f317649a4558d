"""Three clients share a hub over fibre; the hub turns their QKD keys into
pair keys, a group key and a one-time signature.

Run:  python3 demos/network_keys.py
"""
from nqc import qds, qkm
from nqc._util import Drbg, derive_seed
from nqc.network import config, run

# A small network: 4e6 pulses per client and a 5 us blocking window keep this
# to a few seconds while still leaving several key triples per client.
TOML = """
[network]
master_seed = 11
pulses_per_client = 4000000

[hub]
blocking_time = 5.0

[link]
fiber_length = 25.0

[[clients]]
id = 1
name = "alice"

[[clients]]
id = 2
name = "bob"

[[clients]]
id = 3
name = "charlie"
"""


def fingerprint(key: bytes) -> str:
    return qkm.H(key).hex()[:16]


def main():
    cfg = config.loads(TOML)
    reports, state = run.run_network(cfg, epochs=1)

    print("QKD epoch 0")
    for r in reports:
        print(f"  client {r.client_id}: qber {r.qber:.4f}  sifted {r.sifted}  leaked {r.leaked_bits}"
              f"  final {r.final_bits}  stored {r.stored_bits} bits ({r.status})")

    hub, alice, bob, charlie = state.hub, state.clients[1], state.clients[2], state.clients[3]

    # Alice asks for a key with Bob. The hub publishes P = L_a xor K_b and A = H(K_b || M_a).
    rec = qkm.publish_pair_key(hub, 1, 2)
    k_alice = qkm.derive_from_store(alice, rec)
    k_bob = qkm.receive_key(bob, rec)
    print(f"\npair key 1->2: alice {fingerprint(k_alice)}  bob {fingerprint(k_bob)}")
    assert k_alice == k_bob

    # A flipped bit in P yields a different key, which fails its confirmation hash.
    rec2 = qkm.publish_pair_key(hub, 1, 2)
    bad = qkm.PairKeyRecord(rec2.from_id, rec2.to_id, rec2.epoch, rec2.to_epoch,
                            bytes([rec2.P[0] ^ 1]) + rec2.P[1:], rec2.A)
    try:
        qkm.derive_from_store(alice, bad)
    except qkm.ConfirmationError as exc:
        print(f"tampered record rejected: {exc}")
    qkm.receive_key(bob, rec2)        # Bob still retires the K the hub gave away

    # One group key for all three, wrapped separately for each member.
    records, gid = qkm.publish_group_key(hub, [1, 2, 3], Drbg(derive_seed(cfg.master_seed, "demo-group", 0)))
    stores = {1: alice, 2: bob, 3: charlie}
    group = {qkm.derive_from_store(stores[r.from_id], r) for r in records}
    print(f"group {gid:#x}: {len(group)} distinct key across {len(records)} members")

    # Charlie signs with a fresh K; the hub rebuilds the verification key from
    # its copy and sends it to Alice tagged with Alice's unused M.
    message = b"open breaker 7 at substation 4"
    S = qds.signer_key(charlie, 3)
    sig = qds.sign(message, S)
    V = qds.hub_verification_key(hub, sig.key_id)
    verifier = qds.Verifier(1, alice)
    verifier.receive(qds.distribute_verification(hub, 3, 1, V), expected_key_id=sig.key_id)
    print(f"\nsignature ({len(qds.encode_signature(sig))} bytes) on {message!r}: {verifier.check(message, sig)}")
    forged = message.replace(b"7", b"8")
    print(f"same signature on {forged!r}: {verifier.check(forged, sig)}")

    print("\nremaining triples (hub view):",
          {c: hub.remaining(c, "K") for c in cfg.client_ids})


if __name__ == "__main__":
    main()
