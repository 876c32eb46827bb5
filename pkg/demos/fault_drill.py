"""Kill the consensus leader under load and watch nothing get lost.

One hundred writes are in flight when the leader dies. Clients resubmit the
identical signed envelopes, the transaction ids dedup on every replica, and
after the node returns the three chains are byte-for-byte the same.
"""

from deon.harness import NetConfig, Network


def main() -> None:
    net = Network(NetConfig(seed=47, trace=True, max_block_txs=20))
    net.run_for(1.5)
    clients = []
    for i in range(3):
        c = net.make_client(f"writer{i}")
        net.call(c.onboard())
        clients.append(c)
    net.run_for(0.5)

    leader = net.leader_id()
    print(f"leader is {leader}; submitting 100 writes")
    futs = [net.sched.spawn(clients[i % 3].push(f"drill::{i}", f"v{i}".encode()))
            for i in range(100)]

    while sum(f.done() for f in futs) < 30:
        net.run_for(0.01)
    print(f"{sum(f.done() for f in futs)} committed — killing {leader} now")
    net.kill(leader)

    while not all(f.done() for f in futs):
        net.run_for(0.25)
    flags = [f.result()["flag"] for f in futs if f.exception() is None]
    print(f"all {len(flags)} writes committed, flags: {set(flags)}")
    print(f"new leader: {net.leader_id()}")

    for rt in net.live_nodes():
        seen: dict[str, int] = {}
        for block in rt.peer.blocks:
            for tx, flag in zip(block.txs, block.flags):
                if flag == "valid":
                    seen[tx.tx_id] = seen.get(tx.tx_id, 0) + 1
        dupes = [t for t, n in seen.items() if n > 1]
        print(f"  {rt.node_id}: height {rt.peer.height()}, duplicates: {dupes or 'none'}")

    print(f"restarting {leader}")
    net.restart(leader)
    net.settle(timeout=30.0)
    digests = {rt.node_id: rt.peer.block_stream_digest()[:12] for rt in net.live_nodes()}
    print(f"chain digests: {digests}")
    report = net.audit()
    print(f"audit: {'clean' if report.ok else report.summary()}")


if __name__ == "__main__":
    main()
