"""Small election: private ballots, a double-tapped ballot, a verified tally.

Each ballot is a private record — the chain carries a salted commitment per
(poll, voter) key, so observers can verify *that* someone voted and auditors
can verify *what* was recorded, without ballots appearing in any block.
Re-submitting a ballot while the original is still in flight is the classic
client bug; versioning lets exactly one copy through.
"""

from deon.harness import NetConfig, Network

VOTERS = {"ada": "A", "grace": "B", "edsger": "A", "barbara": "A", "donald": "B"}


def main() -> None:
    net = Network(NetConfig(seed=29, trace=True))
    net.run_for(1.5)

    clients = {}
    for name in VOTERS:
        c = net.make_client(name)
        net.call(c.onboard())
        clients[name] = c
    net.run_for(0.5)

    for name, choice in VOTERS.items():
        if name == "ada":
            # ada's app retries before the first copy commits: both are
            # endorsed against the same version, so one must lose
            first = net.sched.spawn(clients[name].cast_vote("city-2026", name, choice))
            net.run_for(0.01)
            dup = net.sched.spawn(clients[name].cast_vote("city-2026", name, choice))
            deadline = net.sched.now() + 30.0
            receipts = [net.sched.run_until_done(f, deadline=deadline) for f in (first, dup)]
            flags = sorted(r["flag"] for r in receipts)
            assert flags == ["mvcc_conflict", "valid"], flags
            winner = next(r for r in receipts if r["flag"] == "valid")
            print(f"{name:8s} voted  (block {winner['block']})")
            print(f"         duplicate submission flagged {flags[0]}, kept off the tally")
        else:
            receipt = net.call(clients[name].cast_vote("city-2026", name, choice))
            print(f"{name:8s} voted  (block {receipt['block']})")
    net.settle()  # receipts resolve on the submitting node; let replicas catch up

    print("\ntally, recounted from any node:")
    tally: dict[str, int] = {}
    for name in VOTERS:
        vote = net.call(clients["grace"].get_vote("city-2026", name))
        assert vote["report"]["commitment_ok"]
        tally[vote["choice"]] = tally.get(vote["choice"], 0) + 1
    for choice in sorted(tally):
        print(f"  {choice}: {tally[choice]}")
    assert tally == {"A": 3, "B": 2}, tally

    report = net.audit()
    print(f"\nfull audit: {'clean' if report.ok else 'FINDINGS'}")
    print("\n".join("  " + line for line in report.summary().splitlines()))


if __name__ == "__main__":
    main()
