"""Shared builders for tests."""
from __future__ import annotations

import random

from smecsim import ran_mac as mac


def random_slot_state(rng: random.Random, max_ues: int = 6):
    """UE uplink states plus request groups for one UL slot, drawn to hit edge cases often."""
    n = rng.randint(1, max_ues)
    ues = []
    groups = {}
    now = rng.randint(0, 5_000_000)
    for uid in rng.sample(range(20), n):
        st = mac.UeUplinkState(uid, efficiency=rng.choice([100, 137, 400, 800, rng.randint(100, 800)]))
        for lcg in (mac.LCG_BE, mac.LCG_LC):
            if rng.random() < 0.7:
                st.mac_backlog[lcg] = rng.choice([0, 1, rng.randint(1, 5_000), rng.randint(1, mac.BSR_CAP)])
        st.sr_pending = rng.random() < 0.25
        st.ewma_throughput = rng.choice([1.0, rng.uniform(1.0, 1e8), 5e6])
        if rng.random() < 0.5:
            glist = []
            for _ in range(rng.randint(1, 3)):
                slo = rng.choice([100_000, 150_000])
                g = mac.RequestGroup(uid, mac.LCG_LC, now - rng.randint(0, 300_000),
                                     rng.randint(1, 100_000), slo)
                if rng.random() < 0.2:
                    g.state = mac.COMPLETE
                glist.append(g)
            groups[(uid, mac.LCG_LC)] = glist
            st.priority = 1
        ues.append(st)
    prbs = rng.choice([1, 4, 10, 80, 217, rng.randint(1, 273)])
    return ues, groups, now, prbs


def drive_edge(manager, rng: random.Random, n_requests: int, interval: int = 8_000,
               net_range=(0, 120_000), base_range=(5_000, 40_000), on_step=None):
    """Feed random arrivals to an edge manager on a small event loop; returns all requests.

    ``on_step(now)`` is called after every lifecycle event so callers can check invariants.
    """
    from smecsim.edge import EdgeRequest
    from smecsim.simcore import Simulator

    sim = Simulator()
    app_ids = sorted(manager.apps)
    reqs = []

    def dispatch():
        for er, svc in manager.dispatch(sim.now):
            sim.schedule(sim.now + svc, "end", end, er)

    def end(er):
        manager.processing_ended(er, sim.now)
        manager.response_sent(er, sim.now)
        dispatch()
        if on_step:
            on_step(sim.now)

    def arrive(i):
        net = rng.randint(*net_range) if rng.random() > 0.05 else None
        er = EdgeRequest(i, rng.choice(app_ids), sim.now, net, rng.randint(*base_range))
        reqs.append(er)
        manager.request_arrived(er, sim.now)
        dispatch()
        if on_step:
            on_step(sim.now)

    t = 0
    for i in range(n_requests):
        t += rng.randint(0, 2 * interval)
        sim.schedule(t, "arrive", arrive, i)
    while len(sim):
        sim.step()
    return reqs
