//! Client loads used by the cost experiments.

use leopard_core::simnet::{ClientLoad, Scenario};

/// Open-loop load under which every non-leader fills one datablock per
/// `fill_ms`, sustained for `rounds` datablocks per generator.
///
/// Requests are assigned by hash, so generators fill in near lockstep and
/// confirmations arrive in bursts; measurement windows need many rounds to
/// average over the burst phase.
pub fn steady_load(sc: &mut Scenario, rounds: u64, fill_ms: u64) {
    let n = sc.params.n as u64;
    let per_round = sc.params.datablock_batch as u64 * (n - 1);
    sc.clients = ClientLoad {
        clients: (n - 1) as u32,
        requests: rounds * per_round,
        outstanding: 1,
        rate_per_s: Some(per_round as f64 * 1000.0 / fill_ms as f64),
    };
    // Only full datablocks: the flush timer must outlast a fill.
    sc.params.datablock_flush_ms = sc.params.datablock_flush_ms.max(4 * fill_ms);
    sc.duration_ms = sc.duration_ms.max(rounds * fill_ms * 4 + 60_000);
    sc.gst_ms = 0;
}

/// Closed-loop load keeping `window` requests in flight per client, with
/// client retries pushed out so queueing under a capacity cap does not
/// trigger resubmission.
pub fn saturating_load(sc: &mut Scenario, requests: u64, window: u32) {
    let n = sc.params.n as u32;
    sc.clients = ClientLoad {
        clients: n - 1,
        requests,
        outstanding: window,
        rate_per_s: None,
    };
    sc.params.client_retry_ms = sc.params.client_retry_ms.max(600_000);
    sc.duration_ms = sc.duration_ms.max(3_600_000);
    sc.gst_ms = 0;
}
