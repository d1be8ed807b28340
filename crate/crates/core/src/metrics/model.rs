//! Closed-form per-replica communication costs.

use serde::Serialize;

use crate::params::{ProtocolParams, BETA, KAPPA};

/// Sizes in bytes. Every cost below is per byte of confirmed request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostModelInputs {
    pub n: usize,
    /// Bytes per datablock.
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub tau: f64,
    /// Bytes per request.
    pub payload: f64,
}

impl CostModelInputs {
    pub fn new(n: usize, alpha: f64, tau: f64) -> Self {
        CostModelInputs {
            n,
            alpha,
            beta: BETA as f64,
            kappa: KAPPA as f64,
            tau,
            payload: 1.0,
        }
    }

    /// Inputs matching a configuration, with requests at their wire size.
    pub fn from_params(p: &ProtocolParams) -> Self {
        let request = p.request_size() as f64;
        CostModelInputs {
            n: p.n,
            alpha: p.datablock_batch as f64 * request,
            beta: BETA as f64,
            kappa: KAPPA as f64,
            tau: p.tau as f64,
            payload: request,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.n >= 2
            && [self.alpha, self.beta, self.kappa, self.tau, self.payload]
                .iter()
                .all(|x| x.is_finite() && *x > 0.0)
    }

    /// Agreement bytes per linked datablock: one hash plus four vote-sized
    /// legs amortized over the block.
    fn per_link(&self) -> f64 {
        self.beta + 4.0 * self.kappa / self.tau
    }

    fn f(&self) -> usize {
        (self.n - 1) / 3
    }
}

pub fn analytic_leader_cost(i: &CostModelInputs) -> f64 {
    i.per_link() * (i.n - 1) as f64 / i.alpha + 1.0
}

pub fn analytic_replica_cost(i: &CostModelInputs) -> f64 {
    2.0 + i.per_link() / i.alpha
}

pub fn scaling_factor(i: &CostModelInputs) -> f64 {
    analytic_leader_cost(i).max(analytic_replica_cost(i))
}

/// Throughput gained per unit of added per-replica bandwidth.
pub fn scaleup_ratio(i: &CostModelInputs) -> f64 {
    1.0 / scaling_factor(i)
}

/// The same ratio for a protocol whose leader ships every request to all
/// `n - 1` others.
pub fn baseline_scaleup_ratio(n: usize) -> f64 {
    1.0 / (n - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Attack {
    /// Synchronous network, honest leader, `f` selective disseminators.
    Selective,
    /// Asynchronous network: one extra responder per retrieval.
    Asynchronous,
}

/// Worst-case extra cost per replica under a retrieval attack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RetrievalBound {
    /// Ready messages: one hash per datablock.
    pub ready: f64,
    /// Querying, answering and receiving chunks.
    pub retrieval: f64,
}

impl RetrievalBound {
    pub fn total(&self) -> f64 {
        self.ready + self.retrieval
    }
}

/// `(5 / 3α)(α + β(m·log₂n + 3/5))` with `m = f` for the selective case and
/// `m = f + 1` for the asynchronous one. Without faulty generators nothing is
/// ever retrieved and only the Ready term remains.
pub fn retrieval_cost_bounds(i: &CostModelInputs, attack: Attack) -> RetrievalBound {
    let f = i.f();
    let ready = i.beta / i.alpha;
    if f == 0 {
        return RetrievalBound { ready, retrieval: 0.0 };
    }
    let m = match attack {
        Attack::Selective => f,
        Attack::Asynchronous => f + 1,
    } as f64;
    let log_n = (i.n as f64).log2();
    RetrievalBound {
        ready,
        retrieval: 5.0 / 3.0 + 5.0 * i.beta * m * log_n / (3.0 * i.alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn small_cluster_costs() {
        let i = CostModelInputs::new(4, 1280.0, 10.0);
        assert!(close(analytic_leader_cost(&i), 1.12, 1e-12));
        assert!(close(analytic_replica_cost(&i), 2.04, 1e-12));
        assert!(close(scaling_factor(&i), 2.04, 1e-12));
        assert!(close(scaleup_ratio(&i), 1.0 / 2.04, 1e-12));
        assert!(close(scaleup_ratio(&i), 0.490, 5e-4));
    }

    #[test]
    fn large_cluster_costs() {
        let i = CostModelInputs::new(128, 256_000.0, 300.0);
        // (32 + 0.64) * 127 / 256000 + 1
        assert!(close(analytic_leader_cost(&i), 1.0 + 4145.28 / 256_000.0, 1e-12));
        assert!(close(analytic_leader_cost(&i), 1.0162, 1e-4));
        assert!(close(analytic_replica_cost(&i), 2.000_127_5, 1e-9));
        assert!(close(scaling_factor(&i), 2.0001, 1e-4));
        assert!(close(scaleup_ratio(&i), 0.49997, 1e-5));
        assert!(close(baseline_scaleup_ratio(128), 1.0 / 127.0, 1e-15));
        assert!(baseline_scaleup_ratio(128) < 0.0079);
    }

    #[test]
    fn large_alpha_limits() {
        let i = CostModelInputs::new(64, 1e15, 10.0);
        assert!(close(analytic_leader_cost(&i), 1.0, 1e-9));
        assert!(close(analytic_replica_cost(&i), 2.0, 1e-9));
    }

    #[test]
    fn replica_cost_ignores_n() {
        let a = CostModelInputs::new(4, 5000.0, 7.0);
        let b = CostModelInputs::new(301, 5000.0, 7.0);
        assert_eq!(analytic_replica_cost(&a), analytic_replica_cost(&b));
    }

    #[test]
    fn sf_flat_when_alpha_grows_with_n() {
        let sfs: Vec<f64> = [4usize, 16, 64, 256]
            .iter()
            .map(|&n| scaling_factor(&CostModelInputs::new(n, 2000.0 * (n - 1) as f64, 100.0)))
            .collect();
        let lo = sfs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sfs.iter().cloned().fold(0.0, f64::max);
        assert!((hi - lo) / lo < 0.01, "{sfs:?}");
    }

    #[test]
    fn no_faults_leaves_ready_term() {
        let i = CostModelInputs::new(2, 1000.0, 10.0);
        let b = retrieval_cost_bounds(&i, Attack::Selective);
        assert_eq!(b.retrieval, 0.0);
        assert!(close(b.total(), 32.0 / 1000.0, 1e-15));
    }

    #[test]
    fn selective_bound_matches_closed_form() {
        let i = CostModelInputs::new(7, 10_000.0, 10.0);
        let b = retrieval_cost_bounds(&i, Attack::Selective);
        let want = 5.0 / (3.0 * 10_000.0) * (10_000.0 + 32.0 * (2.0 * 7f64.log2() + 0.6));
        assert!(close(b.total(), want, 1e-12));
    }

    proptest! {
        #[test]
        fn asynchronous_bound_dominates(f in 1usize..80, alpha in 1.0f64..1e7, tau in 1.0f64..1000.0) {
            let i = CostModelInputs::new(3 * f + 1, alpha, tau);
            let b = retrieval_cost_bounds(&i, Attack::Selective).total();
            let c = retrieval_cost_bounds(&i, Attack::Asynchronous).total();
            prop_assert!(c >= b);
        }

        #[test]
        fn sf_is_max_of_roles(n in 2usize..600, alpha in 1.0f64..1e7, tau in 1.0f64..1000.0) {
            let i = CostModelInputs::new(n, alpha, tau);
            let sf = scaling_factor(&i);
            prop_assert!(sf >= analytic_leader_cost(&i) && sf >= analytic_replica_cost(&i));
            prop_assert!(sf == analytic_leader_cost(&i) || sf == analytic_replica_cost(&i));
            prop_assert!(sf >= 2.0);
        }
    }
}
