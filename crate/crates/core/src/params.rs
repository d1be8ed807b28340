use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::types::{Time, REQUEST_OVERHEAD};

/// Hash output size in bytes.
pub const BETA: usize = 32;
/// Signature share / combined signature size in bytes.
pub const KAPPA: usize = 48;

pub const MS: Time = 1_000;

/// Protocol-wide configuration shared by every replica.
///
/// Durations are in simulated milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub n: usize,
    pub f: usize,
    /// Parallel-instance window; checkpoints every `k / 2` serials.
    pub k: u64,
    /// Maximum datablock links per BFTblock.
    pub tau: usize,
    /// Requests per datablock.
    pub datablock_batch: usize,
    /// Request body size in bytes. The request size on the wire adds
    /// [`REQUEST_OVERHEAD`].
    pub payload: usize,
    /// Post-GST delivery bound.
    pub delta_ms: u64,
    pub datablock_flush_ms: u64,
    pub propose_flush_ms: u64,
    pub retrieval_timer_ms: u64,
    pub view_change_timer_ms: u64,
    pub client_retry_ms: u64,
    /// At most this many datablocks accepted per generator per simulated second.
    pub rate_limit: Option<u32>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            n: 4,
            f: 1,
            k: 100,
            tau: 100,
            datablock_batch: 2000,
            payload: 128,
            delta_ms: 100,
            datablock_flush_ms: 50,
            propose_flush_ms: 50,
            retrieval_timer_ms: 200,
            view_change_timer_ms: 1_000,
            client_retry_ms: 2_000,
            rate_limit: None,
        }
    }
}

impl ProtocolParams {
    /// Parameters for `n = 3f + 1` replicas with everything else at its default.
    pub fn for_faults(f: usize) -> Self {
        ProtocolParams {
            n: 3 * f + 1,
            f,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.f < 1 || self.n != 3 * self.f + 1 {
            return Err(ConfigError::invalid(
                "params.n",
                format!("n must equal 3f+1 with f >= 1 (got n={}, f={})", self.n, self.f),
            ));
        }
        if self.n > 256 {
            return Err(ConfigError::invalid("params.n", "n must be at most 256"));
        }
        if self.k < 2 || !self.k.is_multiple_of(2) {
            return Err(ConfigError::invalid("params.k", "k must be even and at least 2"));
        }
        for (field, value) in [
            ("params.tau", self.tau as u64),
            ("params.datablock_batch", self.datablock_batch as u64),
            ("params.payload", self.payload as u64),
            ("params.delta_ms", self.delta_ms),
            ("params.datablock_flush_ms", self.datablock_flush_ms),
            ("params.propose_flush_ms", self.propose_flush_ms),
            ("params.retrieval_timer_ms", self.retrieval_timer_ms),
            ("params.view_change_timer_ms", self.view_change_timer_ms),
            ("params.client_retry_ms", self.client_retry_ms),
        ] {
            if value == 0 {
                return Err(ConfigError::invalid(field, "must be positive"));
            }
        }
        if self.rate_limit == Some(0) {
            return Err(ConfigError::invalid("params.rate_limit", "must be positive"));
        }
        Ok(())
    }

    /// Votes needed for a proof: `2f + 1`.
    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn checkpoint_period(&self) -> u64 {
        self.k / 2
    }

    /// Size of one request on the wire.
    pub fn request_size(&self) -> usize {
        self.payload + REQUEST_OVERHEAD
    }

    pub fn delta(&self) -> Time {
        self.delta_ms * MS
    }
}
