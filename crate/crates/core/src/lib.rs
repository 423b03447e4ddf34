//! Paging with requests drawn from a known Markov chain: pairwise
//! next-request probabilities, dominating-distribution and median eviction,
//! exact optimal online costs, charging-scheme audits, the three-page lower
//! bound instance and learning the chain from a trace.

pub mod alpha;
pub mod audit;
pub mod chain;
pub mod engine;
pub mod error;
pub mod learn;
pub mod linalg;
pub mod lowerbound;
pub mod lp;
pub mod optdp;
pub mod policies;

pub use alpha::{alpha_pair, alpha_table, gamma, AlphaTable};
pub use chain::{
    build_lb_chain, build_warmup_chain, sample_sequence, validate_chain, MarkovChain,
    RequestSequence,
};
pub use engine::{exact_cost, simulate, CostEstimate};
pub use error::{Error, Result};
pub use optdp::{opt_action, opt_expected_cost, OptTable};
pub use policies::{CacheState, EvictionDistribution, EvictionPolicy, PolicySpec};
