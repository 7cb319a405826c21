//! Bandwidth minimization for token-bucket flows with hard end-to-end
//! deadlines, by jointly choosing per-flow ingress reprofiling delays and
//! per-hop local deadlines under SCED scheduling.

pub mod bandwidth;
pub mod baselines;
pub mod buffers;
pub mod curves;
pub mod greedy;
pub mod netmodel;
pub mod nlp_search;
pub mod scenarios;
pub mod simulator;
