//! Where trade signs come from for the analytics commands.

use clap::ValueEnum;
use lobtaq_core::classify::{sign_stream, Rule};
use lobtaq_core::l1::{EventType, L1Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignSource {
    /// Signs carried on the trade rows (feed-built streams).
    Stream,
    Quote,
    Tick,
    LeeReady,
}

/// Fills trade signs per `source`; returns how many trades stay unsigned.
pub fn apply(l1: &mut [L1Record], source: SignSource) -> usize {
    let rule = match source {
        SignSource::Stream => {
            return l1
                .iter()
                .filter(|r| r.event_type == EventType::Trade && r.trade_sign.is_none())
                .count()
        }
        SignSource::Quote => Rule::Quote,
        SignSource::Tick => Rule::Tick,
        SignSource::LeeReady => Rule::LeeReady,
    };
    sign_stream(l1, rule)
}
