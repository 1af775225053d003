//! Fixtures shared by the benchmarks.

use textloom_core::session::{Session, SessionConfig, Strategy};
use textloom_core::simulate::make_synthetic_dataset;

/// A fresh session over `n` synthetic records with inline training.
pub fn session(n: usize, strategy: Strategy) -> Session {
    let raw = make_synthetic_dataset(n, 7).expect("n is at least 100");
    let config = SessionConfig { background_training: false, strategy, ..SessionConfig::default() };
    Session::create(raw.as_bytes(), config).expect("synthetic corpus is valid")
}

/// Gold label of every record, indexed by record id.
pub fn gold(session: &Session) -> Vec<String> {
    session.corpus().records().iter().map(|r| r.gold_label.clone().unwrap_or_default()).collect()
}
