//! Demo assets bundled with the crate: a two-NPC world, a six-instance
//! corpus and a recorded session with its mock script.

pub const WORLD_JSON: &str = include_str!("../data/demo/world.json");
pub const CORPUS_JSON: &str = include_str!("../data/demo/corpus.json");
pub const CORPUS_STATS_GOLDEN_JSON: &str = include_str!("../data/demo/corpus.stats.golden.json");
pub const SESSION_JSON: &str = include_str!("../data/demo/session.json");
pub const SESSION_GOLDEN_JSON: &str = include_str!("../data/demo/session.golden.json");
