//! Shared fixtures for the benchmarks.

use npcforge::gateway::{BudgetProfile, MockBackend, MockScript};
use npcforge::world::{Session, WorldDefinition};

/// Words the synthetic sentences are drawn from.
pub const VOCAB: &[&str] = &[
    "the", "sword", "gold", "quest", "guild", "goblin", "herb", "price", "dagger", "bow", "rain", "night", "shop",
    "adventurer", "reward", "rank", "forest", "mill", "steel", "light", "heavy", "cheap", "fine", "old", "new", "you",
    "I", "is", "a", "for", "to", "of", "and", "it", "that", "with",
];

/// Joins `VOCAB` entries picked by `picks` (indices taken modulo the vocabulary).
pub fn sentence(picks: impl IntoIterator<Item = usize>) -> String {
    picks
        .into_iter()
        .map(|i| VOCAB[i % VOCAB.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn demo_world() -> WorldDefinition {
    WorldDefinition::from_json(npcforge::demo::WORLD_JSON).expect("demo world parses")
}

/// Fresh merchant session in the demo shop scene.
pub fn merchant_session(world: &WorldDefinition) -> Session {
    let npc = world.npc("merchant-bram").expect("demo npc").clone();
    let scene = world.scene("weapon-shop-night").expect("demo scene");
    Session::new("bench", npc, world.world_state(scene), vec![], BudgetProfile::api_track().id)
}

/// Backend answering one turn: a price lookup then a short reply.
pub fn one_turn_backend() -> MockBackend {
    MockBackend::new(MockScript::from_texts([
        r#"[{"name": "check_price", "parameters": {"item_name": "Long Sword"}}]"#,
        "Three hundred gold, friend.",
    ]))
}
