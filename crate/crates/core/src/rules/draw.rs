//! Seeded random choices: card draws, agent assignment, derived seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::POD_SIZE;
use super::error::RulesError;
use super::types::PlayerId;

/// Derives an independent child seed from a parent seed and a stream label.
pub fn derive_seed(parent: u64, stream: &str, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(stream.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws one card uniformly without replacement.
pub fn draw_card(deck: &[String], seed: u64) -> Result<(String, Vec<String>), RulesError> {
    if deck.is_empty() {
        return Err(RulesError::EmptyDeck);
    }
    let idx = rng_for(seed).random_range(0..deck.len());
    let mut rest = deck.to_vec();
    let card = rest.remove(idx);
    Ok((card, rest))
}

/// Picks the covert agent uniformly from a full pod.
pub fn assign_secret_agent(players: &[PlayerId], seed: u64) -> Result<PlayerId, RulesError> {
    if players.len() != POD_SIZE {
        return Err(RulesError::PodSize(players.len()));
    }
    let idx = rng_for(seed).random_range(0..players.len());
    Ok(players[idx].clone())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn deck() -> Vec<String> {
        ["intelligent scholars", "construction workers", "teachers", "tech employees"]
            .map(String::from)
            .to_vec()
    }

    fn pod() -> Vec<PlayerId> {
        (1..=4).map(|i| PlayerId::new(format!("p{i}"))).collect()
    }

    #[test]
    fn forced_draw() {
        let (card, rest) = draw_card(&["teachers".to_string()], 9).unwrap();
        assert_eq!(card, "teachers");
        assert!(rest.is_empty());
    }

    #[test]
    fn draw_is_deterministic() {
        assert_eq!(draw_card(&deck(), 42).unwrap(), draw_card(&deck(), 42).unwrap());
    }

    #[test]
    fn empty_deck_is_an_error() {
        assert_eq!(draw_card(&[], 1), Err(RulesError::EmptyDeck));
    }

    #[test]
    fn three_draws_are_distinct_under_every_seed_prefix() {
        for seed in 0..500u64 {
            let mut remaining = deck();
            let mut seen = BTreeSet::new();
            for round in 0..3 {
                let (card, rest) = draw_card(&remaining, derive_seed(seed, "card", round)).unwrap();
                assert!(deck().contains(&card));
                seen.insert(card);
                remaining = rest;
            }
            assert_eq!(seen.len(), 3);
            assert_eq!(remaining.len(), 1);
        }
    }

    #[test]
    fn agent_assignment_is_deterministic_and_checked() {
        assert_eq!(assign_secret_agent(&pod(), 5).unwrap(), assign_secret_agent(&pod(), 5).unwrap());
        assert_eq!(assign_secret_agent(&pod()[..3], 5), Err(RulesError::PodSize(3)));
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        assert_ne!(derive_seed(1, "card", 0), derive_seed(1, "card", 1));
        assert_ne!(derive_seed(1, "card", 0), derive_seed(1, "agent", 0));
        assert_eq!(derive_seed(1, "card", 0), derive_seed(1, "card", 0));
    }
}
