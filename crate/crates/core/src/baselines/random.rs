use rand::Rng;

use crate::simenv::Observation;
use crate::{IppError, Result};

/// Uniform choice among the affordable neighbors.
pub fn random_policy<R: Rng + ?Sized>(obs: &Observation, rng: &mut R) -> Result<usize> {
    let options = obs.affordable_neighbors();
    if options.is_empty() {
        return Err(IppError::State("no affordable neighbor".into()));
    }
    Ok(options[rng.random_range(0..options.len())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadmap::{AugmentedGraph, Roadmap};
    use crate::GridSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn obs(neighbors: Vec<usize>, affordable: Vec<bool>) -> Observation {
        let roadmap = Roadmap {
            grid: GridSpec::new(2, 2, 1.0).unwrap(),
            nodes: vec![],
            altitude_levels: vec![],
            level: vec![],
            edges: vec![],
            pe: vec![],
            k: 0,
        };
        Observation {
            graph: AugmentedGraph {
                roadmap: Arc::new(roadmap),
                node_mu: vec![],
                node_std: vec![],
                normalized_coords: Arc::new(vec![]),
            },
            current_node: 0,
            neighbors,
            affordable,
            remaining_budget: 1.0,
        }
    }

    #[test]
    fn single_affordable_neighbor() {
        let o = obs(vec![3, 4, 5], vec![false, true, false]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(random_policy(&o, &mut rng).unwrap(), 4);
        }
        assert!(random_policy(&obs(vec![1], vec![false]), &mut rng).is_err());
    }

    #[test]
    fn uniform_frequencies() {
        let o = obs(vec![10, 11, 12, 13], vec![true; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[random_policy(&o, &mut rng).unwrap() - 10] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() <= 0.03, "{counts:?}");
        }
    }

    #[test]
    fn seeded_sequence_repeats() {
        let o = obs(vec![1, 2, 3, 4, 5], vec![true; 5]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..30).map(|_| random_policy(&o, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
    }
}
