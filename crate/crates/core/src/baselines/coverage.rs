use crate::roadmap::Roadmap;
use crate::simenv::IppEnv;
use crate::{IppError, Result};

/// Lawnmower sweep over the nodes at `altitude`: rows of sites in
/// ascending `y`, alternating direction in `x`.
pub fn coverage_sequence(roadmap: &Roadmap, altitude: f64) -> Result<Vec<usize>> {
    let level = roadmap
        .level_index(altitude)
        .ok_or_else(|| IppError::Config(format!("no roadmap level at {altitude} m")))?;
    let r = roadmap.grid.resolution;
    let mut rows: Vec<(i64, Vec<usize>)> = Vec::new();
    let mut nodes: Vec<usize> = (0..roadmap.len()).filter(|&i| roadmap.level[i] == level).collect();
    nodes.sort_by(|&a, &b| {
        let (pa, pb) = (roadmap.nodes[a], roadmap.nodes[b]);
        ((pa[1] / r).floor() as i64)
            .cmp(&((pb[1] / r).floor() as i64))
            .then(pa[0].total_cmp(&pb[0]))
            .then(a.cmp(&b))
    });
    for n in nodes {
        let band = (roadmap.nodes[n][1] / r).floor() as i64;
        match rows.last_mut() {
            Some((b, row)) if *b == band => row.push(n),
            _ => rows.push((band, vec![n])),
        }
    }
    let mut seq = Vec::with_capacity(roadmap.len());
    for (i, (_, mut row)) in rows.into_iter().enumerate() {
        if i % 2 == 1 {
            row.reverse();
        }
        seq.extend(row);
    }
    Ok(seq)
}

/// Executes a precomputed sweep open-loop. When the next waypoint is not an
/// affordable neighbor it heads for the affordable neighbor closest to it;
/// a finished sweep is flown again in reverse.
#[derive(Debug, Clone)]
pub struct CoveragePlanner {
    sequence: Vec<usize>,
    cursor: usize,
}

impl CoveragePlanner {
    pub fn new(roadmap: &Roadmap, altitude: f64) -> Result<Self> {
        Ok(Self { sequence: coverage_sequence(roadmap, altitude)?, cursor: 0 })
    }

    pub fn sequence(&self) -> &[usize] {
        &self.sequence
    }

    pub fn next_action(&mut self, env: &IppEnv) -> Result<usize> {
        let current = env.state().current_node;
        while self.sequence[self.cursor] == current {
            self.advance();
        }
        let target = self.sequence[self.cursor];
        let options = env.affordable_neighbors();
        if options.is_empty() {
            return Err(IppError::State("no affordable neighbor".into()));
        }
        let roadmap = env.roadmap();
        let choice = if options.contains(&target) {
            target
        } else {
            *options
                .iter()
                .min_by(|&&a, &&b| roadmap.distance(a, target).total_cmp(&roadmap.distance(b, target)).then(a.cmp(&b)))
                .expect("non-empty")
        };
        if choice == target {
            self.advance();
        }
        Ok(choice)
    }

    fn advance(&mut self) {
        self.cursor += 1;
        if self.cursor == self.sequence.len() {
            self.sequence.reverse();
            self.cursor = 1.min(self.sequence.len() - 1);
        }
    }
}
