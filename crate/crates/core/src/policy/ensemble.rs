use std::collections::VecDeque;

use super::ActionChunk;

/// Temporal ensembling over overlapping action chunks.
///
/// Every live prediction for the current step is averaged with weight
/// `exp(-m * i)`, where `i = 0` is the oldest prediction. With ensembling off,
/// a fresh chunk is requested only once the previous one is exhausted.
#[derive(Clone, Debug)]
pub struct TemporalEnsembler {
    m: f64,
    enabled: bool,
    t: usize,
    chunks: VecDeque<(usize, ActionChunk)>,
}

impl TemporalEnsembler {
    pub fn new(m: f64, enabled: bool) -> Self {
        Self {
            m,
            enabled,
            t: 0,
            chunks: VecDeque::new(),
        }
    }

    pub fn step(&self) -> usize {
        self.t
    }

    pub fn reset(&mut self) {
        self.t = 0;
        self.chunks.clear();
    }

    /// Whether the policy should be queried before the next [`Self::next_action`].
    pub fn needs_query(&self) -> bool {
        self.enabled || self.live().next().is_none()
    }

    fn live(&self) -> impl Iterator<Item = &(usize, ActionChunk)> {
        let t = self.t;
        self.chunks.iter().filter(move |(s, c)| t >= *s && t < s + c.k)
    }

    /// Record a chunk predicted at the current step.
    pub fn push(&mut self, chunk: ActionChunk) {
        if !self.enabled {
            self.chunks.clear();
        }
        self.chunks.push_back((self.t, chunk));
    }

    /// Weighted action for the current step, then advance. `None` if nothing is live.
    pub fn next_action(&mut self) -> Option<Vec<f64>> {
        let t = self.t;
        let mut acc: Option<Vec<f64>> = None;
        let mut total = 0.0;
        for (i, (s, c)) in self.live().enumerate() {
            let w = (-self.m * i as f64).exp();
            let row = c.row(t - s);
            let a = acc.get_or_insert_with(|| vec![0.0; row.len()]);
            for (x, r) in a.iter_mut().zip(row) {
                *x += w * r;
            }
            total += w;
        }
        self.t += 1;
        let t = self.t;
        self.chunks.retain(|(s, c)| t < s + c.k);
        acc.map(|mut a| {
            a.iter_mut().for_each(|x| *x /= total);
            a
        })
    }
}
