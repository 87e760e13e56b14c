use rand::Rng;

use crate::error::{Error, Result};

/// Value used in place of unavailable actions' Q-values.
pub const UNAVAILABLE_Q: f64 = -1e10;

/// ε falling linearly from `start` to `finish` over `anneal_steps`, then held.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub finish: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 || step >= self.anneal_steps {
            return self.finish;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.start + (self.finish - self.start) * frac
    }
}

/// Highest-valued available action, lowest index on ties.
pub fn masked_argmax(q: &[f64], avail: &[bool]) -> Result<usize> {
    if q.len() != avail.len() {
        return Err(Error::Size(format!("{} Q-values for {} mask entries", q.len(), avail.len())));
    }
    let mut best: Option<usize> = None;
    for a in (0..q.len()).filter(|&a| avail[a]) {
        if best.is_none_or(|b| q[a] > q[b]) {
            best = Some(a);
        }
    }
    best.ok_or(Error::Empty("available actions"))
}

/// With probability ε a uniformly random available action, otherwise the
/// masked argmax.
pub fn epsilon_greedy_select<R: Rng + ?Sized>(q: &[f64], avail: &[bool], epsilon: f64, rng: &mut R) -> Result<usize> {
    let greedy = masked_argmax(q, avail)?;
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let options: Vec<usize> = (0..avail.len()).filter(|&a| avail[a]).collect();
        return Ok(options[rng.gen_range(0..options.len())]);
    }
    Ok(greedy)
}
