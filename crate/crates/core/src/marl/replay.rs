use std::collections::VecDeque;

use rand::Rng;

use crate::env::ObservationSet;
use crate::error::{Error, Result};

/// One step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<'a> {
    pub observations: &'a [ObservationSet],
    pub state: &'a [f64],
    pub avail: &'a [Vec<bool>],
    pub actions: &'a [usize],
    pub reward: f64,
    /// Last step of the episode, whether by elimination or time limit.
    pub terminal: bool,
}

/// A complete episode of `T` steps. Observations, states and masks hold
/// `T + 1` entries, the last one describing the state after the final step.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub observations: Vec<Vec<ObservationSet>>,
    pub states: Vec<Vec<f64>>,
    pub avail: Vec<Vec<Vec<bool>>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    /// Ended by elimination of a team (absorbing), as opposed to time limit.
    pub terminated: bool,
    pub won: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn transition(&self, t: usize) -> Transition<'_> {
        Transition {
            observations: &self.observations[t],
            state: &self.states[t],
            avail: &self.avail[t],
            actions: &self.actions[t],
            reward: self.rewards[t],
            terminal: t + 1 == self.len(),
        }
    }

    /// Checks lengths and that every recorded action was available.
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t == 0 {
            return Err(Error::Empty("episode"));
        }
        if self.observations.len() != t + 1
            || self.states.len() != t + 1
            || self.avail.len() != t + 1
            || self.actions.len() != t
        {
            return Err(Error::Size("episode arrays have inconsistent lengths".into()));
        }
        for (step, acts) in self.actions.iter().enumerate() {
            for (agent, &a) in acts.iter().enumerate() {
                if !self.avail[step][agent].get(a).copied().unwrap_or(false) {
                    return Err(Error::UnavailableAction { agent, action: a });
                }
            }
        }
        Ok(())
    }
}

/// FIFO store of whole episodes with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    /// `n` episodes drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Episode>> {
        if self.episodes.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        Ok((0..n)
            .map(|_| self.episodes[rng.gen_range(0..self.episodes.len())].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(reward: f64) -> Episode {
        Episode {
            observations: vec![Vec::new(); 2],
            states: vec![Vec::new(); 2],
            avail: vec![vec![vec![true, false]]; 2],
            actions: vec![vec![0]],
            rewards: vec![reward],
            terminated: true,
            won: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2);
        for r in [1.0, 2.0, 3.0] {
            buf.push(tiny(r));
        }
        assert_eq!(buf.len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = buf.sample(50, &mut rng).unwrap();
        assert!(s.iter().all(|e| e.rewards[0] != 1.0));
    }

    #[test]
    fn validation_catches_unavailable_action() {
        let mut e = tiny(0.0);
        e.validate().unwrap();
        e.actions[0][0] = 1;
        assert!(matches!(e.validate(), Err(Error::UnavailableAction { .. })));
        assert!(e.transition(0).terminal);
    }
}
