use std::io::Write;

use super::StepOutcome;
use crate::error::{Error, Result};

/// Header line of a trajectory dump. Each following line is one agent's
/// action at one step; `reward` and `terminal` are the team values.
pub const TRAJECTORY_HEADER: &str = "step\tagent_id\taction\treward\tterminal";

pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{TRAJECTORY_HEADER}").map_err(|e| Error::io("trajectory", e))?;
        Ok(TrajectoryWriter { out })
    }

    pub fn record(&mut self, step: usize, actions: &[usize], outcome: &StepOutcome) -> Result<()> {
        for (agent, a) in actions.iter().enumerate() {
            writeln!(
                self.out,
                "{step}\t{agent}\t{a}\t{}\t{}",
                outcome.reward,
                u8::from(outcome.terminal)
            )
            .map_err(|e| Error::io("trajectory", e))?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_per_agent() {
        let mut w = TrajectoryWriter::new(Vec::new()).unwrap();
        let out = StepOutcome {
            reward: 0.5,
            terminal: true,
            won: true,
            timed_out: false,
        };
        w.record(3, &[1, 7], &out).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines, vec![TRAJECTORY_HEADER, "3\t0\t1\t0.5\t1", "3\t1\t7\t0.5\t1"]);
    }
}
