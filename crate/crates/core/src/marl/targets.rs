use crate::error::{Error, Result};

/// TD(λ) targets for one episode, computed backward:
/// `G_t = r_t + γ[(1−λ)·V_{t+1} + λ·G_{t+1}]` with `G_T = V_T`.
///
/// `next_values[t]` is the target value of the state after step `t`. When
/// `terminated` is set the episode ended in an absorbing state and the final
/// bootstrap value is taken as 0 whatever `next_values` holds.
pub fn td_lambda_targets(
    rewards: &[f64],
    next_values: &[f64],
    terminated: bool,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let t_len = rewards.len();
    if t_len == 0 {
        return Err(Error::Empty("episode"));
    }
    if next_values.len() != t_len {
        return Err(Error::Size(format!(
            "{} next values for {t_len} rewards",
            next_values.len()
        )));
    }
    let value = |t: usize| {
        if terminated && t == t_len - 1 {
            0.0
        } else {
            next_values[t]
        }
    };
    let mut out = vec![0.0; t_len];
    let mut g_next = value(t_len - 1);
    for t in (0..t_len).rev() {
        let v = value(t);
        let g = rewards[t] + gamma * ((1.0 - lambda) * v + lambda * g_next);
        out[t] = g;
        g_next = g;
    }
    Ok(out)
}
