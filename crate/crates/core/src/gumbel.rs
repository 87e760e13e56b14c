//! Gumbel-softmax sampling with a straight-through hard mode, and the
//! Sinkhorn doubly-stochastic normalization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Bounds of the uniform draw behind each Gumbel sample.
const UNIFORM_LOW: f64 = 1e-10;
const UNIFORM_HIGH: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelConfig {
    /// Temperature; must be positive.
    pub tau: f64,
    /// Emit one-hot rows with the soft sample's gradient.
    pub hard: bool,
    /// No noise: soft mode is a plain tempered softmax and hard mode a pure
    /// argmax with ties going to the lowest index.
    pub deterministic: bool,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            tau: 0.5,
            hard: true,
            deterministic: false,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("gumbel tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Source of Gumbel noise for a forward pass.
pub enum Noise<'a> {
    Off,
    On(&'a mut ChaCha8Rng),
}

impl Noise<'_> {
    pub fn is_off(&self) -> bool {
        matches!(self, Noise::Off)
    }
}

/// One Gumbel(0,1) draw, `−ln(−ln u)` with `u` kept inside (1e-10, 1−1e-10).
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().clamp(UNIFORM_LOW, UNIFORM_HIGH);
    -(-u.ln()).ln()
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gumbel-softmax along the last axis of `logits`. Logits are treated as
/// unnormalized log-probabilities; `−inf` entries are masked out.
pub fn gumbel_softmax(
    tape: &mut Tape,
    logits: Var,
    cfg: &GumbelConfig,
    noise: &mut Noise<'_>,
) -> Result<Var> {
    cfg.validate()?;
    let shape = tape.shape(logits).to_vec();
    let width = *shape.last().expect("tensors have rank >= 1");
    if tape
        .value(logits)
        .chunks(width)
        .any(|row| row.iter().all(|&x| x == f64::NEG_INFINITY))
    {
        return Err(Error::FullyMasked);
    }

    let perturbed = match noise {
        Noise::On(rng) if !cfg.deterministic => {
            let g: Vec<f64> = (0..tape.value(logits).len())
                .map(|_| sample_gumbel(&mut **rng))
                .collect();
            let g = tape.constant(shape.clone(), g)?;
            tape.add(logits, g)?
        }
        _ => logits,
    };
    let scaled = tape.scale(perturbed, 1.0 / cfg.tau);
    let soft = tape.softmax(scaled, shape.len() - 1)?;
    if !cfg.hard {
        return Ok(soft);
    }
    let mut hard = vec![0.0; tape.value(soft).len()];
    for (r, row) in tape.value(scaled).chunks(width).enumerate() {
        hard[r * width + argmax(row)] = 1.0;
    }
    tape.straight_through(hard, soft)
}

/// `exp(logits/τ)` alternately row- and column-normalized `iterations` times.
pub fn sinkhorn_normalize(tape: &mut Tape, logits: Var, iterations: usize, tau: f64) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Shape {
            op: "sinkhorn_normalize",
            lhs: shape.clone(),
            rhs: vec![shape[0], shape[0]],
        });
    }
    if iterations == 0 {
        return Err(Error::Config("sinkhorn needs at least one iteration".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("sinkhorn tau must be positive, got {tau}")));
    }
    // The result is invariant to a global shift, so the max is subtracted as a
    // constant for overflow safety.
    let peak = tape
        .value(logits)
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let shift = tape.constant(vec![1], vec![-peak / tau])?;
    let scaled = tape.scale(logits, 1.0 / tau);
    let shifted = tape.add(scaled, shift)?;
    let mut m = tape.exp(shifted);
    for _ in 0..iterations {
        // rows: normalize the columns of the transpose
        let t = tape.transpose(m)?;
        let row_sums = tape.sum(t, 0)?;
        let t = tape.div(t, row_sums)?;
        m = tape.transpose(t)?;
        let col_sums = tape.sum(m, 0)?;
        m = tape.div(m, col_sums)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;

    fn run(logits: &[f64], cfg: GumbelConfig, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::vector(logits.to_vec()));
        let out = gumbel_softmax(&mut tape, l, &cfg, &mut Noise::On(&mut rng)).unwrap();
        tape.value(out).to_vec()
    }

    #[test]
    fn deterministic_soft_uniform_logits() {
        let cfg = GumbelConfig {
            tau: 1.0,
            hard: false,
            deterministic: true,
        };
        for p in run(&[0.0, 0.0, 0.0], cfg, 0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hard_output_is_one_hot() {
        let cfg = GumbelConfig {
            tau: 0.5,
            hard: true,
            deterministic: false,
        };
        for seed in 0..200 {
            let y = run(&[0.3, -1.0, 2.0, 0.0], cfg, seed);
            assert_eq!(y.iter().sum::<f64>(), 1.0);
            assert_eq!(y.iter().filter(|&&v| v != 0.0).count(), 1);
            assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn deterministic_hard_ties_go_low() {
        let cfg = GumbelConfig {
            tau: 1.0,
            hard: true,
            deterministic: true,
        };
        assert_eq!(run(&[1.0, 3.0, 3.0], cfg, 0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_rows() {
        let cfg = GumbelConfig::default();
        let y = run(&[f64::NEG_INFINITY, 0.5, f64::NEG_INFINITY], cfg, 3);
        assert_eq!(y, vec![0.0, 1.0, 0.0]);

        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::vector(vec![f64::NEG_INFINITY; 2]));
        assert_eq!(
            gumbel_softmax(&mut tape, l, &cfg, &mut Noise::Off).unwrap_err(),
            Error::FullyMasked
        );
    }

    #[test]
    fn rejects_non_positive_tau() {
        let cfg = GumbelConfig {
            tau: 0.0,
            ..GumbelConfig::default()
        };
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(
            gumbel_softmax(&mut tape, l, &cfg, &mut Noise::Off),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sinkhorn_uniform_fixed_point() {
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::zeros(vec![4, 4]));
        let m = sinkhorn_normalize(&mut tape, l, 3, 1.0).unwrap();
        assert!(tape.value(m).iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn sinkhorn_identity_dominant() {
        let n = 4;
        let data = (0..n * n)
            .map(|i| if i / n == i % n { 10.0 } else { 0.0 })
            .collect();
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::new(vec![n, n], data).unwrap());
        let m = sinkhorn_normalize(&mut tape, l, 20, 1.0).unwrap();
        for i in 0..n {
            assert!(tape.value(m)[i * n + i] > 0.99);
        }
    }

    #[test]
    fn sinkhorn_rejects_non_square() {
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::zeros(vec![2, 3]));
        assert!(matches!(
            sinkhorn_normalize(&mut tape, l, 5, 1.0),
            Err(Error::Shape { .. })
        ));
    }
}
