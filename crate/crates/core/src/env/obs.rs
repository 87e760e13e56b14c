use crate::error::{Error, Result};

/// Rows of equally sized entity feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityGroup {
    width: usize,
    data: Vec<f64>,
}

impl EntityGroup {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(Error::Size(format!(
                "{} values do not form rows of width {width}",
                data.len()
            )));
        }
        Ok(EntityGroup { width, data })
    }

    pub fn from_rows(width: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Size(format!("rows must all have width {width}")));
        }
        Self::new(width, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `P·X` for the permutation matrix with a one at `(j, perm[j])`: output
    /// row `j` is input row `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rows(), "permutation size");
        let mut data = Vec::with_capacity(self.data.len());
        for &src in perm {
            data.extend_from_slice(self.row(src));
        }
        EntityGroup {
            width: self.width,
            data,
        }
    }
}

/// One agent's observation split into own features, the ally group and the
/// enemy group.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub own: Vec<f64>,
    pub allies: EntityGroup,
    pub enemies: EntityGroup,
}

impl ObservationSet {
    pub fn permuted(&self, ally_perm: &[usize], enemy_perm: &[usize]) -> Self {
        ObservationSet {
            own: self.own.clone(),
            allies: self.allies.permuted(ally_perm),
            enemies: self.enemies.permuted(enemy_perm),
        }
    }

    pub fn conforms_to(&self, layout: &ObsLayout) -> bool {
        self.own.len() == layout.own
            && self.allies.width() == layout.entity
            && self.enemies.width() == layout.entity
            && self.allies.rows() == layout.ally_rows
            && self.enemies.rows() == layout.enemy_rows
    }
}

/// Sizes that fix an agent network's input and output layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObsLayout {
    /// Width of the own-feature vector.
    pub own: usize,
    /// Feature width `k` of each entity row.
    pub entity: usize,
    pub ally_rows: usize,
    pub enemy_rows: usize,
    /// Number of entity-independent actions preceding the attack actions.
    pub n_move: usize,
}

impl ObsLayout {
    pub fn n_actions(&self) -> usize {
        self.n_move + self.enemy_rows
    }

    /// Width of the fixed-order concatenation of all features.
    pub fn flat_width(&self) -> usize {
        self.own + (self.ally_rows + self.enemy_rows) * self.entity
    }
}

/// Draws a uniformly random permutation of `0..n` in gather convention.
pub fn random_permutation<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Inverse of a gather-convention permutation.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &src) in perm.iter().enumerate() {
        inv[src] = j;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permuted_rows_follow_gather_convention() {
        let g = EntityGroup::from_rows(2, &[vec![0.0, 0.5], vec![1.0, 1.5], vec![2.0, 2.5]]).unwrap();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.row(0), &[2.0, 2.5]);
        assert_eq!(p.row(1), &[0.0, 0.5]);
        assert_eq!(p.permuted(&invert_permutation(&[2, 0, 1])), g);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(EntityGroup::new(3, vec![0.0; 4]).is_err());
        assert!(EntityGroup::from_rows(2, &[vec![0.0], vec![1.0, 2.0]]).is_err());
    }
}
