use crate::error::{BsdeError, Result};
use crate::tree::BinomialTree;

/// Per-node values of a fixed shape (`rows × cols`, row-major) on a contiguous range of tree levels.
///
/// A scalar field has shape 1×1, an ℝ^d field d×1, a Z field d×k and a matrix field d×d.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedField {
    rows: usize,
    cols: usize,
    first: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedField {
    /// Zero field on levels `first..=last` of `tree`.
    pub fn zeros(tree: &BinomialTree, rows: usize, cols: usize, first: usize, last: usize) -> Self {
        let width = rows * cols;
        let levels = (first..=last).map(|n| vec![0.0; tree.level_size(n) * width]).collect();
        Self {
            rows,
            cols,
            first,
            levels,
        }
    }

    /// Wraps raw per-level storage. Each level must hold a whole number of values.
    pub fn from_levels(rows: usize, cols: usize, first: usize, levels: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows * cols;
        if width == 0 {
            return Err(BsdeError::Contract("field shape must be non-empty".into()));
        }
        if let Some(bad) = levels.iter().position(|l| l.len() % width != 0) {
            return Err(BsdeError::Contract(format!(
                "level {} length {} is not a multiple of the value width {width}",
                first + bad,
                levels[bad].len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            first,
            levels,
        })
    }

    /// Fills every node of levels `first..=last` with `value`.
    pub fn constant(tree: &BinomialTree, value: &[f64], rows: usize, cols: usize, first: usize, last: usize) -> Self {
        assert_eq!(value.len(), rows * cols, "constant value has the wrong width");
        let levels = (first..=last).map(|n| value.repeat(tree.level_size(n))).collect();
        Self {
            rows,
            cols,
            first,
            levels,
        }
    }

    /// Builds a field node by node from a closure `(level, node, out)`.
    pub fn from_fn<F>(tree: &BinomialTree, rows: usize, cols: usize, first: usize, last: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize, &mut [f64]),
    {
        let mut field = Self::zeros(tree, rows, cols, first, last);
        let width = rows * cols;
        for n in first..=last {
            for (node, out) in field.level_mut(n).chunks_mut(width).enumerate() {
                f(n, node, out);
            }
        }
        field
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn width(&self) -> usize {
        self.rows * self.cols
    }

    pub fn first_level(&self) -> usize {
        self.first
    }

    pub fn last_level(&self) -> usize {
        self.first + self.levels.len() - 1
    }

    pub fn defined(&self, n: usize) -> bool {
        n >= self.first && n <= self.last_level()
    }

    pub fn level(&self, n: usize) -> &[f64] {
        &self.levels[n - self.first]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.levels[n - self.first]
    }

    /// Replaces the storage of level `n`.
    pub fn set_level(&mut self, n: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.levels[n - self.first].len());
        self.levels[n - self.first] = values;
    }

    pub fn nodes(&self, n: usize) -> usize {
        self.level(n).len() / self.width()
    }

    pub fn at(&self, n: usize, node: usize) -> &[f64] {
        let w = self.width();
        &self.level(n)[node * w..(node + 1) * w]
    }

    pub fn at_mut(&mut self, n: usize, node: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.level_mut(n)[node * w..(node + 1) * w]
    }

    /// Iterates `(level, node, value)` over every defined node.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        let w = self.width();
        self.levels.iter().enumerate().flat_map(move |(i, lvl)| {
            lvl.chunks(w)
                .enumerate()
                .map(move |(node, v)| (self.first + i, node, v))
        })
    }

    /// True when `other` has the same shape and level range.
    pub fn same_layout(&self, other: &AdaptedField) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.first == other.first
            && self.levels.len() == other.levels.len()
            && self.levels.iter().zip(&other.levels).all(|(a, b)| a.len() == b.len())
    }

    fn check_layout(&self, other: &AdaptedField) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(BsdeError::Contract(format!(
                "field layouts differ: {}x{} on {}..={} vs {}x{} on {}..={}",
                self.rows,
                self.cols,
                self.first,
                self.last_level(),
                other.rows,
                other.cols,
                other.first,
                other.last_level()
            )))
        }
    }

    fn zip_with(&self, other: &AdaptedField, f: impl Fn(f64, f64) -> f64) -> Result<AdaptedField> {
        self.check_layout(other)?;
        let levels = self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
            .collect();
        Ok(AdaptedField {
            levels,
            ..self.clone_shape()
        })
    }

    fn clone_shape(&self) -> AdaptedField {
        AdaptedField {
            rows: self.rows,
            cols: self.cols,
            first: self.first,
            levels: Vec::new(),
        }
    }

    pub fn add(&self, other: &AdaptedField) -> Result<AdaptedField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &AdaptedField) -> Result<AdaptedField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, lambda: f64) -> AdaptedField {
        let levels = self
            .levels
            .iter()
            .map(|l| l.iter().map(|x| lambda * x).collect())
            .collect();
        AdaptedField {
            levels,
            ..self.clone_shape()
        }
    }

    /// Applies `f` to every node value, producing a field of shape `rows × cols`.
    pub fn map_nodes(&self, rows: usize, cols: usize, f: impl Fn(&[f64], &mut [f64])) -> AdaptedField {
        let w_in = self.width();
        let w_out = rows * cols;
        let levels = self
            .levels
            .iter()
            .map(|lvl| {
                let mut out = vec![0.0; lvl.len() / w_in * w_out];
                for (src, dst) in lvl.chunks(w_in).zip(out.chunks_mut(w_out)) {
                    f(src, dst);
                }
                out
            })
            .collect();
        AdaptedField {
            rows,
            cols,
            first: self.first,
            levels,
        }
    }

    /// Euclidean (Frobenius) norm per node as a scalar field.
    pub fn norms(&self) -> AdaptedField {
        self.map_nodes(1, 1, |v, out| out[0] = norm(v))
    }

    /// Maximum over nodes of the Frobenius norm of the node value.
    pub fn sup_norm(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.chunks(self.width()))
            .map(norm)
            .fold(0.0, f64::max)
    }

    /// Maximum over nodes of the Frobenius norm of the difference with `other`.
    pub fn max_diff(&self, other: &AdaptedField) -> Result<f64> {
        Ok(self.sub(other)?.sup_norm())
    }

    /// Restricts the field to levels `first..=last`.
    pub fn restrict(&self, first: usize, last: usize) -> Result<AdaptedField> {
        if first < self.first || last > self.last_level() || first > last {
            return Err(BsdeError::Contract(format!(
                "cannot restrict levels {}..={} to {first}..={last}",
                self.first,
                self.last_level()
            )));
        }
        Ok(AdaptedField {
            levels: self.levels[first - self.first..=last - self.first].to_vec(),
            first,
            ..self.clone_shape()
        })
    }

    /// Location of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        let w = self.width();
        for (i, lvl) in self.levels.iter().enumerate() {
            if let Some(pos) = lvl.iter().position(|x| !x.is_finite()) {
                return Some((self.first + i, pos / w));
            }
        }
        None
    }
}

/// Euclidean norm of a flat slice.
pub fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dimensions;
    use crate::tree::build_tree;

    #[test]
    fn restrict_keeps_level_indices() {
        let t = build_tree(Dimensions::new(1, 1, 1.0, 4).unwrap()).unwrap();
        let f = AdaptedField::from_fn(&t, 1, 1, 0, 4, |n, node, o| o[0] = (10 * n + node) as f64);
        let r = f.restrict(2, 3).unwrap();
        assert_eq!((r.first_level(), r.last_level()), (2, 3));
        assert_eq!(r.at(3, 5)[0], 35.0);
        assert!(f.restrict(3, 5).is_err());
    }

    #[test]
    fn arithmetic_and_norms() {
        let t = build_tree(Dimensions::new(1, 1, 1.0, 3).unwrap()).unwrap();
        let a = AdaptedField::constant(&t, &[3.0, 4.0], 2, 1, 0, 3);
        assert_eq!(a.sup_norm(), 5.0);
        assert_eq!(a.sub(&a).unwrap().sup_norm(), 0.0);
        assert_eq!(a.scale(-2.0).sup_norm(), 10.0);
        assert_eq!(a.norms().at(2, 1)[0], 5.0);
        let b = AdaptedField::constant(&t, &[1.0], 1, 1, 0, 3);
        assert!(a.add(&b).is_err());
    }
}
