use std::ops::Range;

use crate::error::{Error, Result};

/// Flat model weights plus the layer boundaries that partition them.
///
/// `boundaries` always starts at 0 and ends at `values.len()`; consecutive
/// entries delimit one layer. The last span is the output layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ParamVector {
    values: Vec<f64>,
    boundaries: Vec<usize>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, boundaries: Vec<usize>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite parameter at index {i}")));
        }
        if boundaries.len() < 2
            || boundaries[0] != 0
            || *boundaries.last().unwrap() != values.len()
            || boundaries.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(format!(
                "layout {boundaries:?} does not partition 0..{}",
                values.len()
            )));
        }
        Ok(Self { values, boundaries })
    }

    /// Single-layer vector; convenient for tests and toy inputs.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![0, n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn final_span(&self) -> Range<usize> {
        let n = self.boundaries.len();
        self.boundaries[n - 2]..self.boundaries[n - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Wire size with 4-byte weights.
    pub fn payload_bytes(&self) -> u64 {
        self.values.len() as u64 * 4
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.boundaries == other.boundaries
    }

    pub(crate) fn check_shape(&self, other: &ParamVector) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "dimension mismatch: {} vs {} parameters",
                self.len(),
                other.len()
            )))
        }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> ParamVector {
        debug_assert_eq!(values.len(), self.values.len());
        ParamVector {
            values,
            boundaries: self.boundaries.clone(),
        }
    }

    /// `(1 - eta) * self + eta * other`.
    pub fn mix(&self, other: &ParamVector, eta: f64) -> Result<ParamVector> {
        self.check_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - eta) * a + eta * b)
            .collect();
        Ok(self.with_values(values))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(self.with_values(values))
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(self.with_values(values))
    }

    /// Uniform mean of equally shaped vectors.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a ParamVector>) -> Result<ParamVector> {
        let mut iter = items.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("cannot average an empty set of models"))?;
        let mut acc = first.values.clone();
        let mut n = 1usize;
        for p in iter {
            first.check_shape(p)?;
            for (a, v) in acc.iter_mut().zip(&p.values) {
                *a += v;
            }
            n += 1;
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(first.with_values(acc))
    }
}

/// Sum of absolute coordinate differences.
pub fn l1_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.check_shape(b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_distance(&pv(&[0.0, 0.0]), &pv(&[0.0, 0.0])).unwrap(), 0.0);
        let d = l1_distance(&pv(&[0.1, 0.2]), &pv(&[0.0, 0.0])).unwrap();
        assert!((d - 0.3).abs() < 1e-15);
        assert_eq!(l1_distance(&pv(&[1.0, -1.0]), &pv(&[-1.0, 1.0])).unwrap(), 4.0);
    }

    #[test]
    fn l1_rejects_mismatch() {
        assert!(l1_distance(&pv(&[1.0]), &pv(&[1.0, 2.0])).is_err());
        let a = ParamVector::new(vec![1.0, 2.0], vec![0, 1, 2]).unwrap();
        assert!(l1_distance(&a, &pv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(ParamVector::from_values(vec![]).is_err());
        assert!(ParamVector::from_values(vec![f64::NAN]).is_err());
        assert!(ParamVector::new(vec![1.0, 2.0], vec![0, 0, 2]).is_err());
        assert!(ParamVector::new(vec![1.0, 2.0], vec![0, 1]).is_err());
    }

    #[test]
    fn mix_endpoints() {
        let a = pv(&[0.0, 0.0]);
        let b = pv(&[2.0, 4.0]);
        assert_eq!(a.mix(&b, 0.5).unwrap().values(), &[1.0, 2.0]);
        assert_eq!(a.mix(&b, 1.0).unwrap(), b);
        assert_eq!(a.mix(&b, 0.0).unwrap(), a);
    }
}
