use crate::error::{Error, Result};

/// Labeled samples held by one client. Features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LocalDataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::invalid("feature dimension and class count must be positive"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::invalid(format!(
                "{} feature values cannot form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn from_rows(classes: usize, rows: Vec<(Vec<f64>, usize)>) -> Result<Self> {
        let dim = rows
            .first()
            .map(|(x, _)| x.len())
            .ok_or_else(|| Error::invalid("cannot infer feature dimension from zero rows"))?;
        let mut features = Vec::with_capacity(rows.len() * dim);
        let mut labels = Vec::with_capacity(rows.len());
        for (x, y) in rows {
            if x.len() != dim {
                return Err(Error::invalid("rows have differing feature dimensions"));
            }
            features.extend(x);
            labels.push(y);
        }
        Self::new(dim, classes, features, labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// Observed class counts.
    pub fn label_histogram(&self) -> Vec<u64> {
        let mut h = vec![0u64; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Deterministic head/tail split: the first `len - test` rows train,
    /// the remainder test.
    pub fn split(&self, test_fraction: f64) -> Result<(LocalDataset, LocalDataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid("test fraction must lie in [0, 1)"));
        }
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let n_train = self.len() - n_test;
        let cut = n_train * self.dim;
        let train = LocalDataset::new(
            self.dim,
            self.classes,
            self.features[..cut].to_vec(),
            self.labels[..n_train].to_vec(),
        )?;
        let test = LocalDataset::new(
            self.dim,
            self.classes,
            self.features[cut..].to_vec(),
            self.labels[n_train..].to_vec(),
        )?;
        Ok((train, test))
    }

    /// Concatenate datasets that share dimension and class count.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LocalDataset>) -> Result<LocalDataset> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("cannot concatenate zero datasets"))?;
        let mut out = first.clone();
        for p in iter {
            if p.dim != out.dim || p.classes != out.classes {
                return Err(Error::invalid("datasets disagree on dimension or class count"));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }
}

/// Hard (argmax count) and soft (mean probability) predicted label
/// distributions of a model over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistributions {
    pub hard: Vec<u64>,
    pub soft: Vec<f64>,
}

impl LabelDistributions {
    /// Population variance of the soft-label means across classes.
    pub fn soft_variance(&self) -> f64 {
        population_variance(&self.soft)
    }
}

pub(crate) fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_labels() {
        assert!(LocalDataset::new(1, 2, vec![0.0, 1.0], vec![0, 2]).is_err());
        assert!(LocalDataset::new(2, 2, vec![0.0, 1.0, 2.0], vec![0, 1]).is_err());
    }

    #[test]
    fn split_keeps_every_row() {
        let d = LocalDataset::new(1, 2, (0..10).map(f64::from).collect(), vec![0; 10]).unwrap();
        let (tr, te) = d.split(0.2).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(te.features(0), &[8.0]);
    }

    #[test]
    fn variance_of_constant_is_zero() {
        assert_eq!(population_variance(&[0.5, 0.5]), 0.0);
        assert!((population_variance(&[0.0, 1.0]) - 0.25).abs() < 1e-15);
    }
}
