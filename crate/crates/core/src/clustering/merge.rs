use crate::error::{Error, Result};
use crate::model::{LocalDataset, Mlp, ParamVector, SgdConfig};

/// Weight-granular merge of an auxiliary center into the main one.
///
/// The prior direction points from `main` to `aux`; the posterior direction
/// is what one local pass did to `main`. Coordinates where both agree get
/// attention proportional to their agreement, normalised by the largest
/// agreement so attention stays in `[0, 1]`. Everything else keeps `main`.
pub fn attention_merge(main: &ParamVector, aux: &ParamVector, main_trained: &ParamVector) -> Result<ParamVector> {
    main.check_shape(aux)?;
    main.check_shape(main_trained)?;
    let m = main.values();
    let a = aux.values();
    let t = main_trained.values();
    let agreement: Vec<f64> = (0..m.len()).map(|k| (a[k] - m[k]) * (t[k] - m[k])).collect();
    let peak = agreement.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let merged = (0..m.len())
        .map(|k| {
            let alpha = if peak > 0.0 { agreement[k].max(0.0) / peak } else { 0.0 };
            if alpha == 1.0 {
                a[k]
            } else {
                alpha * a[k] + (1.0 - alpha) * m[k]
            }
        })
        .collect();
    Ok(main.with_values(merged))
}

/// Merge two cluster centers. `main` should be the center of the cluster
/// with more members; `posterior` is the data for the single local pass.
pub fn merge_centers(
    mlp: &Mlp,
    main: &ParamVector,
    aux: &ParamVector,
    posterior: &LocalDataset,
    pass: &SgdConfig,
    seed: u64,
) -> Result<ParamVector> {
    main.check_shape(aux)?;
    if posterior.is_empty() {
        return Err(Error::invalid("merge needs a non-empty posterior dataset"));
    }
    let one_pass = SgdConfig { epochs: 1, ..*pass };
    let trained = mlp.sgd_train(main, posterior, &one_pass, seed)?;
    attention_merge(main, aux, &trained)
}

/// Mean symmetric KL divergence between the predictive distributions of two
/// models over a probe set.
pub fn symmetric_kl(mlp: &Mlp, a: &ParamVector, b: &ParamVector, probe: &LocalDataset) -> f64 {
    symmetric_kl_cached(&predictive(mlp, a, probe), &predictive(mlp, b, probe))
}

/// Per-sample class probabilities of one model on the probe set.
pub(crate) fn predictive(mlp: &Mlp, p: &ParamVector, probe: &LocalDataset) -> Vec<Vec<f64>> {
    probe.iter().map(|(x, _)| mlp.probabilities(p, x)).collect()
}

pub(crate) fn symmetric_kl_cached(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    const EPS: f64 = 1e-12;
    if p.is_empty() {
        return 0.0;
    }
    let total: f64 = p
        .iter()
        .zip(q)
        .map(|(pr, qr)| {
            pr.iter()
                .zip(qr)
                .map(|(&pi, &qi)| {
                    let (pi, qi) = (pi.max(EPS), qi.max(EPS));
                    (pi - qi) * (pi.ln() - qi.ln())
                })
                .sum::<f64>()
        })
        .sum();
    total / p.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_inputs_return_main() {
        let m = pv(&[0.3, -1.0, 2.0]);
        let t = pv(&[0.5, -0.5, 1.0]);
        assert_eq!(attention_merge(&m, &m, &t).unwrap(), m);
    }

    #[test]
    fn two_weight_hand_example() {
        // prior (2, -1), posterior (1, 1): agreement (2, -1), peak 2, alpha (1, 0)
        let main = pv(&[1.0, 1.0]);
        let aux = pv(&[3.0, 0.0]);
        let trained = pv(&[2.0, 2.0]);
        let merged = attention_merge(&main, &aux, &trained).unwrap();
        assert_eq!(merged.values(), &[3.0, 1.0]);
    }

    #[test]
    fn disagreement_everywhere_keeps_main() {
        let main = pv(&[0.0, 0.0]);
        let aux = pv(&[1.0, 1.0]);
        let trained = pv(&[-1.0, -1.0]);
        assert_eq!(attention_merge(&main, &aux, &trained).unwrap(), main);
    }

    #[test]
    fn kl_of_identical_models_is_zero() {
        let mlp = Mlp::linear(1, 2);
        let p = ParamVector::new(vec![1.0, -1.0, 0.0, 0.0], mlp.layout()).unwrap();
        let probe = LocalDataset::from_rows(2, vec![(vec![0.5], 0), (vec![-2.0], 1)]).unwrap();
        assert_eq!(symmetric_kl(&mlp, &p, &p, &probe), 0.0);
        assert!(symmetric_kl(&mlp, &p, &mlp.zeros(), &probe) > 0.0);
    }

    #[test]
    fn empty_posterior_rejected() {
        let mlp = Mlp::linear(1, 2);
        let empty = LocalDataset::new(1, 2, vec![], vec![]).unwrap();
        let z = mlp.zeros();
        assert!(merge_centers(&mlp, &z, &z, &empty, &SgdConfig::default(), 0).is_err());
    }
}
