//! Adapter merging: weighted linear averaging, square-root-weighted task
//! arithmetic on the A/B factors, and TIES (trim, elect sign, disjoint
//! mean). Every operator works on the factors A and B separately, never on
//! the product BA.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LoraAdapter;

pub const DEFAULT_TIES_DENSITY: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MergeMethod {
    Linear,
    TaskArithmetic,
    Ties { density: f64 },
}

impl MergeMethod {
    pub fn name(&self) -> &'static str {
        match self {
            MergeMethod::Linear => "linear",
            MergeMethod::TaskArithmetic => "task_arithmetic",
            MergeMethod::Ties { .. } => "ties",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    Raw,
    SumToOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeWeights {
    pub weights: Vec<f64>,
    pub policy: WeightPolicy,
}

impl MergeWeights {
    pub fn uniform(k: usize) -> Self {
        MergeWeights {
            weights: vec![1.0 / k as f64; k],
            policy: WeightPolicy::SumToOne,
        }
    }

    /// Weights proportional to data sizes.
    pub fn by_size(sizes: &[usize]) -> Self {
        MergeWeights {
            weights: sizes.iter().map(|&n| n as f64).collect(),
            policy: WeightPolicy::SumToOne,
        }
    }

    pub fn resolved(&self) -> Result<Vec<f64>> {
        validate_weights(&self.weights)?;
        Ok(match self.policy {
            WeightPolicy::Raw => self.weights.clone(),
            WeightPolicy::SumToOne => normalized(&self.weights),
        })
    }
}

fn validate_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::config("merge weights must be finite and >= 0"));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::config("merge weights must not all be zero"));
    }
    Ok(())
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn check_inputs(adapters: &[LoraAdapter], weights: &[f64]) -> Result<()> {
    let first = adapters.first().ok_or_else(|| Error::config("nothing to merge"))?;
    if weights.len() != adapters.len() {
        return Err(Error::dim("merge weights", adapters.len(), weights.len()));
    }
    for (i, a) in adapters.iter().enumerate().skip(1) {
        if !first.is_compatible(a) {
            return Err(Error::Incompatible(format!(
                "adapter {i} differs from adapter 0 in layers, rank or alpha"
            )));
        }
    }
    Ok(())
}

/// Combine the flat parameter vectors tensor by tensor and rebuild.
fn merge_tensorwise<F>(adapters: &[LoraAdapter], mut f: F) -> Result<LoraAdapter>
where
    F: FnMut(&[&[f64]]) -> Vec<f64>,
{
    let flats: Vec<Vec<f64>> = adapters.iter().map(|a| a.flat()).collect();
    let mut out = Vec::with_capacity(flats[0].len());
    let mut offset = 0;
    for layer in adapters[0].layers() {
        for n in [layer.a.len(), layer.b.len()] {
            let slices: Vec<&[f64]> = flats.iter().map(|v| &v[offset..offset + n]).collect();
            out.extend(f(&slices));
            offset += n;
        }
    }
    adapters[0].with_flat(&out)
}

/// Elementwise Σ w̄_k · θ_k with w̄ normalized to sum to one.
pub fn linear_merge(adapters: &[LoraAdapter], weights: &[f64]) -> Result<LoraAdapter> {
    check_inputs(adapters, weights)?;
    validate_weights(weights)?;
    let w = normalized(weights);
    merge_tensorwise(adapters, |tensors| {
        let mut acc = vec![0.0; tensors[0].len()];
        for (t, wk) in tensors.iter().zip(&w) {
            for (a, x) in acc.iter_mut().zip(t.iter()) {
                *a += wk * x;
            }
        }
        acc
    })
}

/// `A = Σ √w_k A_k`, `B = Σ √w_k B_k` per layer.
pub fn task_arithmetic_merge(adapters: &[LoraAdapter], weights: &[f64]) -> Result<LoraAdapter> {
    check_inputs(adapters, weights)?;
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::config("task arithmetic weights must be >= 0"));
    }
    let roots: Vec<f64> = weights.iter().map(|w| libm::sqrt(*w)).collect();
    merge_tensorwise(adapters, |tensors| {
        let mut acc = vec![0.0; tensors[0].len()];
        for (t, r) in tensors.iter().zip(&roots) {
            for (a, x) in acc.iter_mut().zip(t.iter()) {
                *a += r * x;
            }
        }
        acc
    })
}

/// Keep the `⌈density·n⌉` largest-magnitude entries (earlier index wins a
/// magnitude tie), zero the rest.
pub fn trim(values: &[f64], density: f64) -> Vec<f64> {
    let k = libm::ceil(density * values.len() as f64) as usize;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| libm::fabs(values[j]).total_cmp(&libm::fabs(values[i])).then(i.cmp(&j)));
    let mut out = vec![0.0; values.len()];
    for &i in order.iter().take(k) {
        out[i] = values[i];
    }
    out
}

pub fn ties_merge(adapters: &[LoraAdapter], density: f64, weights: &[f64]) -> Result<LoraAdapter> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::config("TIES density must lie in (0, 1]"));
    }
    check_inputs(adapters, weights)?;
    validate_weights(weights)?;
    merge_tensorwise(adapters, |tensors| {
        let trimmed: Vec<Vec<f64>> = tensors.iter().map(|t| trim(t, density)).collect();
        (0..tensors[0].len())
            .map(|i| {
                let elected: f64 = trimmed.iter().zip(weights).map(|(t, w)| w * t[i]).sum();
                if elected == 0.0 {
                    return 0.0;
                }
                let (mut sum, mut count) = (0.0, 0usize);
                for t in &trimmed {
                    let x = t[i];
                    if x != 0.0 && (x > 0.0) == (elected > 0.0) {
                        sum += x;
                        count += 1;
                    }
                }
                if count == 0 {
                    0.0
                } else {
                    sum / count as f64
                }
            })
            .collect()
    })
}

pub fn merge(adapters: &[LoraAdapter], method: &MergeMethod, weights: &[f64]) -> Result<LoraAdapter> {
    match method {
        MergeMethod::Linear => linear_merge(adapters, weights),
        MergeMethod::TaskArithmetic => task_arithmetic_merge(adapters, weights),
        MergeMethod::Ties { density } => ties_merge(adapters, *density, weights),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::model::LoraLayer;

    fn rank1(a: &[f64], b: &[f64]) -> LoraAdapter {
        LoraAdapter::new(
            1,
            1.0,
            vec![LoraLayer {
                name: "linear".into(),
                a: DenseMatrix::from_vec(1, a.len(), a.to_vec()).unwrap(),
                b: DenseMatrix::from_vec(b.len(), 1, b.to_vec()).unwrap(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn linear_hand_average() {
        let m = linear_merge(&[rank1(&[2.0, 0.0], &[1.0]), rank1(&[0.0, 2.0], &[3.0])], &[1.0, 1.0]).unwrap();
        assert_eq!(m.layers()[0].a.as_slice(), &[1.0, 1.0]);
        assert_eq!(m.layers()[0].b.as_slice(), &[2.0]);
    }

    #[test]
    fn linear_identities() {
        let a = rank1(&[0.3, -0.7], &[1.1]);
        let b = rank1(&[5.0, 2.0], &[-4.0]);
        assert_eq!(linear_merge(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
        let same = linear_merge(&[a.clone(), a.clone(), a.clone()], &[0.2, 0.5, 0.3]).unwrap();
        for (x, y) in same.flat().iter().zip(a.flat()) {
            assert!((x - y).abs() <= 1e-15 * y.abs());
        }
        assert!(linear_merge(std::slice::from_ref(&a), &[0.0]).is_err());
        assert!(linear_merge(std::slice::from_ref(&a), &[-1.0]).is_err());
    }

    #[test]
    fn task_arithmetic_uses_square_root_weights() {
        let a = rank1(&[2.0, 4.0], &[2.0]);
        let b = rank1(&[6.0, 0.0], &[-2.0]);
        assert_eq!(task_arithmetic_merge(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
        let m = task_arithmetic_merge(&[a.clone(), b.clone()], &[0.25, 0.25]).unwrap();
        assert_eq!(m.layers()[0].a.as_slice(), &[4.0, 2.0]);
        assert_eq!(m.layers()[0].b.as_slice(), &[0.0]);
        // single adapter with weight w scales the effective delta by w
        let s = task_arithmetic_merge(std::slice::from_ref(&a), &[0.36]).unwrap();
        let d0 = a.delta("linear").unwrap();
        let d1 = s.delta("linear").unwrap();
        for (x, y) in d1.as_slice().iter().zip(d0.as_slice()) {
            assert!((x - 0.36 * y).abs() < 1e-14);
        }
        assert!(task_arithmetic_merge(&[a], &[-0.1]).is_err());
    }

    #[test]
    fn trim_keeps_largest_magnitudes() {
        assert_eq!(trim(&[3.0, -0.1, 0.2, -2.0], 0.5), vec![3.0, 0.0, 0.0, -2.0]);
        assert_eq!(trim(&[1.0, -1.0, 1.0], 0.5), vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn ties_hand_trace_with_sign_tie() {
        let m = ties_merge(
            &[rank1(&[1.0, -1.0], &[0.0]), rank1(&[1.0, 1.0], &[0.0])],
            1.0,
            &[1.0, 1.0],
        )
        .unwrap();
        assert_eq!(m.layers()[0].a.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn ties_single_full_density_is_identity() {
        let a = rank1(&[0.3, -0.7, 1e-9], &[1.1, -2.0]);
        assert_eq!(ties_merge(std::slice::from_ref(&a), 1.0, &[1.0]).unwrap(), a);
        assert!(ties_merge(std::slice::from_ref(&a), 0.0, &[1.0]).is_err());
        assert!(ties_merge(&[a], 1.5, &[1.0]).is_err());
    }

    #[test]
    fn incompatible_adapters_are_rejected() {
        let a = rank1(&[1.0, 2.0], &[1.0]);
        let b = rank1(&[1.0, 2.0, 3.0], &[1.0]);
        assert!(matches!(
            linear_merge(&[a, b], &[1.0, 1.0]),
            Err(Error::Incompatible(_))
        ));
    }
}
