//! Central-difference validation of analytic gradients.

use crate::error::{Error, Result};

use super::{ParamStore, Rng};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Perturbation size for the central difference.
    pub step: f64,
    pub tolerance: f64,
    /// Elements sampled per parameter tensor (all elements if the tensor is smaller).
    pub samples_per_param: usize,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_param: 16,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// A perturbation changed the loss's branch signature (e.g. a ReLU flipped),
    /// so the central difference straddles a kink. Excluded from the verdict.
    pub kink: bool,
}

/// One loss evaluation. `branch` identifies the piecewise-smooth region the
/// evaluation landed in; plain `f64` losses report a single region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub branch: u64,
}

impl From<f64> for Probe {
    fn from(loss: f64) -> Self {
        Probe { loss, branch: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub tolerance: f64,
}

impl GradCheckReport {
    /// Samples that count towards the verdict.
    pub fn checked(&self) -> usize {
        self.samples.iter().filter(|s| !s.kink).count()
    }

    pub fn kinks(&self) -> usize {
        self.samples.len() - self.checked()
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.samples
            .iter()
            .filter(|s| !s.kink)
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst().map_or(0.0, |s| s.rel_err)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    /// `Ok(self)` if every sample is within tolerance, otherwise the worst offender.
    pub fn into_result(self) -> Result<Self> {
        match self.worst() {
            Some(w) if w.rel_err >= self.tolerance => Err(Error::GradCheck {
                name: w.name.clone(),
                index: w.index,
                analytic: w.analytic,
                numeric: w.numeric,
                rel_err: w.rel_err,
            }),
            _ => Ok(self),
        }
    }
}

/// Compares the gradients currently stored in `store` against central
/// differences of `loss_fn` on a sampled subset of elements.
///
/// `loss_fn` must be a deterministic function of the store's values. Values are
/// restored exactly after each probe.
pub fn finite_diff_check<F, P>(
    store: &mut ParamStore,
    mut loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<P>,
    P: Into<Probe>,
{
    let mut rng = Rng::substream(opts.seed, "gradcheck", 0);
    let base = loss_fn(store)?.into().branch;
    let mut samples = Vec::new();
    for slot in 0..store.len() {
        let len = store.value(slot).len();
        let mut indices: Vec<usize> = (0..len).collect();
        if len > opts.samples_per_param {
            rng.shuffle(&mut indices);
            indices.truncate(opts.samples_per_param);
            indices.sort_unstable();
        }
        for index in indices {
            let analytic = store.grad(slot).data()[index];
            let original = store.value(slot).data()[index];

            store.value_mut(slot).data_mut()[index] = original + opts.step;
            let plus: Probe = loss_fn(store)?.into();
            store.value_mut(slot).data_mut()[index] = original - opts.step;
            let minus: Probe = loss_fn(store)?.into();
            store.value_mut(slot).data_mut()[index] = original;

            let numeric = (plus.loss - minus.loss) / (2.0 * opts.step);
            let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
            let rel_err = (analytic - numeric).abs() / denom;
            let name = store
                .iter()
                .nth(slot)
                .map(|p| p.name.clone())
                .unwrap_or_default();
            samples.push(GradSample {
                name,
                index,
                analytic,
                numeric,
                rel_err,
                kink: plus.branch != base || minus.branch != base,
            });
        }
    }
    Ok(GradCheckReport {
        samples,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::Tensor;

    fn scalar_store(w: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let slot = s.insert("w", Tensor::filled(&[1], w));
        s.accumulate(slot, &Tensor::filled(&[1], grad));
        s
    }

    #[test]
    fn quadratic_is_exact() {
        let mut s = scalar_store(3.0, 6.0);
        let report = finite_diff_check(
            &mut s,
            |s| Ok(s.value(0).data()[0].powi(2)),
            &GradCheckOptions::default(),
        )
        .unwrap();
        let sample = &report.samples[0];
        assert!((sample.numeric - 6.0).abs() < 1e-9);
        assert!(report.passed());
        assert_eq!(s.value(0).data(), &[3.0]);
    }

    #[test]
    fn constant_loss() {
        let mut s = scalar_store(3.0, 0.0);
        let report = finite_diff_check(&mut s, |_| Ok(4.2), &GradCheckOptions::default()).unwrap();
        assert_eq!(report.samples[0].numeric, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn kink_crossings_are_excluded() {
        // |x| at x = 1e-6 with the wrong-side gradient; the probe straddles 0
        let mut s = scalar_store(1e-6, 1.0);
        let report = finite_diff_check(
            &mut s,
            |s| {
                let x = s.value(0).data()[0];
                Ok(Probe {
                    loss: x.abs(),
                    branch: u64::from(x > 0.0),
                })
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.samples[0].kink);
        assert_eq!(report.checked(), 0);
        assert_eq!(report.kinks(), 1);
    }

    #[test]
    fn wrong_gradient_names_offender() {
        let mut s = ParamStore::new();
        s.insert("ok", Tensor::filled(&[2], 1.0));
        let bad = s.insert("bad", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        // true gradient of Σ x² on "bad" is 2x; plant a sign error at index 1
        s.accumulate(bad, &Tensor::from_vec(&[3], vec![2.0, -4.0, 6.0]).unwrap());
        s.accumulate(0, &Tensor::filled(&[2], 2.0));
        let err = finite_diff_check(
            &mut s,
            |s| {
                Ok(s.iter()
                    .flat_map(|p| p.value.data())
                    .map(|x| x * x)
                    .sum::<f64>())
            },
            &GradCheckOptions::default(),
        )
        .unwrap()
        .into_result()
        .unwrap_err();
        match err {
            Error::GradCheck { name, index, .. } => {
                assert_eq!(name, "bad");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
