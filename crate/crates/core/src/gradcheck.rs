//! Reverse-mode gradients against central finite differences in double precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{DropoutRates, Instance, Model};
use crate::tape::{Dropout, Tape};
use crate::train::loss_and_grads;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per tensor; `None` checks every entry.
    pub samples: Option<usize>,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator. Central
    /// differences at `h = 1e-5` carry roughly `1e-10` of roundoff, so entries below the
    /// floor are effectively held to an absolute error of `tolerance · floor`.
    pub floor: f64,
    /// Required distance of every ReLU input from 0, in units of `step`.
    pub kink_margin: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples: None,
            floor: 1e-5,
            kink_margin: 100.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index and `(analytic, numeric)` at the worst entry.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Smallest `|x|` over ReLU inputs at the checked point.
    pub relu_margin: Option<f64>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    /// `Err(Error::Numeric)` naming the worst tensor and entry when the tolerance is exceeded.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let w = self.worst().expect("a failing report has tensors");
        let (idx, a, n) = w.worst.unwrap_or((0, 0.0, 0.0));
        Err(Error::Numeric(format!(
            "gradient check failed: tensor '{}' index {idx}: analytic {a:e} vs numeric {n:e} (relative error {:e} >= {:e})",
            w.name, w.max_rel_error, self.tolerance
        )))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tensors {
            out.push_str(&format!(
                "gradcheck tensor={} checked={} max_rel_error={:e} max_abs_error={:e}\n",
                t.name, t.checked, t.max_rel_error, t.max_abs_error
            ));
        }
        out.push_str(&format!(
            "gradcheck max_rel_error={:e} tolerance={:e} status={}\n",
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "pass" } else { "fail" }
        ));
        out
    }
}

fn loss(model: &Model<f64>, inst: &Instance, lambda: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let v = model.loss(&mut tape, inst, lambda, DropoutRates::default(), &mut Dropout::off())?;
    Ok(tape.scalar_value(v.total))
}

fn relu_margin(model: &Model<f64>, inst: &Instance) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    model.loss(&mut tape, inst, 0.0, DropoutRates::default(), &mut Dropout::off())?;
    Ok(tape.min_relu_margin())
}

/// Adds uniform noise in `[-scale, scale]` to every parameter, so zero-initialized biases,
/// transitions and unit norm gains do not hide gradient paths.
pub fn perturb(model: &mut Model<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.params.visit_mut(&mut |_, p| {
        for x in p.as_mut_slice() {
            *x += rng.gen_range(-scale..=scale);
        }
    });
}

/// Jitters parameters until every ReLU input sits at least `kink_margin · step` away from 0,
/// so no finite-difference probe crosses a kink. Returns the final margin.
pub fn avoid_relu_kinks(
    model: &mut Model<f64>,
    inst: &Instance,
    opts: &GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    let need = opts.kink_margin * opts.step;
    for _ in 0..100 {
        let margin = relu_margin(model, inst)?;
        if margin.is_none_or(|m| m >= need) {
            return Ok(margin);
        }
        model.params.visit_mut(&mut |_, p| {
            for x in p.as_mut_slice() {
                *x += rng.gen_range(-1e-2..1e-2);
            }
        });
    }
    Err(Error::Numeric(format!(
        "could not move ReLU inputs at least {need:e} away from 0"
    )))
}

/// Compares reverse-mode gradients of the combined loss with central differences.
/// Dropout is off. `model` may be jittered to avoid ReLU kinks.
pub fn grad_check(
    model: &mut Model<f64>,
    inst: &Instance,
    lambda: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let relu_margin = avoid_relu_kinks(model, inst, opts, &mut rng)?;
    let (_, analytic) = loss_and_grads(model, inst, lambda, DropoutRates::default(), &mut Dropout::off())?;
    let analytic = analytic.into_flat();
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let mut tensors = Vec::with_capacity(names.len());
    for (t, name) in names.iter().enumerate() {
        let len = analytic[t].len();
        let entries: Vec<usize> = match opts.samples {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        let mut check = TensorCheck {
            name: name.clone(),
            checked: entries.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: None,
        };
        for &e in &entries {
            let original = model.params.flat_mut()[t].as_mut_slice()[e];
            model.params.flat_mut()[t].as_mut_slice()[e] = original + opts.step;
            let plus = loss(model, inst, lambda)?;
            model.params.flat_mut()[t].as_mut_slice()[e] = original - opts.step;
            let minus = loss(model, inst, lambda)?;
            model.params.flat_mut()[t].as_mut_slice()[e] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[t].as_slice()[e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            check.max_abs_error = check.max_abs_error.max(abs);
            if rel > check.max_rel_error || check.worst.is_none() {
                check.max_rel_error = check.max_rel_error.max(rel);
                check.worst = Some((e, a, numeric));
            }
        }
        tensors.push(check);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        tolerance: opts.tolerance,
        relu_margin,
    })
}
