//! Prior over sparse polynomial vector fields.
//!
//! A sampled field has one polynomial component per state dimension. Each
//! component is a weighted sum of monomials of total degree at most `p`,
//! thinned by two Bernoulli mask layers (one over degrees, one over
//! individual monomials) and resampled until at least one term survives.
//! Surviving coefficients are i.i.d. standard normal; a single scale
//! factor drawn uniformly from the configured range multiplies the whole
//! field.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::CoreError;
use crate::field::VectorField;

/// Exponent tuple of one monomial: x1^a1 * ... * xd^ad.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MonomialExponents(pub Vec<u32>);

impl MonomialExponents {
    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 1.0;
        for (&e, &xi) in self.0.iter().zip(x) {
            acc *= xi.powi(e as i32);
        }
        acc
    }
}

/// One polynomial component f_i; only surviving terms are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialComponent {
    pub terms: Vec<(MonomialExponents, f64)>,
}

impl PolynomialComponent {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }
}

/// A sampled polynomial right-hand side: dx/dt = scale * f(x).
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialVectorField {
    dimension: usize,
    components: Vec<PolynomialComponent>,
    scale: f64,
}

impl PolynomialVectorField {
    pub fn new(
        dimension: usize,
        components: Vec<PolynomialComponent>,
        scale: f64,
    ) -> Result<Self, CoreError> {
        if components.len() != dimension {
            return Err(CoreError::DimensionMismatch {
                expected: dimension,
                got: components.len(),
            });
        }
        if !scale.is_finite() || scale < 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "scale must be finite and non-negative, got {scale}"
            )));
        }
        for comp in &components {
            if comp.terms.is_empty() {
                return Err(CoreError::Empty {
                    context: "polynomial component with no terms",
                });
            }
            if comp.terms.iter().any(|(m, c)| !c.is_finite() || m.0.len() != dimension) {
                return Err(CoreError::InvalidConfig(
                    "component term with bad coefficient or exponent length".into(),
                ));
            }
        }
        Ok(Self {
            dimension,
            components,
            scale,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn components(&self) -> &[PolynomialComponent] {
        &self.components
    }
}

impl VectorField for PolynomialVectorField {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.components) {
            *o = self.scale * comp.eval(x);
        }
    }
}

/// Sampling parameters for the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub dimension: usize,
    pub max_degree: u32,
    pub degree_keep_prob: f64,
    pub monomial_keep_prob: f64,
    pub scale_range: (f64, f64),
    pub coeff_mean: f64,
    pub coeff_std: f64,
}

impl PriorConfig {
    pub fn new(dimension: usize, max_degree: u32) -> Self {
        Self {
            dimension,
            max_degree,
            degree_keep_prob: 0.5,
            monomial_keep_prob: 0.5,
            scale_range: (0.0, 2.0),
            coeff_mean: 0.0,
            coeff_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let ok_prob = |p: f64| p > 0.0 && p <= 1.0;
        if self.dimension == 0 {
            return Err(CoreError::InvalidConfig("dimension must be >= 1".into()));
        }
        if self.max_degree < 1 {
            return Err(CoreError::InvalidConfig("max_degree must be >= 1".into()));
        }
        if !ok_prob(self.degree_keep_prob) || !ok_prob(self.monomial_keep_prob) {
            return Err(CoreError::InvalidConfig(
                "keep probabilities must lie in (0, 1]".into(),
            ));
        }
        let (lo, hi) = self.scale_range;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
            return Err(CoreError::InvalidConfig(format!(
                "scale range must be non-negative and ordered, got [{lo}, {hi}]"
            )));
        }
        if !(self.coeff_std.is_finite() && self.coeff_std > 0.0) {
            return Err(CoreError::InvalidConfig("coeff_std must be positive".into()));
        }
        Ok(())
    }
}

/// All exponent tuples with total degree <= p, in graded lexicographic
/// order: ascending total degree, and within a degree descending
/// lexicographic on the exponent tuple (so x1^j comes first).
pub fn enumerate_monomials(d: usize, p: u32) -> Vec<MonomialExponents> {
    assert!(d >= 1, "dimension must be >= 1");
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    for degree in 0..=p {
        compositions(degree, 0, &mut current, &mut out);
    }
    out
}

fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<MonomialExponents>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(MonomialExponents(current.clone()));
        current[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        compositions(remaining - v, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Draw one field from the prior.
///
/// Draw order is frozen for reproducibility: per component, mask layers
/// are resampled together until a term survives, then coefficients are
/// drawn for survivors in canonical monomial order; the scale comes last.
pub fn sample_vector_field<R: Rng>(config: &PriorConfig, rng: &mut R) -> PolynomialVectorField {
    config.validate().expect("invalid prior config");
    let monomials = enumerate_monomials(config.dimension, config.max_degree);
    let mut components = Vec::with_capacity(config.dimension);

    for _ in 0..config.dimension {
        let survivors = loop {
            let degree_mask: Vec<bool> = (0..=config.max_degree)
                .map(|_| rng.gen_bool(config.degree_keep_prob))
                .collect();
            let monomial_mask: Vec<bool> = monomials
                .iter()
                .map(|_| rng.gen_bool(config.monomial_keep_prob))
                .collect();
            let survivors: Vec<usize> = monomials
                .iter()
                .enumerate()
                .filter(|(i, m)| degree_mask[m.total_degree() as usize] && monomial_mask[*i])
                .map(|(i, _)| i)
                .collect();
            if !survivors.is_empty() {
                break survivors;
            }
        };
        let terms = survivors
            .into_iter()
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                (monomials[i].clone(), config.coeff_mean + config.coeff_std * z)
            })
            .collect();
        components.push(PolynomialComponent { terms });
    }

    let (lo, hi) = config.scale_range;
    let scale = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    PolynomialVectorField::new(config.dimension, components, scale)
        .expect("sampled field is structurally valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    fn binomial(n: u64, k: u64) -> u64 {
        let k = k.min(n - k);
        let mut acc = 1u64;
        for i in 0..k {
            acc = acc * (n - i) / (i + 1);
        }
        acc
    }

    #[test]
    fn monomial_counts_follow_binomial_law() {
        for d in 1..=3usize {
            for p in 0..=6u32 {
                let count = enumerate_monomials(d, p).len() as u64;
                assert_eq!(
                    count,
                    binomial((d as u64) + (p as u64), p as u64),
                    "d={d} p={p}"
                );
            }
        }
    }

    #[test]
    fn monomial_order_is_graded_lexicographic() {
        let ms = enumerate_monomials(2, 2);
        let tuples: Vec<Vec<u32>> = ms.iter().map(|m| m.0.clone()).collect();
        assert_eq!(
            tuples,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2],
            ]
        );
    }

    #[test]
    fn enumerate_1d_gives_powers() {
        let ms = enumerate_monomials(1, 3);
        assert_eq!(ms.len(), 4);
        let degs: Vec<u32> = ms.iter().map(|m| m.total_degree()).collect();
        assert_eq!(degs, vec![0, 1, 2, 3]);
    }

    #[test]
    fn degree_zero_only_constant() {
        let ms = enumerate_monomials(2, 0);
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].total_degree(), 0);
    }

    #[test]
    fn evaluate_hand_cases() {
        // f(x) = 2x, s = 1, at x = 3 -> 6
        let f = PolynomialVectorField::new(
            1,
            vec![PolynomialComponent {
                terms: vec![(MonomialExponents(vec![1]), 2.0)],
            }],
            1.0,
        )
        .unwrap();
        assert_eq!(f.eval(&[3.0]).unwrap(), vec![6.0]);

        // rotation field (-x2, x1) at (1, 0) -> (0, 1)
        let rot = PolynomialVectorField::new(
            2,
            vec![
                PolynomialComponent {
                    terms: vec![(MonomialExponents(vec![0, 1]), -1.0)],
                },
                PolynomialComponent {
                    terms: vec![(MonomialExponents(vec![1, 0]), 1.0)],
                },
            ],
            1.0,
        )
        .unwrap();
        assert_eq!(rot.eval(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);

        // f(x) = x^3 - x, s = 0.5, at x = 2 -> 0.5 * (8 - 2) = 3
        let cubic = PolynomialVectorField::new(
            1,
            vec![PolynomialComponent {
                terms: vec![
                    (MonomialExponents(vec![3]), 1.0),
                    (MonomialExponents(vec![1]), -1.0),
                ],
            }],
            0.5,
        )
        .unwrap();
        assert_eq!(cubic.eval(&[2.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let f = PolynomialVectorField::new(
            1,
            vec![PolynomialComponent {
                terms: vec![(MonomialExponents(vec![1]), 1.0)],
            }],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            f.eval(&[1.0, 2.0]),
            Err(CoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_under_fixed_seed() {
        let cfg = PriorConfig::new(3, 3);
        let a = sample_vector_field(&cfg, &mut stream(11, &[1]));
        let b = sample_vector_field(&cfg, &mut stream(11, &[1]));
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_components_are_never_empty() {
        let cfg = PriorConfig::new(1, 3);
        let mut rng = stream(3, &[2]);
        for _ in 0..10_000 {
            let f = sample_vector_field(&cfg, &mut rng);
            assert!(f.components().iter().all(|c| !c.terms.is_empty()));
        }
    }

    #[test]
    fn coefficient_moments_match_standard_normal() {
        let cfg = PriorConfig::new(1, 3);
        let mut rng = stream(5, &[3]);
        // Accumulate per-slot moments over surviving coefficients.
        let mut sums = [0.0f64; 4];
        let mut sqs = [0.0f64; 4];
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let f = sample_vector_field(&cfg, &mut rng);
            for (m, c) in &f.components()[0].terms {
                let k = m.total_degree() as usize;
                sums[k] += c;
                sqs[k] += c * c;
                counts[k] += 1;
            }
        }
        for k in 0..4 {
            let n = counts[k] as f64;
            let mean = sums[k] / n;
            let var = sqs[k] / n - mean * mean;
            assert!(mean.abs() < 0.05, "slot {k}: mean {mean}");
            assert!((var - 1.0).abs() < 0.1, "slot {k}: var {var}");
        }
    }

    #[test]
    fn scale_is_uniform_on_configured_range() {
        let cfg = PriorConfig::new(1, 3);
        let mut rng = stream(9, &[4]);
        let mut acc = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let f = sample_vector_field(&cfg, &mut rng);
            assert!((0.0..2.0).contains(&f.scale()));
            acc += f.scale();
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "scale mean {mean}");
    }

    #[test]
    fn linearity_in_coefficients() {
        let mut rng = stream(21, &[5]);
        let cfg = PriorConfig::new(2, 3);
        let a = sample_vector_field(&cfg, &mut rng);
        let b = sample_vector_field(&cfg, &mut rng);
        // Build the coefficient-sum field on the union of terms, shared scale 1.
        let sum_comp = |ca: &PolynomialComponent, cb: &PolynomialComponent| {
            let mut terms: Vec<(MonomialExponents, f64)> = Vec::new();
            for (m, c) in ca.terms.iter().chain(cb.terms.iter()) {
                if let Some(t) = terms.iter_mut().find(|(tm, _)| tm == m) {
                    t.1 += c;
                } else {
                    terms.push((m.clone(), *c));
                }
            }
            PolynomialComponent { terms }
        };
        let combined = PolynomialVectorField::new(
            2,
            vec![
                sum_comp(&a.components()[0], &b.components()[0]),
                sum_comp(&a.components()[1], &b.components()[1]),
            ],
            1.0,
        )
        .unwrap();
        let a1 = PolynomialVectorField::new(2, a.components().to_vec(), 1.0).unwrap();
        let b1 = PolynomialVectorField::new(2, b.components().to_vec(), 1.0).unwrap();
        let x = [0.7, -1.3];
        let lhs = combined.eval(&x).unwrap();
        let rhs: Vec<f64> = a1
            .eval(&x)
            .unwrap()
            .iter()
            .zip(b1.eval(&x).unwrap())
            .map(|(u, v)| u + v)
            .collect();
        for (l, r) in lhs.iter().zip(&rhs) {
            let denom = r.abs().max(1.0);
            assert!((l - r).abs() / denom < 1e-12);
        }
    }

    #[test]
    fn scale_homogeneity() {
        let mut rng = stream(33, &[6]);
        let cfg = PriorConfig::new(3, 3);
        let f = sample_vector_field(&cfg, &mut rng);
        let double = PolynomialVectorField::new(3, f.components().to_vec(), 2.0 * f.scale()).unwrap();
        let x = [0.3, -0.9, 1.1];
        let lhs = double.eval(&x).unwrap();
        let rhs = f.eval(&x).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            let denom = (2.0 * r).abs().max(1e-300);
            assert!((l - 2.0 * r).abs() / denom < 1e-12);
        }
    }
}
