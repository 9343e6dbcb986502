//! Piecewise-constant PDFs over ray bins: inverse-CDF sampling,
//! stratification, nucleus filtering, per-stratum budgeting and adaptive
//! per-pixel sample allocation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::render::RayBins;

/// Probabilities over the bins of a ray. May be all-zero (empty ray).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePdf {
    probs: Vec<f64>,
}

impl DiscretePdf {
    /// L1-normalizes nonnegative weights. An all-zero input stays all-zero.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
        let probs =
            if total > 0.0 { weights.iter().map(|w| w.max(0.0) / total).collect() } else { vec![0.0; weights.len()] };
        DiscretePdf { probs }
    }

    /// Wraps already-normalized probabilities without renormalizing.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        DiscretePdf { probs }
    }

    pub fn uniform(bins: usize) -> Self {
        DiscretePdf { probs: vec![1.0 / bins as f64; bins] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.probs.iter().all(|&p| p <= 0.0)
    }

    fn cdf(&self) -> Option<Vec<f64>> {
        let mut cdf = Vec::with_capacity(self.probs.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for &p in &self.probs {
            acc += p.max(0.0);
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return None;
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Some(cdf)
    }
}

/// Uniform distribution over the support set of a nucleus filter.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustPdf {
    support: Vec<usize>,
    bins: usize,
}

impl RobustPdf {
    /// Builds a robust PDF over an explicit support; indices are sorted and deduplicated.
    pub fn from_support(mut support: Vec<usize>, bins: usize) -> Result<Self> {
        support.sort_unstable();
        support.dedup();
        if support.is_empty() || support.last().is_some_and(|&k| k >= bins) {
            return Err(Error::Domain("robust support must be a non-empty subset of the bins".into()));
        }
        Ok(RobustPdf { support, bins })
    }

    /// Support bins in ascending order.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn to_pdf(&self) -> DiscretePdf {
        let mut probs = vec![0.0; self.bins];
        let q = 1.0 / self.support.len() as f64;
        for &k in &self.support {
            probs[k] = q;
        }
        DiscretePdf { probs }
    }

    /// Number of maximal runs of consecutive support bins.
    pub fn modes(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = self.support[0];
        let mut prev = start;
        for &k in &self.support[1..] {
            if k != prev + 1 {
                runs.push((start, prev));
                start = k;
            }
            prev = k;
        }
        runs.push((start, prev));
        runs
    }
}

/// Per-pixel depth-sample budget: `boosted_fraction` of the pixels get
/// `boosted_spp`, the rest `base_spp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBudget {
    pub base_spp: usize,
    pub boosted_spp: usize,
    pub boosted_fraction: f64,
}

impl Default for SampleBudget {
    fn default() -> Self {
        SampleBudget { base_spp: 16, boosted_spp: 32, boosted_fraction: 0.10 }
    }
}

impl SampleBudget {
    pub fn new(base_spp: usize, boosted_spp: usize, boosted_fraction: f64) -> Result<Self> {
        if base_spp < 1 || boosted_spp < base_spp || !(0.0..=1.0).contains(&boosted_fraction) {
            return Err(Error::config(format!(
                "invalid budget {base_spp}/{boosted_spp}/{boosted_fraction}: need boosted >= base >= 1 and fraction in [0, 1]"
            )));
        }
        Ok(SampleBudget { base_spp, boosted_spp, boosted_fraction })
    }

    pub fn mean_spp(&self) -> f64 {
        self.base_spp as f64 + self.boosted_fraction * (self.boosted_spp - self.base_spp) as f64
    }
}

/// Maps variates through the inverse of the piecewise-linear CDF of `pdf`.
/// An all-zero PDF falls back to uniform sampling over the ray. Output is sorted.
pub fn inverse_cdf_sample(pdf: &DiscretePdf, bins: &RayBins, u: &[f64]) -> Vec<f64> {
    let ray = bins.ray();
    let mut ts: Vec<f64> = match pdf.cdf() {
        None => u.iter().map(|&u| ray.t_near + u * (ray.t_far - ray.t_near)).collect(),
        Some(cdf) => {
            let n = pdf.len();
            let last_nonzero = pdf.probs.iter().rposition(|&p| p > 0.0).unwrap_or(n - 1);
            u.iter()
                .map(|&u| {
                    let mut k = cdf.partition_point(|&c| c <= u).saturating_sub(1);
                    if k > last_nonzero {
                        k = last_nonzero;
                    }
                    let width = cdf[k + 1] - cdf[k];
                    let frac = if width > 0.0 { ((u - cdf[k]) / width).clamp(0.0, 1.0) } else { 0.5 };
                    let t = bins.edge(k) + frac * bins.width();
                    t.min(bins.edge(k + 1))
                })
                .collect()
        }
    };
    ts.sort_by(f64::total_cmp);
    ts
}

/// One variate per stratum `[i/n, (i+1)/n)`, in increasing order.
pub fn stratified_variates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let inv = 1.0 / n as f64;
    (0..n).map(|i| (i as f64 + rng.gen::<f64>()) * inv).collect()
}

/// Independent uniform variates, sorted.
pub fn unstratified_variates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    u.sort_by(f64::total_cmp);
    u
}

/// Smallest set of bins whose probability reaches `tau`, taken in order of
/// decreasing probability (ties favor the lower bin index).
pub fn nucleus_filter(pdf: &DiscretePdf, tau: f64) -> Result<RobustPdf> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::config(format!("nucleus threshold must lie in (0, 1], got {tau}")));
    }
    let n = pdf.len();
    if n == 0 {
        return Err(Error::Domain("empty pdf".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pdf.probs[b].total_cmp(&pdf.probs[a]).then(a.cmp(&b)));
    let mut support = Vec::new();
    let mut acc = 0.0;
    for &k in &order {
        if acc >= tau || pdf.probs[k] <= 0.0 {
            break;
        }
        acc += pdf.probs[k];
        support.push(k);
    }
    if support.is_empty() {
        support = (0..n).collect();
    }
    RobustPdf::from_support(support, n)
}

/// Samples per stratum: `⌊s/c⌋` each, with the `s mod c` extras going to
/// the strata of largest `phat` (ties to the lower bin). Indexed like `q.support()`.
pub fn allocate_strata(q: &RobustPdf, phat: &DiscretePdf, s: usize) -> Vec<usize> {
    let c = q.support.len();
    let mut alloc = vec![s / c; c];
    let extra = s % c;
    if extra > 0 {
        let p = |k: usize| phat.probs.get(k).copied().unwrap_or(0.0);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| p(q.support[b]).total_cmp(&p(q.support[a])).then(a.cmp(&b)));
        for &i in &order[..extra] {
            alloc[i] += 1;
        }
    }
    alloc
}

/// Sorted sample positions with their quadrature segment lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSamples {
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Samples given to each support bin, aligned with `RobustPdf::support`.
    pub allocation: Vec<usize>,
}

/// Stratified sampling of a robust PDF under a fixed budget. Each support bin
/// is a stratum; samples inside a stratum are themselves stratified, and every
/// segment length is clipped to the bin width.
pub fn stratified_budget_sample<R: Rng + ?Sized>(
    q: &RobustPdf,
    phat: &DiscretePdf,
    s: usize,
    bins: &RayBins,
    rng: &mut R,
) -> BudgetSamples {
    let allocation = allocate_strata(q, phat, s);
    let width = bins.width();
    let mut ts = Vec::with_capacity(s);
    for (&k, &n) in q.support.iter().zip(&allocation) {
        let start = bins.edge(k);
        for u in stratified_variates(n, rng) {
            ts.push(start + u * width);
        }
    }
    let deltas = clipped_deltas(&ts, bins.ray().t_far, width);
    BudgetSamples { ts, deltas, allocation }
}

/// Distances to the next sample (the far plane for the last), clipped to `max_delta`.
pub fn clipped_deltas(ts: &[f64], t_far: f64, max_delta: f64) -> Vec<f64> {
    let mut deltas: Vec<f64> = ts.windows(2).map(|w| (w[1] - w[0]).min(max_delta)).collect();
    if let Some(&last) = ts.last() {
        deltas.push((t_far - last).max(0.0).min(max_delta));
    }
    deltas
}

/// Probability mass left after removing the `k` largest bins.
pub fn adaptive_score(pdf: &DiscretePdf, k: usize) -> f64 {
    let mut p = pdf.probs.clone();
    let k = k.min(p.len());
    if k == 0 {
        return 1.0;
    }
    p.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let top: f64 = p[..k].iter().sum();
    (1.0 - top).clamp(0.0, 1.0)
}

/// Per-pixel sample counts: the highest-scoring `boosted_fraction` of pixels
/// (ties broken in row-major order) receive `boosted_spp`.
pub fn allocate_budgets(scores: &[f64], budget: &SampleBudget) -> Vec<usize> {
    let n = scores.len();
    let boosted = ((budget.boosted_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut spp = vec![budget.base_spp; n];
    for &i in &order[..boosted] {
        spp[i] = budget.boosted_spp;
    }
    spp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Dir3, Point3};
    use crate::render::Ray;
    use proptest::prelude::*;
    use rand::rngs::mock::StepRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_bins(z: usize) -> RayBins {
        let ray = Ray::new(Point3::ZERO, Dir3::new(Point3::new(0.0, 0.0, 1.0)).unwrap(), 0.0, 1.0).unwrap();
        RayBins::new(ray, z).unwrap()
    }

    #[test]
    fn inverse_cdf_identity_for_uniform() {
        let t = inverse_cdf_sample(&DiscretePdf::uniform(2), &unit_bins(2), &[0.5]);
        assert!((t[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inverse_cdf_two_bins_closed_form() {
        // CDF on [0, 1]: 0.5 t for t < 0.5, then 0.25 + 1.5 (t - 0.5).
        let pdf = DiscretePdf::from_weights(&[0.25, 0.75]);
        let t = inverse_cdf_sample(&pdf, &unit_bins(2), &[0.5])[0];
        let cdf = |t: f64| if t < 0.5 { 0.5 * t } else { 0.25 + 1.5 * (t - 0.5) };
        assert!((cdf(t) - 0.5).abs() < 1e-12);
        assert!((t - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_cdf_one_hot_stays_in_bin() {
        let mut w = vec![0.0; 8];
        w[5] = 3.0;
        let bins = unit_bins(8);
        let u: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        for t in inverse_cdf_sample(&DiscretePdf::from_weights(&w), &bins, &u) {
            assert!(t >= bins.edge(5) && t <= bins.edge(6));
        }
    }

    #[test]
    fn inverse_cdf_zero_pdf_falls_back_to_uniform() {
        let t = inverse_cdf_sample(&DiscretePdf::from_weights(&[0.0; 4]), &unit_bins(4), &[0.1, 0.7]);
        assert_eq!(t, vec![0.1, 0.7]);
    }

    #[test]
    fn stratified_variates_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = stratified_variates(1, &mut rng);
        assert!(one.len() == 1 && (0.0..1.0).contains(&one[0]));
        let mut zero = StepRng::new(0, 0);
        assert_eq!(stratified_variates(4, &mut zero), vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn stratified_estimator_has_lower_variance() {
        // Estimate the integral of t over [0, 1] with 8 variates, 10000 times.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 10_000;
        let var = |f: &mut dyn FnMut() -> Vec<f64>| {
            let est: Vec<f64> = (0..trials).map(|_| f().iter().sum::<f64>() / 8.0).collect();
            let mean = est.iter().sum::<f64>() / trials as f64;
            est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
        };
        let vs = var(&mut || stratified_variates(8, &mut rng));
        let vu = var(&mut || unstratified_variates(8, &mut rng));
        // Analytic: 1/(12 n^3) vs 1/(12 n).
        assert!(vs < vu / 10.0, "{vs} vs {vu}");
    }

    #[test]
    fn nucleus_examples() {
        let pdf = DiscretePdf::from_probs(vec![0.5, 0.3, 0.19, 0.01]);
        assert_eq!(nucleus_filter(&pdf, 0.98).unwrap().support(), &[0, 1, 2]);
        let mut one_hot = vec![0.0; 10];
        one_hot[7] = 1.0;
        let q = nucleus_filter(&DiscretePdf::from_probs(one_hot.clone()), 0.98).unwrap();
        assert_eq!(q.support(), &[7]);
        assert_eq!(q.to_pdf().probs(), &one_hot[..]);
        for z in [10, 50, 192] {
            let q = nucleus_filter(&DiscretePdf::uniform(z), 0.98).unwrap();
            assert_eq!(q.support().len(), (0.98 * z as f64).ceil() as usize);
        }
    }

    #[test]
    fn nucleus_rejects_bad_tau() {
        let pdf = DiscretePdf::uniform(4);
        assert!(matches!(nucleus_filter(&pdf, 0.0), Err(Error::Config(_))));
        assert!(matches!(nucleus_filter(&pdf, 1.5), Err(Error::Config(_))));
        assert!(nucleus_filter(&pdf, 1.0).is_ok());
    }

    #[test]
    fn budget_allocation_examples() {
        let q = RobustPdf::from_support(vec![2, 3, 4, 5], 8).unwrap();
        let phat = DiscretePdf::from_probs(vec![0.0, 0.0, 0.1, 0.4, 0.3, 0.2, 0.0, 0.0]);
        assert_eq!(allocate_strata(&q, &phat, 10), vec![2, 3, 3, 2]);
        assert_eq!(allocate_strata(&q, &phat, 4), vec![1, 1, 1, 1]);
        // Fewer samples than strata: only the largest bins are visited.
        assert_eq!(allocate_strata(&q, &phat, 2), vec![0, 1, 1, 0]);
        // Ties go to the lower bin.
        let flat = DiscretePdf::from_probs(vec![0.0, 0.0, 0.25, 0.25, 0.25, 0.25, 0.0, 0.0]);
        assert_eq!(allocate_strata(&q, &flat, 6), vec![2, 2, 1, 1]);
    }

    #[test]
    fn budget_samples_hit_every_mode() {
        let bins = unit_bins(16);
        let q = RobustPdf::from_support(vec![1, 2, 9, 10, 11], 16).unwrap();
        let phat = DiscretePdf::from_weights(&[
            0.0, 5.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.3, 0.2, 0.1, 0.0, 0.0, 0.0, 0.0,
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = stratified_budget_sample(&q, &phat, 5, &bins, &mut rng);
        assert_eq!(out.allocation, vec![1; 5]);
        for &(a, b) in &q.modes() {
            assert!(out.ts.iter().any(|&t| t >= bins.edge(a) && t < bins.edge(b + 1)));
        }
        assert!(out.deltas.iter().all(|&d| d <= bins.width() + 1e-15));
    }

    #[test]
    fn adaptive_score_examples() {
        let mut w = vec![0.0; 192];
        w[40..56].fill(1.0);
        assert_eq!(adaptive_score(&DiscretePdf::from_weights(&w), 16), 0.0);
        let s = adaptive_score(&DiscretePdf::uniform(192), 16);
        assert!((s - (1.0 - 16.0 / 192.0)).abs() < 1e-12);
    }

    #[test]
    fn budget_examples() {
        let scores: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let spp = allocate_budgets(&scores, &SampleBudget::default());
        let mean = spp.iter().sum::<usize>() as f64 / 100.0;
        assert!((mean - 17.6).abs() < 1e-12);
        assert_eq!(SampleBudget::default().mean_spp(), 17.6);

        let none = SampleBudget::new(16, 32, 0.0).unwrap();
        assert!(allocate_budgets(&scores, &none).iter().all(|&s| s == 16));

        let small = SampleBudget::new(9, 19, 0.1).unwrap();
        let spp = allocate_budgets(&scores, &small);
        assert_eq!(spp.iter().sum::<usize>(), 1000);
        assert!((small.mean_spp() - 10.0).abs() < 1e-12);

        // Ties resolved in row-major order.
        let flat = allocate_budgets(&[1.0; 10], &small);
        assert_eq!(flat[0], 19);
        assert!(flat[1..].iter().all(|&s| s == 9));
        assert!(SampleBudget::new(16, 8, 0.1).is_err());
        assert!(SampleBudget::new(0, 8, 0.1).is_err());
        assert!(SampleBudget::new(1, 8, 1.1).is_err());
    }

    fn arb_pdf(max_len: usize) -> impl Strategy<Value = DiscretePdf> {
        prop::collection::vec(0.0f64..1.0, 2..max_len).prop_map(|w| {
            let mut w = w;
            w[0] += 1e-3;
            DiscretePdf::from_weights(&w)
        })
    }

    proptest! {
        #[test]
        fn nucleus_is_minimal_by_enumeration(pdf in arb_pdf(11), tau in 0.05f64..1.0) {
            let q = nucleus_filter(&pdf, tau).unwrap();
            let n = pdf.len();
            let mass: f64 = q.support().iter().map(|&k| pdf.probs()[k]).sum();
            let best = (1u32..(1 << n))
                .filter(|m| (0..n).filter(|k| m & (1 << k) != 0).map(|k| pdf.probs()[k]).sum::<f64>() >= tau)
                .map(|m| m.count_ones() as usize)
                .min();
            if let Some(best) = best {
                prop_assert!(mass >= tau);
                prop_assert_eq!(q.support().len(), best);
            }
        }

        #[test]
        fn budget_sampler_is_sorted_and_within_support(
            pdf in arb_pdf(40),
            s in 1usize..64,
            seed in any::<u64>(),
        ) {
            let bins = unit_bins(pdf.len());
            let q = nucleus_filter(&pdf, 0.98).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = stratified_budget_sample(&q, &pdf, s, &bins, &mut rng);
            prop_assert_eq!(out.ts.len(), s);
            prop_assert_eq!(out.allocation.iter().sum::<usize>(), s);
            prop_assert!(out.ts.windows(2).all(|w| w[0] <= w[1]));
            for &t in &out.ts {
                let k = bins.bin_of(t);
                prop_assert!(q.support().contains(&k));
            }
            let modes = q.modes();
            if modes.len() <= s && q.support().len() <= s {
                for &(a, b) in &modes {
                    prop_assert!(out.ts.iter().any(|&t| t >= bins.edge(a) && t < bins.edge(b + 1)));
                }
            }
        }

        #[test]
        fn inverse_cdf_output_sorted_and_in_range(pdf in arb_pdf(30), seed in any::<u64>()) {
            let bins = unit_bins(pdf.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = unstratified_variates(17, &mut rng);
            let ts = inverse_cdf_sample(&pdf, &bins, &u);
            prop_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
            for &t in &ts {
                prop_assert!((0.0..=1.0).contains(&t));
                prop_assert!(pdf.probs()[bins.bin_of(t)] > 0.0);
            }
        }
    }
}
