//! Recursive Bayesian leader identification.
//!
//! Evidence at step `k` is the interaction-ratio vector `R[k]`. Role-conditional
//! likelihoods over a single agent's ratio are Gaussian KDEs fitted on
//! labelled episodes, and the joint likelihood of hypothesis "agent `i` is the
//! leader" factorizes as `f_L(R_i) · Π_{j≠i} f_F(R_j)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DENSITY_FORMAT: &str = "isli-role-densities";
pub const DENSITY_VERSION: u32 = 1;

/// Density floor; log-likelihoods never drop below `ln(1e-12)`.
pub const DEFAULT_FLOOR: f64 = 1e-12;
pub const MIN_BANDWIDTH: f64 = 1e-3;
/// Bayes updates are applied every this many steps.
pub const DEFAULT_UPDATE_EVERY: usize = 5;

/// Ratio vector observed at step `k` of an episode with a known leader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRecord {
    pub episode: usize,
    pub k: usize,
    pub leader_index: usize,
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioDataset {
    pub records: Vec<RatioRecord>,
}

impl RatioDataset {
    pub fn leader_samples(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.ratios[r.leader_index])
            .collect()
    }

    pub fn follower_samples(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| {
                r.ratios
                    .iter()
                    .enumerate()
                    .filter(move |&(i, _)| i != r.leader_index)
                    .map(|(_, &v)| v)
            })
            .collect()
    }

    /// Distinct swarm sizes present, ascending.
    pub fn n_values(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self.records.iter().map(|r| r.ratios.len()).collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }
}

/// One-dimensional Gaussian kernel density estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub samples: Vec<f64>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `0.9 · min(σ, IQR/1.34) · n^(-1/5)`, floored.
pub fn silverman_bandwidth(samples: &[f64], min_bandwidth: f64) -> f64 {
    let n = samples.len();
    if n < 2 {
        return min_bandwidth;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h.is_finite() && h > min_bandwidth {
        h
    } else {
        min_bandwidth
    }
}

impl Kde {
    pub fn with_bandwidth(samples: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::Estimator("kde needs at least one sample".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(CoreError::Estimator(format!("bad bandwidth {bandwidth}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(CoreError::NonFinite("kde samples"));
        }
        Ok(Self { bandwidth, samples })
    }

    pub fn fit(samples: Vec<f64>, min_bandwidth: f64) -> Result<Self> {
        let h = silverman_bandwidth(&samples, min_bandwidth);
        Self::with_bandwidth(samples, h)
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        norm * self
            .samples
            .iter()
            .map(|&s| {
                let z = (x - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Per-role sample cap; larger sets are thinned by an even stride.
    pub max_samples: usize,
    pub floor: f64,
    pub min_bandwidth: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_samples: 4000,
            floor: DEFAULT_FLOOR,
            min_bandwidth: MIN_BANDWIDTH,
        }
    }
}

fn thin(samples: Vec<f64>, cap: usize) -> Vec<f64> {
    if cap == 0 || samples.len() <= cap {
        return samples;
    }
    (0..cap).map(|i| samples[i * samples.len() / cap]).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityMetadata {
    /// Swarm sizes pooled into the fit.
    pub n_values: Vec<usize>,
    pub records: usize,
}

/// Leader and follower likelihoods over an agent's interaction ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleDensities {
    pub format: String,
    pub version: u32,
    pub floor: f64,
    pub leader: Kde,
    pub follower: Kde,
    pub metadata: DensityMetadata,
}

impl RoleDensities {
    pub fn new(leader: Kde, follower: Kde, floor: f64) -> Self {
        Self {
            format: DENSITY_FORMAT.into(),
            version: DENSITY_VERSION,
            floor,
            leader,
            follower,
            metadata: DensityMetadata::default(),
        }
    }

    /// Fit both role densities from a labelled dataset.
    pub fn fit(dataset: &RatioDataset, options: &FitOptions) -> Result<Self> {
        let leader = dataset.leader_samples();
        let follower = dataset.follower_samples();
        if leader.is_empty() || follower.is_empty() {
            return Err(CoreError::Estimator(
                "dataset needs at least one leader and one follower sample".into(),
            ));
        }
        let mut out = Self::new(
            Kde::fit(thin(leader, options.max_samples), options.min_bandwidth)?,
            Kde::fit(thin(follower, options.max_samples), options.min_bandwidth)?,
            options.floor,
        );
        out.metadata = DensityMetadata {
            n_values: dataset.n_values(),
            records: dataset.records.len(),
        };
        Ok(out)
    }

    pub fn leader_density(&self, r: f64) -> f64 {
        self.leader.density(r).max(self.floor)
    }

    pub fn follower_density(&self, r: f64) -> f64 {
        self.follower.density(r).max(self.floor)
    }

    /// `ln f_L(r) − ln f_F(r)`; exactly zero when both roles share a model.
    pub fn log_likelihood_ratio(&self, r: f64) -> f64 {
        if self.leader == self.follower {
            return 0.0;
        }
        self.leader_density(r).ln() - self.follower_density(r).ln()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: RoleDensities = serde_json::from_str(text)?;
        if d.format != DENSITY_FORMAT || d.version != DENSITY_VERSION {
            return Err(CoreError::Estimator(format!(
                "unsupported density file {} v{}",
                d.format, d.version
            )));
        }
        Kde::with_bandwidth(d.leader.samples.clone(), d.leader.bandwidth)?;
        Kde::with_bandwidth(d.follower.samples.clone(), d.follower.bandwidth)?;
        Ok(d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Belief over the leader's identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub probs: Vec<f64>,
    pub estimate: usize,
    pub confidence: f64,
}

impl Posterior {
    pub fn uniform(n: usize) -> Self {
        Self::from_probs(vec![1.0 / n as f64; n])
    }

    /// Wrap a probability vector; ties in the argmax go to the lowest index.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let mut estimate = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[estimate] {
                estimate = i;
            }
        }
        let confidence = probs[estimate];
        Self {
            probs,
            estimate,
            confidence,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied,
    /// The likelihood did not discriminate between hypotheses.
    Uninformative,
    /// Every hypothesis underflowed; the posterior was left unchanged.
    Underflow,
}

/// One recursive Bayes step with evidence `ratios`.
pub fn bayes_update(
    posterior: &Posterior,
    ratios: &[f64],
    densities: &RoleDensities,
) -> Result<(Posterior, UpdateStatus)> {
    if ratios.len() != posterior.probs.len() {
        return Err(CoreError::Estimator(format!(
            "ratio vector has {} entries, posterior {}",
            ratios.len(),
            posterior.probs.len()
        )));
    }
    // ln f_L(R_i) + Σ_{j≠i} ln f_F(R_j) = llr_i + Σ_j ln f_F(R_j); the shared
    // sum cancels in the normalization.
    let llr: Vec<f64> = ratios
        .iter()
        .map(|&r| densities.log_likelihood_ratio(r))
        .collect();
    if llr.iter().all(|&v| v == llr[0]) {
        return Ok((posterior.clone(), UpdateStatus::Uninformative));
    }
    let log_post: Vec<f64> = posterior
        .probs
        .iter()
        .zip(&llr)
        .map(|(&p, &l)| p.ln() + l)
        .collect();
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok((posterior.clone(), UpdateStatus::Underflow));
    }
    let weights: Vec<f64> = log_post.iter().map(|&lp| (lp - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok((
        Posterior::from_probs(weights.into_iter().map(|w| w / z).collect()),
        UpdateStatus::Applied,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    /// Prior followed by the posterior after every evidence step.
    pub timeline: Vec<Vec<f64>>,
    pub posterior: Posterior,
    pub underflow_steps: usize,
}

/// Run the recursive estimator over a ratio trace (`trace[k-1]` holds `R[k]`),
/// updating every `update_every` steps from a uniform prior.
pub fn identify(
    n_agents: usize,
    trace: &[Vec<f64>],
    densities: &RoleDensities,
    update_every: usize,
) -> Result<Identification> {
    if n_agents == 0 || update_every == 0 {
        return Err(CoreError::Estimator(
            "n_agents and update_every must be positive".into(),
        ));
    }
    let mut posterior = Posterior::uniform(n_agents);
    let mut timeline = Vec::with_capacity(trace.len() + 1);
    timeline.push(posterior.probs.clone());
    let mut underflow_steps = 0;
    for (idx, ratios) in trace.iter().enumerate() {
        let k = idx + 1;
        if k % update_every == 0 {
            let (next, status) = bayes_update(&posterior, ratios, densities)?;
            if status == UpdateStatus::Underflow {
                underflow_steps += 1;
            }
            posterior = next;
        }
        timeline.push(posterior.probs.clone());
    }
    Ok(Identification {
        timeline,
        posterior,
        underflow_steps,
    })
}
