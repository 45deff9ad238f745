//! Group-relative policy arithmetic: group-standardized advantages,
//! importance ratios, the aggregate reward, KL regularization, and the
//! resulting scalar objective J = R - beta * KL.
//!
//! Everything here is a pure function over 64-bit floats. Ratios are formed
//! in log space and exponentiated once.

use serde::Deserialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GrpoError {
    #[error("group must contain at least one candidate")]
    EmptyGroup,
    #[error("{field}: expected length {expected}, got {got}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0} contains a non-finite value")]
    NonFiniteInput(&'static str),
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("support mismatch at index {index}: p > 0 where q = 0")]
    SupportMismatch { index: usize },
    #[error("beta must be finite and >= 0, got {0}")]
    InvalidBeta(f64),
    #[error("beta > 0 requires KL inputs (distribution pairs or reference log-probs)")]
    MissingKlInputs,
}

/// Advantage of each candidate: reward centered by the group mean and
/// scaled by the group's population standard deviation. Groups whose std
/// falls below 1e-8 get all-zero advantages (no learning signal).
///
/// Deviations are formed as `G*r_i - sum(r)` before any division, so a
/// reward shift that is exact in floating point (for instance, values on a
/// dyadic grid) leaves every intermediate bit identical.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    assert!(!rewards.is_empty(), "advantages need at least one reward");
    let g = rewards.len() as f64;
    let sum: f64 = rewards.iter().sum();
    let deviations: Vec<f64> = rewards.iter().map(|r| g * r - sum).collect();
    let sumsq: f64 = deviations.iter().map(|e| e * e).sum();
    let std = (sumsq / (g * g * g)).sqrt();
    if std < 1e-8 {
        return vec![0.0; rewards.len()];
    }
    let scale = g.sqrt() / sumsq.sqrt();
    deviations.iter().map(|e| e * scale).collect()
}

fn ensure_finite(field: &'static str, values: &[f64]) -> Result<(), GrpoError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GrpoError::NonFiniteInput(field))
    }
}

fn ensure_len(
    field: &'static str,
    expected: usize,
    values: &[f64],
) -> Result<(), GrpoError> {
    if values.len() == expected {
        Ok(())
    } else {
        Err(GrpoError::LengthMismatch {
            field,
            expected,
            got: values.len(),
        })
    }
}

/// rho_i = exp(logp_current_i - logp_old_i).
pub fn importance_ratios(
    logp_current: &[f64],
    logp_old: &[f64],
) -> Result<Vec<f64>, GrpoError> {
    ensure_len("logp_old", logp_current.len(), logp_old)?;
    ensure_finite("logp_current", logp_current)?;
    ensure_finite("logp_old", logp_old)?;
    Ok(logp_current
        .iter()
        .zip(logp_old)
        .map(|(c, o)| (c - o).exp())
        .collect())
}

fn validate_distribution(p: &[f64]) -> Result<(), GrpoError> {
    if p.is_empty() {
        return Err(GrpoError::InvalidDistribution("empty vector".into()));
    }
    for &x in p {
        if !x.is_finite() || x < 0.0 {
            return Err(GrpoError::InvalidDistribution(format!(
                "element {x} is negative or non-finite"
            )));
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(GrpoError::InvalidDistribution(format!(
            "sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Exact categorical KL(p || q) = sum_j p_j ln(p_j / q_j), with the usual
/// convention that a zero p_j contributes nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, GrpoError> {
    validate_distribution(p)?;
    validate_distribution(q)?;
    ensure_len("q", p.len(), q)?;
    let mut total = 0.0;
    for (index, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return Err(GrpoError::SupportMismatch { index });
        }
        total += pj * (pj / qj).ln();
    }
    Ok(total)
}

/// Sample-based KL estimate: mean of (r - ln r - 1) with
/// r = exp(logp_ref - logp_current). Non-negative for any finite inputs
/// because x - ln x - 1 >= 0 on x > 0.
pub fn kl_estimator_k3(logp_current: &[f64], logp_ref: &[f64]) -> Result<f64, GrpoError> {
    ensure_len("logp_ref", logp_current.len(), logp_ref)?;
    ensure_finite("logp_current", logp_current)?;
    ensure_finite("logp_ref", logp_ref)?;
    if logp_current.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    let total: f64 = logp_current
        .iter()
        .zip(logp_ref)
        .map(|(c, r)| {
            let d = r - c;
            // exp(d) - 1 - d, formed with exp_m1 for small d.
            f64::exp_m1(d) - d
        })
        .sum();
    Ok(total / logp_current.len() as f64)
}

/// How the KL term is grounded for a group.
#[derive(Debug, Clone, PartialEq)]
pub enum KlInputs {
    /// Per-candidate (current, reference) categorical distribution pairs;
    /// the KL term is the mean exact divergence.
    Exact(Vec<(Vec<f64>, Vec<f64>)>),
    /// Per-candidate reference log-probs; the KL term is the k3 estimate.
    Sampled { logp_ref: Vec<f64> },
    /// No KL inputs; only beta = 0 objectives are computable.
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    rewards: Vec<f64>,
    logp_current: Vec<f64>,
    logp_old: Vec<f64>,
    kl: KlInputs,
}

impl CandidateGroup {
    pub fn new(
        rewards: Vec<f64>,
        logp_current: Vec<f64>,
        logp_old: Vec<f64>,
        kl: KlInputs,
    ) -> Result<CandidateGroup, GrpoError> {
        if rewards.is_empty() {
            return Err(GrpoError::EmptyGroup);
        }
        let g = rewards.len();
        ensure_finite("rewards", &rewards)?;
        ensure_len("logp_current", g, &logp_current)?;
        ensure_finite("logp_current", &logp_current)?;
        ensure_len("logp_old", g, &logp_old)?;
        ensure_finite("logp_old", &logp_old)?;
        match &kl {
            KlInputs::Exact(pairs) => {
                if pairs.len() != g {
                    return Err(GrpoError::LengthMismatch {
                        field: "distribution pairs",
                        expected: g,
                        got: pairs.len(),
                    });
                }
                for (current, reference) in pairs {
                    validate_distribution(current)?;
                    validate_distribution(reference)?;
                    ensure_len("reference distribution", current.len(), reference)?;
                }
            }
            KlInputs::Sampled { logp_ref } => {
                ensure_len("logp_ref", g, logp_ref)?;
                ensure_finite("logp_ref", logp_ref)?;
            }
            KlInputs::Absent => {}
        }
        Ok(CandidateGroup {
            rewards,
            logp_current,
            logp_old,
            kl,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn advantages(&self) -> Vec<f64> {
        group_advantages(&self.rewards)
    }

    pub fn ratios(&self) -> Vec<f64> {
        importance_ratios(&self.logp_current, &self.logp_old)
            .expect("validated at construction")
    }
}

/// R = sum_i rho_i * a_i.
pub fn aggregate_reward(group: &CandidateGroup) -> f64 {
    group
        .ratios()
        .iter()
        .zip(group.advantages())
        .map(|(rho, a)| rho * a)
        .sum()
}

/// The group's KL term: mean exact divergence when distribution pairs are
/// present, the k3 estimate when only sampled log-probs are, None when the
/// group carries no KL inputs.
pub fn kl_term(group: &CandidateGroup) -> Result<Option<f64>, GrpoError> {
    match &group.kl {
        KlInputs::Exact(pairs) => {
            let mut total = 0.0;
            for (current, reference) in pairs {
                total += kl_divergence(current, reference)?;
            }
            Ok(Some(total / pairs.len() as f64))
        }
        KlInputs::Sampled { logp_ref } => {
            Ok(Some(kl_estimator_k3(&group.logp_current, logp_ref)?))
        }
        KlInputs::Absent => Ok(None),
    }
}

/// J = R - beta * KL. With beta = 0 the KL inputs are not consulted.
pub fn grpo_objective(group: &CandidateGroup, beta: f64) -> Result<f64, GrpoError> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(GrpoError::InvalidBeta(beta));
    }
    let reward = aggregate_reward(group);
    if beta == 0.0 {
        return Ok(reward);
    }
    match kl_term(group)? {
        Some(kl) => Ok(reward - beta * kl),
        None => Err(GrpoError::MissingKlInputs),
    }
}

/// One group as it appears in a groups JSON file:
/// `{"groups": [{"rewards": [...], "logp_current": [...], "logp_old": [...],
/// "logp_ref": [...]?, "dist_current": [[...]]?, "dist_ref": [[...]]?}]}`.
/// Distribution pairs take precedence over sampled log-probs when both are
/// present.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub rewards: Vec<f64>,
    pub logp_current: Vec<f64>,
    pub logp_old: Vec<f64>,
    #[serde(default)]
    pub logp_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub dist_current: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub dist_ref: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupsFile {
    pub groups: Vec<GroupSpec>,
}

impl GroupSpec {
    pub fn into_group(self) -> Result<CandidateGroup, GrpoError> {
        let kl = match (self.dist_current, self.dist_ref) {
            (Some(current), Some(reference)) => {
                if current.len() != reference.len() {
                    return Err(GrpoError::LengthMismatch {
                        field: "dist_ref",
                        expected: current.len(),
                        got: reference.len(),
                    });
                }
                KlInputs::Exact(current.into_iter().zip(reference).collect())
            }
            (None, None) => match self.logp_ref {
                Some(logp_ref) => KlInputs::Sampled { logp_ref },
                None => KlInputs::Absent,
            },
            _ => {
                return Err(GrpoError::InvalidDistribution(
                    "dist_current and dist_ref must be given together".into(),
                ))
            }
        };
        CandidateGroup::new(self.rewards, self.logp_current, self.logp_old, kl)
    }
}
