//! Single-trial runners shared by the CLI and the acceptance suite.
//!
//! Each runner builds a fresh victim from one seed, attacks it, and checks
//! the outcome against the victim's private ground truth. Victim setup is
//! never inside a timed region.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::attack_confidentiality::{
    discover_k, full_layer_attack, learn_noise_subspace_adaptive, recover_permutation,
    unlock_layer, AttackError, AttackOptions, AttackReport, EncryptOracle, KDiscovery,
};
use crate::attack_integrity::{
    additive_tamper, classify, collect_until_complete, discover_k_hidden,
    recover_fingerprint_subspace, recover_with_plan, run_bypass, BypassOutcome, BypassPolicy,
    Class, HiddenKDiscovery, IntegrityError, IntegrityReport,
};
use crate::ff::{seeded_rng, FieldError, FieldModulus};
use crate::linalg::{FieldVector, SubspaceBasis};
use crate::victim_soter::{SoterConfig, SoterError, SoterSession};
use crate::victim_tlg::{setup, CallCounts, SamplingStrategy, TlgConfig, TlgError};

use super::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Tlg(#[from] TlgError),
    #[error(transparent)]
    Soter(#[from] SoterError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error(transparent)]
    Permutation(#[from] crate::permutation::PermutationError),
    #[error(transparent)]
    Config(#[from] super::config::ConfigError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sampling(t: Option<usize>) -> SamplingStrategy {
    t.map_or(SamplingStrategy::AllK, SamplingStrategy::SubsetT)
}

pub fn tlg_config(c: &ExperimentConfig, with_block: bool) -> Result<TlgConfig, RunError> {
    Ok(TlgConfig {
        modulus: FieldModulus::new(c.modulus)?,
        sampling: sampling(c.t),
        with_block,
        ..TlgConfig::new(c.d, c.d_model, c.k)
    })
}

pub fn soter_config(c: &ExperimentConfig) -> Result<SoterConfig, RunError> {
    Ok(SoterConfig {
        modulus: FieldModulus::new(c.modulus)?,
        sampling: sampling(c.t),
        ..SoterConfig::new(c.d, c.k, c.batch_size)
    })
}

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub struct TlgTrial {
    pub report: AttackReport,
    /// Recovered `ρ`, `W₃` and `π_{l+1}` all equal the victim's.
    pub exact: bool,
    /// Forward passes rebuilt from recovered secrets match the plaintext
    /// layer on every checked activation. Vacuously true with no checks.
    pub forward_ok: bool,
    /// Victim counters right after the attack, before any forward checks.
    pub calls: CallCounts,
}

impl TlgTrial {
    pub fn success(&self) -> bool {
        self.exact && self.forward_ok
    }
}

/// Full confidentiality attack on a fresh TLG victim.
///
/// With `forward_checks > 0` the victim needs block weights. Each check
/// draws a plaintext activation `x` and requires both
/// `unlock_layer(..).forward(x)` and `π̂_{l+1}⁻¹` applied to the victim's
/// locked output to equal the plaintext layer output.
pub fn tlg_attack_trial(
    tc: TlgConfig,
    opts: &AttackOptions,
    forward_checks: usize,
    seed: u64,
) -> Result<TlgTrial, RunError> {
    let mut rng = seeded_rng(seed);
    let (mut session, truth) = setup(tc, &mut rng)?;
    let report = full_layer_attack(&mut session, opts);
    let calls = session.calls();
    let exact = report.success(&truth);
    let mut forward_ok = true;
    if let (Some(rec), true) = (&report.recovered, forward_checks > 0) {
        let pi = &truth.secrets.pi;
        let unlocked = unlock_layer(session.locked_weights(), pi, &rec.rho)?;
        let back = rec.pi_next.inverse();
        for _ in 0..forward_checks {
            let x = FieldVector::random(tc.modulus, tc.d_model, &mut rng);
            let want = truth.secrets.weights.forward(&x)?;
            let via_weights = unlocked.forward(&x)?;
            let via_session = back.apply(&session.locked_forward(&pi.apply(&x)?)?)?;
            if via_weights != want || via_session != want {
                forward_ok = false;
                break;
            }
        }
    } else if forward_checks > 0 {
        forward_ok = false;
    }
    Ok(TlgTrial {
        report,
        exact,
        forward_ok,
        calls,
    })
}

pub struct Timed<T> {
    pub outcome: T,
    pub elapsed: Duration,
}

/// K discovery against the encrypt interface of a fresh TLG victim.
pub fn tlg_discover_trial(
    tc: TlgConfig,
    window: usize,
    max_queries: usize,
    seed: u64,
) -> Result<Timed<Result<KDiscovery, AttackError>>, RunError> {
    let (mut session, _) = setup(tc, &mut seeded_rng(seed))?;
    let t = Instant::now();
    let outcome = discover_k(&mut EncryptOracle(&mut session), window, max_queries);
    Ok(Timed {
        outcome,
        elapsed: t.elapsed(),
    })
}

/// Hidden-K discovery on a fresh Soter victim, passively.
pub fn soter_discover_trial(
    sc: SoterConfig,
    window: usize,
    max_batches: usize,
    seed: u64,
) -> Result<Timed<Result<HiddenKDiscovery, IntegrityError>>, RunError> {
    let (mut session, _) = SoterSession::new(sc, &mut seeded_rng(seed))?;
    let t = Instant::now();
    let outcome = discover_k_hidden(&mut session, window, max_batches);
    Ok(Timed {
        outcome,
        elapsed: t.elapsed(),
    })
}

/// Outcome of a sample-count trial: stop as soon as the secret is learned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleTrial {
    pub success: bool,
    /// Stage-1 queries (TLG) or observed batches (Soter).
    pub samples: usize,
    pub rank: usize,
    pub elapsed: Duration,
}

/// Stage 1 with `K` known, stopping once the span reaches rank `K`, then
/// stage 2 for `ρ`.
pub fn tlg_adaptive_trial(
    tc: TlgConfig,
    max_queries: usize,
    seed: u64,
) -> Result<SampleTrial, RunError> {
    let (mut session, truth) = setup(tc, &mut seeded_rng(seed))?;
    let t = Instant::now();
    let mut oracle = EncryptOracle(&mut session);
    let profile = match learn_noise_subspace_adaptive(&mut oracle, tc.k, max_queries) {
        Ok(p) => p,
        Err(AttackError::RankMismatch { rank, .. }) => {
            return Ok(SampleTrial {
                success: false,
                samples: max_queries,
                rank,
                elapsed: t.elapsed(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let recovered = recover_permutation(&mut oracle, &profile);
    let elapsed = t.elapsed();
    let success = recovered
        .ok()
        .and_then(|r| r.permutation().ok())
        .is_some_and(|rho| rho == truth.secrets.rho);
    Ok(SampleTrial {
        success,
        samples: profile.queries_used,
        rank: profile.k_observed,
        elapsed,
    })
}

/// Adaptive set collection and intersection with `K` known; success means
/// the recovered subspace is exactly the cornerstone span.
pub fn soter_adaptive_trial(
    sc: SoterConfig,
    max_batches: usize,
    seed: u64,
) -> Result<SampleTrial, RunError> {
    let (mut session, state) = SoterSession::new(sc, &mut seeded_rng(seed))?;
    let truth = SubspaceBasis::span(sc.modulus, sc.d, state.cornerstone_inputs().iter())?;
    let t = Instant::now();
    let sets = match collect_until_complete(&mut session, sc.k, max_batches) {
        Ok(s) => s,
        Err(IntegrityError::Exhausted(used)) => {
            return Ok(SampleTrial {
                success: false,
                samples: used,
                rank: 0,
                elapsed: t.elapsed(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let recovered = recover_fingerprint_subspace(&sets);
    let elapsed = t.elapsed();
    let samples = sets.iter().map(|s| s.batches_seen).sum();
    let (success, rank) = match recovered {
        Ok((f, _)) => (f.v_c == truth, f.dim),
        Err(_) => (false, 0),
    };
    Ok(SampleTrial {
        success,
        samples,
        rank,
        elapsed,
    })
}

#[derive(Clone, Debug)]
pub struct SoterTrial {
    pub report: IntegrityReport,
    /// The recovered subspace equals the span of the cornerstone inputs.
    pub exact: bool,
    pub recovery_time: Duration,
    pub bypass: BypassOutcome,
    /// Same number of batches with every entry tampered.
    pub control: Option<BypassOutcome>,
    pub classified: usize,
    pub classification_errors: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SoterTrialPlan {
    pub delta: usize,
    pub bypass_batches: usize,
    /// Also run `bypass_batches` batches with every entry tampered.
    pub control: bool,
    pub labeled_batches: usize,
    /// Drops one direction from the recovered subspace before using it.
    pub corrupt_intersection: bool,
}

/// Planned recovery with `K` known, followed by a filtered bypass, an
/// optional tamper-everything control, and labeled classification.
pub fn soter_attack_trial(
    sc: SoterConfig,
    plan: SoterTrialPlan,
    seed: u64,
) -> Result<SoterTrial, RunError> {
    let (mut session, state) = SoterSession::new(sc, &mut seeded_rng(seed))?;
    let truth = SubspaceBasis::span(sc.modulus, sc.d, state.cornerstone_inputs().iter())?;
    let t = Instant::now();
    let (mut filter, report) = recover_with_plan(&mut session, sc.k, plan.delta)?;
    let recovery_time = t.elapsed();
    if plan.corrupt_intersection {
        let kept: Vec<FieldVector> = filter.v_c.vectors().skip(1).collect();
        filter.v_c = SubspaceBasis::span(sc.modulus, sc.d, kept.iter())?;
        filter.dim = filter.v_c.rank();
    }
    let (bypass_batches, labeled_batches) = (plan.bypass_batches, plan.labeled_batches);
    let bypass = run_bypass(
        &mut session,
        &filter,
        BypassPolicy::Filtered,
        additive_tamper,
        bypass_batches,
    )?;
    let control = if plan.control {
        Some(run_bypass(
            &mut session,
            &filter,
            BypassPolicy::TamperAll,
            additive_tamper,
            bypass_batches,
        )?)
    } else {
        None
    };
    let mut classified = 0;
    let mut classification_errors = 0;
    for _ in 0..labeled_batches {
        let batch = session.observe_labeled();
        for (i, v) in batch.vectors.iter().enumerate() {
            let want = if batch.is_fingerprint(i) {
                Class::Fingerprint
            } else {
                Class::Genuine
            };
            classified += 1;
            if classify(v, &filter)? != want {
                classification_errors += 1;
            }
        }
    }
    Ok(SoterTrial {
        exact: filter.v_c == truth,
        report,
        recovery_time,
        bypass,
        control,
        classified,
        classification_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim_tlg::MaskMode;

    #[test]
    fn tlg_trial_recovers_and_forwards() {
        let tc = TlgConfig::new(24, 12, 4);
        let opts = AttackOptions {
            k_known: Some(4),
            ..AttackOptions::default()
        };
        let tr = tlg_attack_trial(tc, &opts, 5, 3).unwrap();
        assert!(tr.exact && tr.forward_ok);
        assert_eq!(tr.calls.encrypt, 24 + 6);
        assert_eq!(tr.calls.encrypt_next, 12 + 6);
    }

    #[test]
    fn forward_check_fails_without_recovery() {
        let tc = TlgConfig {
            mask_mode: MaskMode::OnTheFly,
            ..TlgConfig::new(16, 8, 2)
        };
        let opts = AttackOptions {
            k_known: Some(2),
            ..AttackOptions::default()
        };
        let tr = tlg_attack_trial(tc, &opts, 2, 1).unwrap();
        assert!(!tr.success());
    }

    #[test]
    fn adaptive_trials_succeed() {
        let t = tlg_adaptive_trial(TlgConfig::new(32, 16, 5), 100, 2).unwrap();
        assert!(t.success);
        assert!(t.samples >= 5);
        let s = soter_adaptive_trial(SoterConfig::new(64, 5, 2), 500, 2).unwrap();
        assert!(s.success, "{s:?}");
    }

    #[test]
    fn soter_trial_bypasses() {
        let plan = SoterTrialPlan {
            delta: 1,
            bypass_batches: 20,
            control: true,
            labeled_batches: 20,
            corrupt_intersection: false,
        };
        let t = soter_attack_trial(SoterConfig::new(64, 10, 4), plan, 9).unwrap();
        assert!(t.exact);
        assert_eq!(t.bypass.detections, 0);
        assert_eq!(t.control.unwrap().detections, 20);
        assert_eq!((t.classified, t.classification_errors), (100, 0));

        let bad = SoterTrialPlan {
            corrupt_intersection: true,
            control: false,
            ..plan
        };
        let t = soter_attack_trial(SoterConfig::new(64, 10, 4), bad, 9).unwrap();
        assert!(!t.exact);
        assert!(t.bypass.detections > 0);
        assert!(t.classification_errors > 0);
    }
}
