//! User side of the feedback link: channel and threshold estimation from the
//! pilot blocks, signature correlation and the re-transmission decision.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::feedback_bs::FeedbackScheme;
use crate::{inner, norm_sqr, Complex64};

/// Channel estimates below this magnitude are treated as unusable.
pub const UNRELIABLE_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeConfig {
    pub gamma_bar: f64,
    /// Noise power per sample of the normalized feedback signal.
    pub sigma_z2: f64,
}

impl Default for UeConfig {
    fn default() -> Self {
        UeConfig { gamma_bar: 0.5, sigma_z2: 1e-4 }
    }
}

/// Last processing stage a user reached before deciding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pilot,
    UpperThreshold,
    LowerThreshold,
    Correlator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeDecision {
    pub retransmit: bool,
    pub stage: Stage,
    pub h_hat: Complex64,
    pub threshold_estimates: Vec<f64>,
    pub gamma: Option<Complex64>,
}

/// Scalar LMMSE `p^H y1 / (σ² + ‖p‖²)`.
pub fn estimate_channel(y1: &[Complex64], p: &[Complex64], sigma_z2: f64) -> Complex64 {
    inner(p, y1) / (sigma_z2 + norm_sqr(p))
}

/// Magnitude of the LMMSE estimate of the broadcast threshold. `None` when the
/// channel estimate is too weak to divide out.
pub fn estimate_threshold(y2: &[Complex64], p: &[Complex64], h_hat: Complex64, sigma_z2: f64) -> Option<f64> {
    if h_hat.norm() < UNRELIABLE_GAIN {
        return None;
    }
    let est = h_hat.conj() * inner(p, y2) / (sigma_z2 + h_hat.norm_sqr() * norm_sqr(p));
    Some(est.norm())
}

/// `γ = a^H y3 / ĥ`.
pub fn correlate(y3: &[Complex64], signature: &[Complex64], h_hat: Complex64) -> Option<Complex64> {
    (h_hat.norm() >= UNRELIABLE_GAIN).then(|| inner(signature, y3) / h_hat)
}

/// Algorithm 1.
pub fn decide_single(h_mag: f64, threshold: f64, gamma: Complex64, gamma_bar: f64) -> bool {
    if gamma.norm() > gamma_bar {
        h_mag >= threshold
    } else {
        h_mag < threshold
    }
}

/// Algorithm 2 with lazily evaluated stages. Returns the decision and the
/// stage at which it was taken; `lower` and `gamma` are only called when needed.
pub fn decide_double(
    h_mag: f64,
    upper: f64,
    lower: impl FnOnce() -> f64,
    gamma: impl FnOnce() -> Complex64,
    gamma_bar: f64,
) -> (bool, Stage) {
    if h_mag > upper {
        return (false, Stage::UpperThreshold);
    }
    if h_mag < lower() {
        return (true, Stage::LowerThreshold);
    }
    (gamma().norm() <= gamma_bar, Stage::Correlator)
}

/// Segment lengths of a received feedback packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketLayout {
    pub pilot_len: usize,
    pub threshold_blocks: usize,
    pub signature_len: usize,
}

impl PacketLayout {
    pub fn for_scheme(scheme: &FeedbackScheme, pilot_len: usize, signature_len: usize) -> Self {
        let threshold_blocks = match scheme {
            FeedbackScheme::PositiveOnly | FeedbackScheme::NegativeOnly => 0,
            FeedbackScheme::SingleThreshold { .. } => 1,
            FeedbackScheme::DoubleThreshold { .. } => 2,
        };
        PacketLayout { pilot_len, threshold_blocks, signature_len }
    }

    pub fn len(&self) -> usize {
        (1 + self.threshold_blocks) * self.pilot_len + self.signature_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn block(&self, i: usize) -> std::ops::Range<usize> {
        i * self.pilot_len..(i + 1) * self.pilot_len
    }
}

/// Full user-side processing of a received, normalized feedback signal
/// `y = h x_f + z`. `signature` must already be truncated to the packet's
/// signature length.
pub fn process_feedback(
    y: &[Complex64],
    scheme: &FeedbackScheme,
    layout: &PacketLayout,
    pilot: &[Complex64],
    signature: &[Complex64],
    cfg: &UeConfig,
) -> Result<UeDecision> {
    if y.len() != layout.len() || pilot.len() != layout.pilot_len || signature.len() != layout.signature_len {
        return Err(invalid("feedback signal does not match its packet layout"));
    }
    let h_hat = estimate_channel(&y[layout.block(0)], pilot, cfg.sigma_z2);
    let y3 = &y[(1 + layout.threshold_blocks) * layout.pilot_len..];
    let mut decision = UeDecision {
        retransmit: true,
        stage: Stage::Pilot,
        h_hat,
        threshold_estimates: Vec::new(),
        gamma: None,
    };
    if h_hat.norm() < UNRELIABLE_GAIN {
        return Ok(decision);
    }
    let h_mag = h_hat.norm();
    let threshold = |i: usize| estimate_threshold(&y[layout.block(i)], pilot, h_hat, cfg.sigma_z2).unwrap_or(0.0);
    match scheme {
        FeedbackScheme::PositiveOnly | FeedbackScheme::NegativeOnly => {
            let g = correlate(y3, signature, h_hat).expect("reliable channel");
            let present = g.norm() > cfg.gamma_bar;
            decision.retransmit = if matches!(scheme, FeedbackScheme::PositiveOnly) { !present } else { present };
            decision.gamma = Some(g);
            decision.stage = Stage::Correlator;
        }
        FeedbackScheme::SingleThreshold { .. } => {
            let t = threshold(1);
            let g = correlate(y3, signature, h_hat).expect("reliable channel");
            decision.threshold_estimates.push(t);
            decision.retransmit = decide_single(h_mag, t, g, cfg.gamma_bar);
            decision.gamma = Some(g);
            decision.stage = Stage::Correlator;
        }
        FeedbackScheme::DoubleThreshold { .. } => {
            let upper = threshold(1);
            decision.threshold_estimates.push(upper);
            let mut lower = None;
            let mut gamma = None;
            let (retx, stage) = decide_double(
                h_mag,
                upper,
                || *lower.insert(threshold(2)),
                || *gamma.insert(correlate(y3, signature, h_hat).expect("reliable channel")),
                cfg.gamma_bar,
            );
            decision.threshold_estimates.extend(lower);
            decision.gamma = gamma;
            decision.retransmit = retx;
            decision.stage = stage;
        }
    }
    Ok(decision)
}

/// Error-free reception: the user knows its channel magnitude and the exact
/// thresholds, and `γ` is 1 when its signature is in the packet and 0 otherwise.
pub fn genie_decision(scheme: &FeedbackScheme, h_mag: f64, thresholds: &[f64], targeted: bool, gamma_bar: f64) -> UeDecision {
    let gamma = Complex64::new(if targeted { 1.0 } else { 0.0 }, 0.0);
    let h_hat = Complex64::new(h_mag, 0.0);
    let (retransmit, stage, used, g) = match scheme {
        FeedbackScheme::PositiveOnly => (!targeted, Stage::Correlator, 0, Some(gamma)),
        FeedbackScheme::NegativeOnly => (targeted, Stage::Correlator, 0, Some(gamma)),
        FeedbackScheme::SingleThreshold { .. } => {
            (decide_single(h_mag, thresholds[0], gamma, gamma_bar), Stage::Correlator, 1, Some(gamma))
        }
        FeedbackScheme::DoubleThreshold { .. } => {
            let (r, s) = decide_double(h_mag, thresholds[0], || thresholds[1], || gamma, gamma_bar);
            let used = if s == Stage::UpperThreshold { 1 } else { 2 };
            (r, s, used, (s == Stage::Correlator).then_some(gamma))
        }
    };
    UeDecision { retransmit, stage, h_hat, threshold_estimates: thresholds[..used].to_vec(), gamma: g }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{add_noise, complex_gaussian};
    use crate::feedback_bs::{build_feedback, make_pilot, truncate_signature, BsEntry, BsView};
    use crate::tx_chain::build_sensing_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    const ONE: Complex64 = Complex64::new(1.0, 0.0);
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);

    #[test]
    fn channel_estimate_closed_form() {
        let p: Vec<Complex64> = vec![c(1.0, 1.0), c(0.5, -0.2), c(0.0, 2.0)];
        let pp = norm_sqr(&p);
        let h = c(0.3, -1.2);
        let y: Vec<Complex64> = p.iter().map(|v| h * v).collect();
        assert!((estimate_channel(&y, &p, 0.7) - h * pp / (0.7 + pp)).norm() < 1e-12);
        assert!((estimate_channel(&y, &p, 1e-14) - h).norm() < 1e-12);
        assert_eq!(estimate_channel(&[ZERO; 3], &p, 0.7), ZERO);
    }

    #[test]
    fn threshold_estimate_closed_form() {
        let p = make_pilot(3, 16);
        let h = c(-0.4, 0.9);
        let ct = 0.37;
        let y2: Vec<Complex64> = p.iter().map(|v| h * ct * v).collect();
        let s2 = 0.05;
        let want = ct * h.norm_sqr() / (s2 + h.norm_sqr());
        assert!((estimate_threshold(&y2, &p, h, s2).unwrap() - want).abs() < 1e-12);
        assert!((estimate_threshold(&y2, &p, h, 1e-15).unwrap() - ct).abs() < 1e-9);
        let zero: Vec<Complex64> = vec![ZERO; 16];
        assert_eq!(estimate_threshold(&zero, &p, h, s2), Some(0.0));
        assert_eq!(estimate_threshold(&y2, &p, ZERO, s2), None);
    }

    #[test]
    fn correlator_statistics() {
        let a = build_sensing_matrix(9, 2000, 6).unwrap();
        let h = c(0.6, 0.3);
        let y3: Vec<Complex64> = a.column(0).iter().map(|v| h * v).collect();
        assert!((correlate(&y3, a.column(0), h).unwrap() - 1.0).norm() < 1e-12);
        assert_eq!(correlate(&[ZERO; 2000], a.column(0), h).unwrap(), ZERO);
        assert_eq!(correlate(&y3, a.column(0), ZERO), None);

        // Absent signature against 30 interferers: |γ| spread ≈ √(30 / 2000).
        let mut sq = 0.0;
        let trials = 33;
        for t in 0..trials {
            let xbar: Vec<Complex64> = (0..2000).map(|i| (1..=30).map(|j| a.column(j + (t % 2) * 30)[i]).sum()).collect();
            let g = correlate(&xbar, a.column(63 - t % 2), ONE).unwrap();
            sq += g.norm_sqr();
        }
        let std = (sq / trials as f64).sqrt();
        let want = (30.0f64 / 2000.0).sqrt();
        assert!(std > 0.4 * want && std < 2.0 * want, "{std} vs {want}");

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sq = 0.0;
        let n = 400;
        for _ in 0..n {
            let sig: Vec<Complex64> = {
                let v: Vec<Complex64> = (0..2000).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
                let nn = norm_sqr(&v).sqrt();
                v.iter().map(|z| z / nn).collect()
            };
            let xbar: Vec<Complex64> = (0..2000).map(|i| (1..=30).map(|j| a.column(j)[i]).sum()).collect();
            sq += correlate(&xbar, &sig, ONE).unwrap().norm_sqr();
        }
        let std = (sq / n as f64).sqrt();
        assert!((std / want - 1.0).abs() < 0.1, "{std} vs {want}");
    }

    #[test]
    fn algorithm_one() {
        assert!(!decide_single(0.5, 1.0, c(0.9, 0.0), 0.5));
        assert!(!decide_single(1.5, 1.0, c(0.1, 0.0), 0.5));
        assert!(decide_single(1.5, 1.0, c(0.9, 0.0), 0.5));
        assert!(decide_single(0.5, 1.0, c(0.1, 0.0), 0.5));
    }

    #[test]
    fn algorithm_two_stops_early() {
        let r = decide_double(3.0, 2.0, || panic!("lower threshold read"), || panic!("correlator used"), 0.5);
        assert_eq!(r, (false, Stage::UpperThreshold));
        let r = decide_double(0.5, 2.0, || 1.0, || panic!("correlator used"), 0.5);
        assert_eq!(r, (true, Stage::LowerThreshold));
        assert_eq!(decide_double(1.5, 2.0, || 1.0, || c(0.8, 0.0), 0.5), (false, Stage::Correlator));
        assert_eq!(decide_double(1.5, 2.0, || 1.0, || c(0.2, 0.0), 0.5), (true, Stage::Correlator));
    }

    fn received(packet: &[Complex64], h: Complex64, s2: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        let mut y: Vec<Complex64> = packet.iter().map(|v| h * v).collect();
        add_noise(&mut y, s2, rng);
        y
    }

    #[test]
    fn end_to_end_reception() {
        let a = build_sensing_matrix(5, 500, 6).unwrap();
        let p = make_pilot(2, 64);
        let tau = 0.05;
        let view = BsView {
            entries: vec![
                BsEntry { nu: 1, h_hat: c(0.1, 0.0), decoded: true },
                BsEntry { nu: 2, h_hat: c(1.0, 0.0), decoded: false },
                BsEntry { nu: 3, h_hat: c(1.0, 0.0), decoded: true },
            ],
        };
        let cfg = UeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scheme = FeedbackScheme::SingleThreshold { c_tilde: 4.0 };
        let pk = build_feedback(&scheme, &view, &a, tau, &p, 500).unwrap();
        let layout = PacketLayout::for_scheme(&scheme, 64, 500);
        let flat = pk.to_flat();
        // (nu, true channel, expected retransmission)
        for &(nu, h, want) in &[(1, c(0.0, 0.1), false), (2, c(-0.9, 0.3), true), (3, c(0.7, 0.7), false), (9, c(0.05, 0.0), true)] {
            let y = received(&flat, h, cfg.sigma_z2, &mut rng);
            let d = process_feedback(&y, &scheme, &layout, &p, a.column(nu), &cfg).unwrap();
            assert_eq!(d.retransmit, want, "nu {nu}");
            assert_eq!(d.stage, Stage::Correlator);
            if h.norm() > 0.5 {
                assert!((d.threshold_estimates[0] - 0.2).abs() < 0.02);
            }
        }

        let scheme = FeedbackScheme::DoubleThreshold { c_tilde_1: 2.0, c_tilde_2: 12.0 };
        let view = BsView {
            entries: vec![
                BsEntry { nu: 1, h_hat: c(0.5, 0.0), decoded: true },
                BsEntry { nu: 3, h_hat: c(2.0, 0.0), decoded: true },
            ],
        };
        let pk = build_feedback(&scheme, &view, &a, 0.1, &p, 200).unwrap();
        assert_eq!(pk.included, vec![1]);
        let layout = PacketLayout::for_scheme(&scheme, 64, 200);
        let y = received(&pk.to_flat(), c(0.0, 0.5), cfg.sigma_z2, &mut rng);
        let d = process_feedback(&y, &scheme, &layout, &p, &truncate_signature(a.column(1), 200), &cfg).unwrap();
        assert_eq!((d.retransmit, d.stage), (false, Stage::Correlator));
        let y = received(&pk.to_flat(), c(1.9, 0.0), cfg.sigma_z2, &mut rng);
        let d = process_feedback(&y, &scheme, &layout, &p, &truncate_signature(a.column(3), 200), &cfg).unwrap();
        assert_eq!((d.retransmit, d.stage, d.gamma), (false, Stage::UpperThreshold, None));
        assert_eq!(d.threshold_estimates.len(), 1);

        let y = vec![ZERO; layout.len()];
        let d = process_feedback(&y, &scheme, &layout, &p, &truncate_signature(a.column(3), 200), &cfg).unwrap();
        assert!(d.retransmit);
        assert_eq!(d.stage, Stage::Pilot);
        assert!(process_feedback(&y[1..], &scheme, &layout, &p, &truncate_signature(a.column(3), 200), &cfg).is_err());
    }

    #[test]
    fn genie_single_threshold_decisions() {
        let s = FeedbackScheme::SingleThreshold { c_tilde: 2.0 };
        assert!(!genie_decision(&s, 3.0, &[1.0], false, 0.5).retransmit);
        assert!(genie_decision(&s, 3.0, &[1.0], true, 0.5).retransmit);
        assert!(!genie_decision(&s, 0.3, &[1.0], true, 0.5).retransmit);
        assert!(genie_decision(&s, 0.3, &[1.0], false, 0.5).retransmit);
        let d = FeedbackScheme::DoubleThreshold { c_tilde_1: 1.0, c_tilde_2: 2.0 };
        let g = genie_decision(&d, 3.0, &[2.0, 1.0], false, 0.5);
        assert_eq!((g.retransmit, g.stage), (false, Stage::UpperThreshold));
        assert!(genie_decision(&FeedbackScheme::PositiveOnly, 1.0, &[], false, 0.5).retransmit);
        assert!(!genie_decision(&FeedbackScheme::NegativeOnly, 1.0, &[], false, 0.5).retransmit);
    }
}
