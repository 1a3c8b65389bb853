//! Base-station side of the feedback link: user classification against the
//! broadcast thresholds and construction of the feedback packet.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad_amp::ActivityEstimate;
use crate::channel::complex_gaussian;
use crate::error::{invalid, Result};
use crate::mud::{MudOutput, UserStatus};
use crate::tx_chain::SensingMatrix;
use crate::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FeedbackScheme {
    PositiveOnly,
    NegativeOnly,
    SingleThreshold { c_tilde: f64 },
    DoubleThreshold { c_tilde_1: f64, c_tilde_2: f64 },
}

impl FeedbackScheme {
    pub fn name(&self) -> &'static str {
        match self {
            FeedbackScheme::PositiveOnly => "positive_only",
            FeedbackScheme::NegativeOnly => "negative_only",
            FeedbackScheme::SingleThreshold { .. } => "single_threshold",
            FeedbackScheme::DoubleThreshold { .. } => "double_threshold",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FeedbackScheme::SingleThreshold { c_tilde } if !(c_tilde > 0.0) => {
                Err(invalid("c_tilde must be positive"))
            }
            FeedbackScheme::DoubleThreshold { c_tilde_1, c_tilde_2 } if !(c_tilde_1 > 0.0 && c_tilde_1 < c_tilde_2) => {
                Err(invalid("double threshold requires 0 < c_tilde_1 < c_tilde_2"))
            }
            _ => Ok(()),
        }
    }

    /// Absolute thresholds for an AMP noise scale `tau`.
    pub fn thresholds(&self, tau: f64) -> Thresholds {
        match *self {
            FeedbackScheme::PositiveOnly | FeedbackScheme::NegativeOnly => Thresholds::None,
            FeedbackScheme::SingleThreshold { c_tilde } => Thresholds::Single(c_tilde * tau),
            FeedbackScheme::DoubleThreshold { c_tilde_1, c_tilde_2 } => {
                Thresholds::Double { lower: c_tilde_1 * tau, upper: c_tilde_2 * tau }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Thresholds {
    None,
    Single(f64),
    Double { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Detected and decoded.
    Success,
    /// Detected, not decoded.
    Failed,
    Missed,
}

/// Position of a channel magnitude relative to the thresholds. With a single
/// threshold only `Below` and `Above` occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Below,
    Between,
    Above,
}

pub fn region(magnitude: f64, thresholds: Thresholds) -> Region {
    match thresholds {
        Thresholds::None => Region::Above,
        Thresholds::Single(t) => {
            if magnitude >= t {
                Region::Above
            } else {
                Region::Below
            }
        }
        Thresholds::Double { lower, upper } => {
            if magnitude >= upper {
                Region::Above
            } else if magnitude >= lower {
                Region::Between
            } else {
                Region::Below
            }
        }
    }
}

/// What the base station knows about one detected preamble index.
#[derive(Debug, Clone, PartialEq)]
pub struct BsEntry {
    pub nu: usize,
    pub h_hat: Complex64,
    pub decoded: bool,
}

/// Base-station view of a slot, sorted by preamble index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BsView {
    pub entries: Vec<BsEntry>,
}

impl BsView {
    /// Channel magnitudes come from the activity detector, decoding status from the MUD.
    pub fn new(activity: &ActivityEstimate, mud: &MudOutput) -> Self {
        let entries = activity
            .detected
            .iter()
            .zip(&activity.h_hat)
            .map(|(&nu, &h)| BsEntry {
                nu,
                h_hat: h,
                decoded: mud.users.iter().any(|u| u.nu == nu && u.status == UserStatus::Decoded),
            })
            .collect();
        BsView { entries }
    }

    pub fn get(&self, nu: usize) -> Option<&BsEntry> {
        self.entries.binary_search_by_key(&nu, |e| e.nu).ok().map(|i| &self.entries[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserClass {
    pub outcome: Outcome,
    pub region: Region,
    /// `|ĥ|` for detected users, true `|h|` for missed users.
    pub magnitude: f64,
}

/// Cardinalities of the user sets. `*_above` and `*_below` refer to the single
/// threshold (or the upper one and the lower one for the double threshold);
/// `*_between` are the users between the two thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SetCounts {
    pub s_a: usize,
    pub f_a: usize,
    pub f_md: usize,
    pub s_a_above: usize,
    pub s_a_between: usize,
    pub s_a_below: usize,
    pub f_a_above: usize,
    pub f_a_between: usize,
    pub f_a_below: usize,
    pub f_md_above: usize,
    pub f_md_between: usize,
    pub f_md_below: usize,
}

impl SetCounts {
    fn add(&mut self, c: &UserClass) {
        let (total, above, between, below) = match c.outcome {
            Outcome::Success => (&mut self.s_a, &mut self.s_a_above, &mut self.s_a_between, &mut self.s_a_below),
            Outcome::Failed => (&mut self.f_a, &mut self.f_a_above, &mut self.f_a_between, &mut self.f_a_below),
            Outcome::Missed => (&mut self.f_md, &mut self.f_md_above, &mut self.f_md_between, &mut self.f_md_below),
        };
        *total += 1;
        match c.region {
            Region::Above => *above += 1,
            Region::Between => *between += 1,
            Region::Below => *below += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserSets {
    /// One entry per active user, in input order.
    pub classes: Vec<UserClass>,
    pub counts: SetCounts,
}

/// Classifies active users from their preamble indices and true channel
/// magnitudes. Users sharing an index share the base-station record.
pub fn classify_users(user_nus: &[usize], true_gains: &[f64], view: &BsView, thresholds: Thresholds) -> UserSets {
    let mut counts = SetCounts::default();
    let classes = user_nus
        .iter()
        .zip(true_gains)
        .map(|(&nu, &g)| {
            let (outcome, magnitude) = match view.get(nu) {
                Some(e) if e.decoded => (Outcome::Success, e.h_hat.norm()),
                Some(e) => (Outcome::Failed, e.h_hat.norm()),
                None => (Outcome::Missed, g),
            };
            let c = UserClass { outcome, region: region(magnitude, thresholds), magnitude };
            counts.add(&c);
            c
        })
        .collect();
    UserSets { classes, counts }
}

/// Whether a detected index receives a targeted signature under `scheme`.
pub fn is_targeted(scheme: &FeedbackScheme, entry: &BsEntry, thresholds: Thresholds) -> bool {
    let r = region(entry.h_hat.norm(), thresholds);
    match scheme {
        FeedbackScheme::PositiveOnly => entry.decoded,
        FeedbackScheme::NegativeOnly => !entry.decoded,
        FeedbackScheme::SingleThreshold { .. } => {
            (entry.decoded && r == Region::Below) || (!entry.decoded && r == Region::Above)
        }
        FeedbackScheme::DoubleThreshold { .. } => entry.decoded && r == Region::Between,
    }
}

/// Base-station cost, i.e. the users whose signatures the packet carries.
pub fn cost_bs(scheme: &FeedbackScheme, c: &SetCounts) -> usize {
    match scheme {
        FeedbackScheme::PositiveOnly => c.s_a,
        FeedbackScheme::NegativeOnly => c.f_a,
        FeedbackScheme::SingleThreshold { .. } => c.s_a_below + c.f_a_above,
        FeedbackScheme::DoubleThreshold { .. } => c.s_a_between,
    }
}

/// User-side cost: users that must process the targeted part of the packet.
pub fn cost_ue(scheme: &FeedbackScheme, c: &SetCounts) -> usize {
    match scheme {
        FeedbackScheme::DoubleThreshold { .. } => c.s_a_between + c.f_a_between + c.f_md_between,
        _ => c.s_a + c.f_a + c.f_md,
    }
}

/// First `l_f` entries of a signature, rescaled to unit norm.
pub fn truncate_signature(a: &[Complex64], l_f: usize) -> Vec<Complex64> {
    let l = l_f.clamp(1, a.len());
    let part = &a[..l];
    let n = part.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n == 0.0 {
        return part.to_vec();
    }
    part.iter().map(|z| z / n).collect()
}

/// Signature length for a fraction `rho` of the preamble length.
pub fn signature_length(n_p: usize, rho: f64) -> usize {
    ((rho * n_p as f64).ceil() as usize).clamp(1, n_p)
}

/// Unit-norm pseudo-random pilot known to every user.
pub fn make_pilot(seed: u64, len: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7069_6c6f_7400_0000);
    let mut p: Vec<Complex64> = (0..len).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
    let n = p.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    p.iter_mut().for_each(|z| *z /= n);
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPacket {
    pub scheme: FeedbackScheme,
    pub pilot: Vec<Complex64>,
    /// Scaled pilots; for the double threshold the upper one comes first.
    pub threshold_blocks: Vec<Vec<Complex64>>,
    pub threshold_values: Vec<f64>,
    pub xbar: Vec<Complex64>,
    pub signature_len: usize,
    /// Preamble indices whose signatures make up `xbar`.
    pub included: Vec<usize>,
}

impl FeedbackPacket {
    /// `[p, threshold blocks…, x̄]`.
    pub fn to_flat(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.pilot);
        for b in &self.threshold_blocks {
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.xbar);
        out
    }

    pub fn len(&self) -> usize {
        (1 + self.threshold_blocks.len()) * self.pilot.len() + self.xbar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the broadcast packet. Baselines carry `[p, x̄]` so users can
/// estimate their channel before correlating.
pub fn build_feedback(
    scheme: &FeedbackScheme,
    view: &BsView,
    a: &SensingMatrix,
    tau: f64,
    pilot: &[Complex64],
    signature_len: usize,
) -> Result<FeedbackPacket> {
    scheme.validate()?;
    if signature_len == 0 || signature_len > a.rows() {
        return Err(invalid(format!("signature length {signature_len} outside 1..={}", a.rows())));
    }
    let thresholds = scheme.thresholds(tau);
    let included: Vec<usize> = view
        .entries
        .iter()
        .filter(|e| is_targeted(scheme, e, thresholds))
        .map(|e| e.nu)
        .collect();
    let mut xbar = vec![Complex64::new(0.0, 0.0); signature_len];
    for &nu in &included {
        for (x, s) in xbar.iter_mut().zip(truncate_signature(a.column(nu), signature_len)) {
            *x += s;
        }
    }
    let threshold_values = match thresholds {
        Thresholds::None => Vec::new(),
        Thresholds::Single(t) => vec![t],
        Thresholds::Double { lower, upper } => vec![upper, lower],
    };
    let threshold_blocks = threshold_values.iter().map(|&t| pilot.iter().map(|p| p * t).collect()).collect();
    Ok(FeedbackPacket {
        scheme: *scheme,
        pilot: pilot.to_vec(),
        threshold_blocks,
        threshold_values,
        xbar,
        signature_len,
        included,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tx_chain::build_sensing_matrix;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn view(entries: &[(usize, f64, bool)]) -> BsView {
        BsView {
            entries: entries.iter().map(|&(nu, m, decoded)| BsEntry { nu, h_hat: c(0.0, m), decoded }).collect(),
        }
    }

    #[test]
    fn single_threshold_membership() {
        let v = view(&[(1, 2.0, true), (2, 0.5, true), (3, 2.0, false), (4, 0.5, false)]);
        let sets = classify_users(&[1, 2, 3, 4, 9, 10], &[0.0, 0.0, 0.0, 0.0, 0.3, 3.0], &v, Thresholds::Single(1.0));
        let k = &sets.counts;
        assert_eq!((k.s_a_above, k.s_a_below, k.f_a_above, k.f_a_below, k.f_md_below, k.f_md_above), (1, 1, 1, 1, 1, 1));
        assert_eq!(sets.classes[4].outcome, Outcome::Missed);
        assert_eq!(sets.classes[4].region, Region::Below);
        // Exactly at the threshold counts as above.
        let sets = classify_users(&[7], &[1.0], &view(&[]), Thresholds::Single(1.0));
        assert_eq!(sets.classes[0].region, Region::Above);
    }

    #[test]
    fn double_threshold_membership() {
        let v = view(&[(1, 1.5, true), (2, 2.5, true), (3, 0.2, true)]);
        let t = Thresholds::Double { lower: 1.0, upper: 2.0 };
        let sets = classify_users(&[1, 2, 3], &[0.0; 3], &v, t);
        assert_eq!(sets.counts.s_a_between, 1);
        assert_eq!(sets.counts.s_a_above, 1);
        assert_eq!(sets.counts.s_a_below, 1);
    }

    #[test]
    fn colliding_users_share_the_record() {
        let v = view(&[(5, 1.2, true)]);
        let sets = classify_users(&[5, 5], &[0.1, 3.0], &v, Thresholds::Single(1.0));
        assert_eq!(sets.counts.s_a_above, 2);
    }

    #[test]
    fn baseline_packets() {
        let a = build_sensing_matrix(2, 32, 5).unwrap();
        let p = make_pilot(1, 8);
        let v = view(&[(3, 1.0, true), (4, 1.0, false)]);
        let pos = build_feedback(&FeedbackScheme::PositiveOnly, &v, &a, 0.1, &p, 32).unwrap();
        assert_eq!(pos.included, vec![3]);
        assert_eq!(pos.xbar, a.column(3).to_vec());
        assert_eq!(pos.len(), 40);
        let neg = build_feedback(&FeedbackScheme::NegativeOnly, &v, &a, 0.1, &p, 32).unwrap();
        assert_eq!(neg.xbar, a.column(4).to_vec());
        let empty = build_feedback(&FeedbackScheme::NegativeOnly, &view(&[(3, 1.0, true)]), &a, 0.1, &p, 32).unwrap();
        assert!(empty.xbar.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn threshold_packets_layout() {
        let a = build_sensing_matrix(2, 32, 5).unwrap();
        let p = make_pilot(1, 8);
        assert!((p.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs() < 1e-12);
        let tau = 0.1;
        let s = FeedbackScheme::SingleThreshold { c_tilde: 4.0 };
        let pk = build_feedback(&s, &view(&[(1, 1.0, true)]), &a, tau, &p, 32).unwrap();
        assert!(pk.included.is_empty() && pk.xbar.iter().all(|z| z.norm() == 0.0));
        let flat = pk.to_flat();
        assert_eq!(flat.len(), 8 + 8 + 32);
        for i in 0..8 {
            assert!((flat[8 + i] - p[i] * 0.4).norm() < 1e-15);
        }
        let d = FeedbackScheme::DoubleThreshold { c_tilde_1: 4.0, c_tilde_2: 12.0 };
        let pk = build_feedback(&d, &view(&[(1, 0.5, true), (2, 2.0, true)]), &a, tau, &p, 32).unwrap();
        assert_eq!(pk.included, vec![1]);
        assert_eq!(pk.xbar, a.column(1).to_vec());
        assert_eq!(pk.threshold_values.len(), 2);
        assert!((pk.threshold_values[0] - 1.2).abs() < 1e-12 && (pk.threshold_values[1] - 0.4).abs() < 1e-12);
        let pk = build_feedback(&d, &view(&[(2, 2.0, true)]), &a, tau, &p, 32).unwrap();
        assert!(pk.included.is_empty());
        assert!(build_feedback(&FeedbackScheme::DoubleThreshold { c_tilde_1: 3.0, c_tilde_2: 2.0 }, &view(&[]), &a, tau, &p, 32).is_err());
        assert!(build_feedback(&s, &view(&[]), &a, tau, &p, 33).is_err());
    }

    #[test]
    fn signature_truncation() {
        let a = build_sensing_matrix(4, 2000, 3).unwrap();
        let col = a.column(2);
        let full = truncate_signature(col, 2000);
        assert!(full.iter().zip(col).all(|(x, y)| (x - y).norm() < 1e-12));
        let l = signature_length(2000, 0.1);
        assert_eq!(l, 200);
        let t = truncate_signature(col, l);
        assert_eq!(t.len(), 200);
        assert!((t.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn partitions_and_costs(
            recs in proptest::collection::vec((0.0f64..3.0, proptest::bool::ANY), 0..30),
            users in proptest::collection::vec((0usize..40, 0.0f64..3.0), 1..60),
            c1 in 0.1f64..1.0,
            gap in 0.1f64..2.0,
        ) {
            let v = view(&recs.iter().enumerate().map(|(i, &(m, d))| (i, m, d)).collect::<Vec<_>>());
            let nus: Vec<usize> = users.iter().map(|u| u.0).collect();
            let gains: Vec<f64> = users.iter().map(|u| u.1).collect();
            let single = classify_users(&nus, &gains, &v, Thresholds::Single(c1)).counts;
            prop_assert_eq!(single.s_a + single.f_a + single.f_md, users.len());
            prop_assert_eq!(single.s_a_above + single.s_a_below, single.s_a);
            prop_assert_eq!(single.f_a_above + single.f_a_below, single.f_a);
            prop_assert_eq!(single.f_md_above + single.f_md_below, single.f_md);
            prop_assert_eq!(single.s_a_between + single.f_a_between + single.f_md_between, 0);
            let double = classify_users(&nus, &gains, &v, Thresholds::Double { lower: c1, upper: c1 + gap }).counts;
            prop_assert_eq!(double.s_a_above + double.s_a_between + double.s_a_below, double.s_a);
            prop_assert_eq!(double.f_a_above + double.f_a_between + double.f_a_below, double.f_a);
            prop_assert_eq!(double.f_md_above + double.f_md_between + double.f_md_below, double.f_md);
            prop_assert_eq!(cost_bs(&FeedbackScheme::PositiveOnly, &single), single.s_a);
            prop_assert_eq!(cost_bs(&FeedbackScheme::NegativeOnly, &single), single.f_a);
            let s = FeedbackScheme::SingleThreshold { c_tilde: 1.0 };
            prop_assert_eq!(cost_bs(&s, &single), single.s_a_below + single.f_a_above);
            prop_assert_eq!(cost_ue(&s, &single), users.len());
            let d = FeedbackScheme::DoubleThreshold { c_tilde_1: 1.0, c_tilde_2: 2.0 };
            prop_assert!(cost_ue(&d, &double) <= users.len());
        }

        #[test]
        fn raising_threshold_moves_failures_below(
            mags in proptest::collection::vec(0.0f64..3.0, 1..40),
        ) {
            let v = view(&mags.iter().enumerate().map(|(i, &m)| (i, m, false)).collect::<Vec<_>>());
            let nus: Vec<usize> = (0..mags.len()).collect();
            let mut prev: Option<SetCounts> = None;
            for k in 2..=12 {
                let cur = classify_users(&nus, &mags, &v, Thresholds::Single(k as f64 * 0.2)).counts;
                if let Some(p) = prev {
                    prop_assert!(cur.f_a_below >= p.f_a_below);
                    prop_assert!(cur.f_a_above <= p.f_a_above);
                }
                prev = Some(cur);
            }
        }
    }
}
