//! Closed-loop simulation: one slot of feed-forward transmission followed by a
//! feedback slot, multi-slot runs with re-transmissions, and the Eb/N0 sweep.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad_amp::{amp_detect, ActivityEstimate, AmpConfig};
use crate::channel::{add_noise, draw_channels};
use crate::error::{invalid, Result};
use crate::fec::CodeSpec;
use crate::feedback_bs::{
    build_feedback, classify_users, cost_bs, make_pilot, signature_length, truncate_signature, BsView,
    FeedbackScheme, Outcome, SetCounts, Thresholds,
};
use crate::feedback_ue::{genie_decision, process_feedback, PacketLayout, Stage, UeConfig};
use crate::mud::{alpha_schedule_db, mud_decode, MudConfig};
use crate::tx_chain::{build_packet, build_sensing_matrix, payload_symbols, FrameLayout, SensingMatrix};
use crate::{db_to_lin, lin_to_db, Complex64};

/// Information bits per message.
pub const INFO_BITS: usize = 100;

pub fn pupe(errors: usize, k_a: usize) -> Option<f64> {
    (k_a > 0).then(|| errors as f64 / k_a as f64)
}

/// Feed-forward Eb/N0 inflated by the re-transmission rate `p_e`.
pub fn equivalent_ebn0(ff_ebn0_db: f64, p_e: f64) -> f64 {
    ff_ebn0_db + 10.0 * (1.0 + p_e).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PowerSpec {
    /// Separate preamble and payload energies, each as Eb/N0 over the message bits.
    Split { preamble_db: f64, payload_db: f64 },
    /// One total Eb/N0 spread evenly over every channel use.
    Uniform { total_db: f64 },
}

impl PowerSpec {
    /// Total preamble and payload energies for `n_p` preamble and `n_sym` payload symbols (N0 = 1).
    pub fn energies(&self, n_p: usize, n_sym: usize) -> (f64, f64) {
        let n = INFO_BITS as f64;
        match *self {
            PowerSpec::Split { preamble_db, payload_db } => (n * db_to_lin(preamble_db), n * db_to_lin(payload_db)),
            PowerSpec::Uniform { total_db } => {
                let per_use = n * db_to_lin(total_db) / (n_p + n_sym) as f64;
                (per_use * n_p as f64, per_use * n_sym as f64)
            }
        }
    }

    pub fn ff_ebn0_db(&self, n_p: usize, n_sym: usize) -> f64 {
        let (e_p, e_d) = self.energies(n_p, n_sym);
        lin_to_db((e_p + e_d) / INFO_BITS as f64)
    }

    /// The swept quantity: payload Eb/N0 for split power, total Eb/N0 otherwise.
    pub fn sweep_value(&self) -> f64 {
        match *self {
            PowerSpec::Split { payload_db, .. } => payload_db,
            PowerSpec::Uniform { total_db } => total_db,
        }
    }

    pub fn with_sweep_value(self, v: f64) -> Self {
        match self {
            PowerSpec::Split { preamble_db, .. } => PowerSpec::Split { preamble_db, payload_db: v },
            PowerSpec::Uniform { .. } => PowerSpec::Uniform { total_db: v },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CodeConfig {
    Hamming,
    Polar { coded_len: usize, crc_len: usize, list_size: usize, design_snr_db: f64 },
}

impl CodeConfig {
    pub fn build(&self) -> Result<CodeSpec> {
        match *self {
            CodeConfig::Hamming => Ok(CodeSpec::hamming_109_100()),
            CodeConfig::Polar { coded_len, crc_len, list_size, design_snr_db } => {
                CodeSpec::polar_crc(INFO_BITS, crc_len, coded_len, list_size, design_snr_db)
            }
        }
    }

    pub fn coded_len(&self) -> usize {
        match *self {
            CodeConfig::Hamming => crate::fec::hamming::CODED_LEN,
            CodeConfig::Polar { coded_len, .. } => coded_len,
        }
    }
}

/// Bisection target for the minimum-energy search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub target_pupe: f64,
    pub tolerance: f64,
    /// Centre of the search interval, in the units of [`PowerSpec::sweep_value`].
    pub center_db: f64,
    pub span_db: f64,
    pub max_iters: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { target_pupe: 0.05, tolerance: 0.005, center_db: 0.0, span_db: 6.0, max_iters: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub k_a: usize,
    pub n_p: usize,
    pub n_d: usize,
    pub preamble_bits: usize,
    pub repetition: usize,
    pub code: CodeConfig,
    pub power: PowerSpec,
    pub feedback_ebn0_db: f64,
    /// `None` runs the feed-forward link alone.
    pub scheme: Option<FeedbackScheme>,
    pub gamma_bar: f64,
    pub signature_fraction: f64,
    pub pilot_len: usize,
    pub amp_c: f64,
    pub amp_max_iters: usize,
    pub mud_max_iters: usize,
    /// Fixed FEC activation threshold; the load-dependent schedule when absent.
    pub alpha_db: Option<f64>,
    /// Accept decoded messages only if some active user sent them (codes without CRC).
    pub higher_layer_check: bool,
    pub genie_feedback: bool,
    pub max_retransmissions: u32,
    pub slots: usize,
    pub trials: usize,
    pub seed: u64,
    pub dictionary_seed: u64,
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(invalid(msg.to_string())) };
        need(self.k_a > 0, "k_a must be at least 1")?;
        need(self.n_p > 0 && self.n_d > 0, "n_p and n_d must be positive")?;
        need(self.preamble_bits >= 1 && self.preamble_bits < self.code.coded_len(), "preamble_bits must lie in 1..coded_len")?;
        need(self.repetition >= 1, "repetition must be at least 1")?;
        let b_d = self.code.coded_len() - self.preamble_bits;
        need(payload_symbols(self.repetition, b_d) <= self.n_d, "repetition × payload bits exceed the payload length")?;
        need(self.gamma_bar > 0.0, "gamma_bar must be positive")?;
        need(self.signature_fraction > 0.0 && self.signature_fraction <= 1.0, "signature_fraction must lie in (0, 1]")?;
        need(self.pilot_len >= 1, "pilot_len must be at least 1")?;
        need(self.amp_c > 0.0, "amp_c must be positive")?;
        need(self.amp_max_iters >= 1 && self.mud_max_iters >= 1, "iteration caps must be at least 1")?;
        need(self.slots >= 1 && self.trials >= 1, "slots and trials must be at least 1")?;
        if let Some(s) = &self.scheme {
            s.validate()?;
        }
        Ok(())
    }

    pub fn payload_symbols(&self) -> usize {
        payload_symbols(self.repetition, self.code.coded_len() - self.preamble_bits)
    }

    pub fn ff_ebn0_db(&self) -> f64 {
        self.power.ff_ebn0_db(self.n_p, self.payload_symbols())
    }

    pub fn dictionary(&self) -> Result<SensingMatrix> {
        build_sensing_matrix(self.dictionary_seed, self.n_p, self.preamble_bits)
    }
}

/// A message awaiting delivery. `transmissions` counts earlier attempts.
#[derive(Debug, Clone, PartialEq)]
pub struct TxUser {
    pub id: u64,
    pub info_bits: Vec<u8>,
    pub transmissions: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SlotMetrics {
    pub k_a: usize,
    pub new_users: usize,
    pub retransmitters: usize,
    pub pupe_ff: f64,
    /// Users outside `S_a` that do not re-transmit, over `K_a`.
    pub pupe_fb: f64,
    /// Users in `S_a` told to re-transmit anyway, over `K_a`.
    pub spurious_retx: f64,
    #[serde(flatten)]
    pub sets: SetCounts,
    pub c_bs: usize,
    /// Failed users between the two thresholds.
    pub c_bs_between_failed: usize,
    pub c_ue: usize,
    pub p_c: f64,
    pub detected: usize,
    pub false_alarms: usize,
    pub targeted_false_alarms: usize,
    pub decoded: usize,
    pub collided_users: usize,
    pub tau: f64,
    pub amp_iterations: usize,
    pub mud_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub metrics: SlotMetrics,
    /// Per input user: its message was recovered in this slot.
    pub delivered: Vec<bool>,
    /// Per input user: decided to re-transmit and still has budget.
    pub retransmit: Vec<bool>,
}

/// Static state shared by every slot of an experiment.
pub struct SimContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub a: &'a SensingMatrix,
    pub code: CodeSpec,
    pub layout: FrameLayout,
    pub pilot: Vec<Complex64>,
    pub signature_len: usize,
}

impl<'a> SimContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, a: &'a SensingMatrix) -> Result<Self> {
        cfg.validate()?;
        if a.rows() != cfg.n_p || a.preamble_bits() != cfg.preamble_bits {
            return Err(invalid("dictionary shape does not match the configuration"));
        }
        Ok(SimContext {
            cfg,
            a,
            code: cfg.code.build()?,
            layout: FrameLayout {
                preamble_bits: cfg.preamble_bits,
                repetition: cfg.repetition,
                payload_len: cfg.n_d,
                sequence_seed: cfg.dictionary_seed,
            },
            pilot: make_pilot(cfg.dictionary_seed, cfg.pilot_len),
            signature_len: signature_length(cfg.n_p, cfg.signature_fraction),
        })
    }
}

pub fn random_message<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    (0..INFO_BITS).map(|_| rng.gen_range(0..2u8)).collect()
}

/// Everything the feedback stage needs from one feed-forward slot.
#[derive(Debug, Clone)]
pub struct FeedForward {
    /// Preamble index per input user.
    pub nus: Vec<usize>,
    /// True channel per input user.
    pub h: Vec<Complex64>,
    pub activity: ActivityEstimate,
    pub view: BsView,
    pub delivered: Vec<bool>,
    /// Feed-forward fields filled; feedback fields zero.
    pub metrics: SlotMetrics,
}

impl FeedForward {
    pub fn gains(&self) -> Vec<f64> {
        self.h.iter().map(|v| v.norm()).collect()
    }
}

/// Transmits `users` over one slot and runs activity detection and decoding.
pub fn feed_forward<R: Rng + ?Sized>(ctx: &SimContext<'_>, users: &[TxUser], rng: &mut R) -> Result<FeedForward> {
    let cfg = ctx.cfg;
    let k_a = users.len();
    let packets = users
        .iter()
        .map(|u| build_packet(u.id, &u.info_bits, &ctx.code, &ctx.layout))
        .collect::<Result<Vec<_>>>()?;
    let h = draw_channels(rng, k_a);
    let n_sym = cfg.payload_symbols();
    let (e_p, e_d) = cfg.power.energies(cfg.n_p, n_sym);
    let p_d = e_d / n_sym as f64;

    // Received signals scaled so that user k contributes h_k times its unit-power signal.
    let entries: Vec<(usize, Complex64)> = packets.iter().zip(&h).map(|(p, &hk)| (p.preamble_index, hk)).collect();
    let mut y_p = ctx.a.apply_sparse(&entries);
    add_noise(&mut y_p, 1.0 / e_p, rng);
    let mut y_d = vec![Complex64::new(0.0, 0.0); cfg.n_d];
    for (p, hk) in packets.iter().zip(&h) {
        for (y, x) in y_d.iter_mut().zip(&p.payload) {
            *y += hk * x;
        }
    }
    add_noise(&mut y_d, 1.0 / p_d, rng);

    let amp_cfg = AmpConfig { c: cfg.amp_c, max_iters: cfg.amp_max_iters, ..AmpConfig::for_load(k_a, cfg.preamble_bits) };
    let activity = amp_detect(&y_p, ctx.a, &amp_cfg)?;
    let mud_cfg = MudConfig {
        alpha_db: cfg.alpha_db.unwrap_or_else(|| alpha_schedule_db(activity.detected.len())),
        max_iters: cfg.mud_max_iters,
    };
    let sent: HashSet<(usize, &[u8])> = packets.iter().map(|p| (p.preamble_index, &p.info_bits[..])).collect();
    let check = |nu: usize, bits: &[u8]| sent.contains(&(nu, bits));
    let check_ref: &(dyn Fn(usize, &[u8]) -> bool + Sync) = &check;
    let mud = mud_decode(&y_d, &activity, &mud_cfg, &ctx.code, &ctx.layout, cfg.higher_layer_check.then_some(check_ref))?;

    // Truth: each decoded message credits at most one user.
    let mut delivered = vec![false; k_a];
    for u in mud.decoded() {
        let bits = u.info_bits.as_deref().expect("decoded users carry bits");
        if let Some(i) = (0..k_a).find(|&i| !delivered[i] && packets[i].preamble_index == u.nu && packets[i].info_bits == bits) {
            delivered[i] = true;
        }
    }
    let nus: Vec<usize> = packets.iter().map(|p| p.preamble_index).collect();
    let nu_count = multiplicity(&nus);
    let view = BsView::new(&activity, &mud);
    let false_alarms = view.entries.iter().filter(|e| !nu_count.contains_key(&e.nu)).count();

    let metrics = SlotMetrics {
        k_a,
        new_users: users.iter().filter(|u| u.transmissions == 0).count(),
        retransmitters: users.iter().filter(|u| u.transmissions > 0).count(),
        pupe_ff: pupe(delivered.iter().filter(|d| !**d).count(), k_a).unwrap_or(0.0),
        detected: activity.detected.len(),
        false_alarms,
        decoded: mud.decoded().count(),
        collided_users: nus.iter().filter(|nu| nu_count[nu] > 1).count(),
        tau: activity.tau,
        amp_iterations: activity.iterations_run,
        mud_iterations: mud.iterations,
        ..SlotMetrics::default()
    };
    Ok(FeedForward { nus, h, activity, view, delivered, metrics })
}

fn multiplicity(nus: &[usize]) -> HashMap<usize, usize> {
    let mut m = HashMap::new();
    for &nu in nus {
        *m.entry(nu).or_insert(0) += 1;
    }
    m
}

/// One feed-forward slot and its feedback slot.
pub fn run_slot<R: Rng + ?Sized>(ctx: &SimContext<'_>, users: &[TxUser], rng: &mut R) -> Result<SlotOutcome> {
    let ff = feed_forward(ctx, users, rng)?;
    feedback_slot(ctx, ctx.cfg.scheme.as_ref(), users, &ff, rng)
}

/// Builds, delivers and interprets the feedback for a finished feed-forward
/// slot. `scheme = None` leaves every user silent.
pub fn feedback_slot<R: Rng + ?Sized>(
    ctx: &SimContext<'_>,
    scheme: Option<&FeedbackScheme>,
    users: &[TxUser],
    ff: &FeedForward,
    rng: &mut R,
) -> Result<SlotOutcome> {
    let cfg = ctx.cfg;
    let k_a = users.len();
    if ff.nus.len() != k_a {
        return Err(invalid("feed-forward result does not match the user list"));
    }
    let (nus, h, activity, view) = (&ff.nus, &ff.h, &ff.activity, &ff.view);
    let nu_count = multiplicity(nus);
    let mut metrics = ff.metrics.clone();
    let delivered = ff.delivered.clone();
    let gains = ff.gains();

    let Some(scheme) = scheme else {
        metrics.sets = classify_users(nus, &gains, view, Thresholds::None).counts;
        return Ok(SlotOutcome { metrics, delivered, retransmit: vec![false; k_a] });
    };

    let thresholds = scheme.thresholds(activity.tau);
    let sets = classify_users(nus, &gains, view, thresholds);
    let packet = build_feedback(scheme, view, ctx.a, activity.tau, &ctx.pilot, ctx.signature_len)?;
    let targeted: HashSet<usize> = packet.included.iter().copied().collect();

    let decisions = if cfg.genie_feedback {
        sets.classes
            .iter()
            .zip(nus)
            .map(|(c, nu)| genie_decision(scheme, c.magnitude, &packet.threshold_values, targeted.contains(nu), cfg.gamma_bar))
            .collect::<Vec<_>>()
    } else {
        let flat = packet.to_flat();
        let ue = UeConfig { gamma_bar: cfg.gamma_bar, sigma_z2: 1.0 / (INFO_BITS as f64 * db_to_lin(cfg.feedback_ebn0_db)) };
        let layout = PacketLayout::for_scheme(scheme, ctx.pilot.len(), ctx.signature_len);
        let mut out = Vec::with_capacity(k_a);
        for (hk, nu) in h.iter().zip(nus) {
            let mut y: Vec<Complex64> = flat.iter().map(|x| hk * x).collect();
            add_noise(&mut y, ue.sigma_z2, rng);
            let sig = truncate_signature(ctx.a.column(*nu), ctx.signature_len);
            out.push(process_feedback(&y, scheme, &layout, &ctx.pilot, &sig, &ue)?);
        }
        out
    };

    let mut fb_errors = 0;
    let mut spurious = 0;
    for (c, d) in sets.classes.iter().zip(&decisions) {
        match (c.outcome == Outcome::Success, d.retransmit) {
            (false, false) => fb_errors += 1,
            (true, true) => spurious += 1,
            _ => {}
        }
    }
    metrics.sets = sets.counts;
    metrics.pupe_fb = fb_errors as f64 / k_a as f64;
    metrics.spurious_retx = spurious as f64 / k_a as f64;
    metrics.c_bs = cost_bs(scheme, &sets.counts);
    metrics.c_bs_between_failed = sets.counts.f_a_between;
    metrics.c_ue = decisions.iter().filter(|d| d.stage == Stage::Correlator).count();
    metrics.p_c = metrics.c_ue as f64 / k_a as f64;
    metrics.targeted_false_alarms = packet.included.iter().filter(|nu| !nu_count.contains_key(nu)).count();

    let retransmit = users
        .iter()
        .zip(&decisions)
        .map(|(u, d)| d.retransmit && u.transmissions < cfg.max_retransmissions)
        .collect();
    Ok(SlotOutcome { metrics, delivered, retransmit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRow {
    pub trial: usize,
    pub slot: usize,
    #[serde(flatten)]
    pub metrics: SlotMetrics,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct TrialTally {
    rows: Vec<SlotRow>,
    unique_users: usize,
    resolved_users: usize,
    lost_users: usize,
    retransmissions: usize,
    max_transmissions: u32,
}

fn run_trial(ctx: &SimContext<'_>, trial: usize) -> Result<TrialTally> {
    let cfg = ctx.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64);
    let mut next_id = 0u64;
    let mut pending: Vec<TxUser> = Vec::new();
    let mut delivered_ids: HashSet<u64> = HashSet::new();
    let mut tally = TrialTally::default();

    for slot in 0..cfg.slots {
        let mut users = std::mem::take(&mut pending);
        while users.len() < cfg.k_a {
            users.push(TxUser { id: next_id, info_bits: random_message(&mut rng), transmissions: 0 });
            next_id += 1;
        }
        tally.unique_users += users.iter().filter(|u| u.transmissions == 0).count();
        let out = run_slot(ctx, &users, &mut rng)?;
        for ((u, &ok), &retx) in users.iter().zip(&out.delivered).zip(&out.retransmit) {
            tally.max_transmissions = tally.max_transmissions.max(u.transmissions + 1);
            if ok {
                delivered_ids.insert(u.id);
            }
            if retx {
                tally.retransmissions += 1;
                pending.push(TxUser { transmissions: u.transmissions + 1, ..u.clone() });
            } else {
                tally.resolved_users += 1;
                if !delivered_ids.contains(&u.id) {
                    tally.lost_users += 1;
                }
            }
        }
        tally.rows.push(SlotRow { trial, slot, metrics: out.metrics });
    }
    Ok(tally)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStderr::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        MeanStderr { mean, stderr: (var / n).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub variant: String,
    pub k_a: usize,
    /// Mean fresh users per slot.
    pub k_bar: f64,
    pub ff_ebn0_db: f64,
    /// Re-transmissions per unique user.
    pub p_e: f64,
    pub equiv_ebn0_db: f64,
    /// Unique users never delivered, among users whose outcome is settled.
    pub overall_pupe: f64,
    pub pupe_ff: MeanStderr,
    pub pupe_fb: MeanStderr,
    pub s_a: MeanStderr,
    pub f_a: MeanStderr,
    pub f_md: MeanStderr,
    pub c_bs: MeanStderr,
    pub c_ue: MeanStderr,
    pub p_c: MeanStderr,
    pub false_alarms: MeanStderr,
    pub max_transmissions: u32,
    pub slots_run: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub summary: ExperimentSummary,
    pub rows: Vec<SlotRow>,
}

/// Runs `trials` independent sequences of `slots` slots; trials run in parallel
/// and are reduced in trial order.
pub fn run_experiment(cfg: &ExperimentConfig, a: &SensingMatrix) -> Result<ExperimentResult> {
    let ctx = SimContext::new(cfg, a)?;
    let tallies = (0..cfg.trials).into_par_iter().map(|t| run_trial(&ctx, t)).collect::<Result<Vec<_>>>()?;
    let rows: Vec<SlotRow> = tallies.iter().flat_map(|t| t.rows.iter().cloned()).collect();
    let unique: usize = tallies.iter().map(|t| t.unique_users).sum();
    let resolved: usize = tallies.iter().map(|t| t.resolved_users).sum();
    let lost: usize = tallies.iter().map(|t| t.lost_users).sum();
    let retx: usize = tallies.iter().map(|t| t.retransmissions).sum();
    let p_e = if unique > 0 { retx as f64 / unique as f64 } else { 0.0 };
    let col = |f: &dyn Fn(&SlotMetrics) -> f64| MeanStderr::of(&rows.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
    let ff = cfg.ff_ebn0_db();
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        variant: cfg.scheme.map_or("none", |s| s.name()).to_string(),
        k_a: cfg.k_a,
        k_bar: unique as f64 / rows.len().max(1) as f64,
        ff_ebn0_db: ff,
        p_e,
        equiv_ebn0_db: equivalent_ebn0(ff, p_e),
        overall_pupe: if resolved > 0 { lost as f64 / resolved as f64 } else { 0.0 },
        pupe_ff: col(&|m| m.pupe_ff),
        pupe_fb: col(&|m| m.pupe_fb),
        s_a: col(&|m| m.sets.s_a as f64),
        f_a: col(&|m| m.sets.f_a as f64),
        f_md: col(&|m| m.sets.f_md as f64),
        c_bs: col(&|m| m.c_bs as f64),
        c_ue: col(&|m| m.c_ue as f64),
        p_c: col(&|m| m.p_c),
        false_alarms: col(&|m| m.false_alarms as f64),
        max_transmissions: tallies.iter().map(|t| t.max_transmissions).max().unwrap_or(0),
        slots_run: rows.len(),
        seed: cfg.seed,
    };
    Ok(ExperimentResult { summary, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub sweep_db: f64,
    pub ff_ebn0_db: f64,
    pub equiv_ebn0_db: f64,
    pub overall_pupe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub achieved: bool,
    /// Lowest-energy evaluated point meeting the target, if any.
    pub best: Option<SweepPoint>,
    pub evaluations: Vec<SweepPoint>,
    /// Full result at `best`.
    #[serde(skip)]
    pub best_run: Option<ExperimentResult>,
}

/// Bisection on the swept energy for the smallest value whose overall PUPE
/// meets the target. Every evaluation reuses the same seed.
pub fn find_min_ebn0(cfg: &ExperimentConfig, a: &SensingMatrix, sweep: &SweepConfig) -> Result<SweepResult> {
    let mut evaluations = Vec::new();
    let mut eval = |x: f64| -> Result<(SweepPoint, ExperimentResult)> {
        let c = ExperimentConfig { power: cfg.power.with_sweep_value(x), ..cfg.clone() };
        let r = run_experiment(&c, a)?;
        let p = SweepPoint {
            sweep_db: x,
            ff_ebn0_db: r.summary.ff_ebn0_db,
            equiv_ebn0_db: r.summary.equiv_ebn0_db,
            overall_pupe: r.summary.overall_pupe,
        };
        evaluations.push(p.clone());
        Ok((p, r))
    };
    let meets = |p: &SweepPoint| p.overall_pupe <= sweep.target_pupe;
    let mut lo = sweep.center_db - sweep.span_db;
    let mut hi = sweep.center_db + sweep.span_db;
    let top = eval(hi)?;
    if !meets(&top.0) {
        return Ok(SweepResult { achieved: false, best: None, evaluations, best_run: None });
    }
    let bottom = eval(lo)?;
    let best = if meets(&bottom.0) {
        bottom
    } else {
        let mut best = top;
        for _ in 0..sweep.max_iters.saturating_sub(2) {
            let mid = 0.5 * (lo + hi);
            let p = eval(mid)?;
            if meets(&p.0) {
                hi = mid;
                let close = p.0.overall_pupe >= sweep.target_pupe - sweep.tolerance;
                best = p;
                if close {
                    break;
                }
            } else {
                lo = mid;
            }
        }
        best
    };
    Ok(SweepResult { achieved: true, best: Some(best.0), evaluations, best_run: Some(best.1) })
}

/// Per-slot CSV columns, in order.
pub const CSV_HEADER: [&str; 35] = [
    "variant", "group", "trial", "slot", "k_bar", "ff_ebn0_db", "equiv_ebn0_db", "k_a", "new_users",
    "retransmitters", "pupe_ff", "pupe_fb", "spurious_retx", "c_bs", "c_bs_between_failed", "c_ue", "p_c",
    "s_a", "f_a", "f_md", "s_a_above", "s_a_between", "s_a_below", "f_a_above", "f_a_between", "f_a_below",
    "f_md_above", "f_md_between", "f_md_below", "detected", "false_alarms", "targeted_false_alarms", "decoded",
    "collided_users", "seed",
];

fn csv_record(group: &str, r: &ExperimentResult, row: &SlotRow) -> Vec<String> {
    let m = &row.metrics;
    let s = &m.sets;
    let sm = &r.summary;
    vec![
        sm.variant.clone(),
        group.to_string(),
        row.trial.to_string(),
        row.slot.to_string(),
        sm.k_bar.to_string(),
        sm.ff_ebn0_db.to_string(),
        sm.equiv_ebn0_db.to_string(),
        m.k_a.to_string(),
        m.new_users.to_string(),
        m.retransmitters.to_string(),
        m.pupe_ff.to_string(),
        m.pupe_fb.to_string(),
        m.spurious_retx.to_string(),
        m.c_bs.to_string(),
        m.c_bs_between_failed.to_string(),
        m.c_ue.to_string(),
        m.p_c.to_string(),
        s.s_a.to_string(),
        s.f_a.to_string(),
        s.f_md.to_string(),
        s.s_a_above.to_string(),
        s.s_a_between.to_string(),
        s.s_a_below.to_string(),
        s.f_a_above.to_string(),
        s.f_a_between.to_string(),
        s.f_a_below.to_string(),
        s.f_md_above.to_string(),
        s.f_md_between.to_string(),
        s.f_md_below.to_string(),
        m.detected.to_string(),
        m.false_alarms.to_string(),
        m.targeted_false_alarms.to_string(),
        m.decoded.to_string(),
        m.collided_users.to_string(),
        sm.seed.to_string(),
    ]
}

/// Writes per-slot rows; `group` labels rows from one configuration of a sweep.
pub fn write_rows_csv<W: std::io::Write>(writer: W, groups: &[(String, &ExperimentResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for (group, r) in groups {
        for row in &r.rows {
            w.write_record(csv_record(group, r, row))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
    Ok(())
}
