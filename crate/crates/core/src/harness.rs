//! Experiment runner: configuration, convergence traces, Monte-Carlo SNR
//! sweeps and CSV output.
//!
//! Configs are TOML. Top-level keys describe the scenario; the optional
//! `[decomposition]` and `[mmwave]` tables hold algorithm and channel
//! parameters. Missing keys take the defaults of
//! [`ExperimentConfig::default`] (256×64 Rayleigh, 8 streams, 12 RF chains).
//! Angles in the config are in degrees.
//!
//! Trial `t` draws everything from ChaCha8 streams seeded with `seed + t`,
//! and per-trial results are reduced in trial order, so sweep output does
//! not depend on the number of worker threads.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{gen_mmwave, gen_rayleigh, AngleSector, MmWaveParams, UlaGeometry};
use crate::decomposer::{
    decompose_observed, init_rf, DecompositionSettings, DecompositionTrace, HybridProcessor,
    ThresholdMode,
};
use crate::error::{Error, Result};
use crate::evaluator::{
    active_error, combiner_target, design_combiner, design_precoder, precoder_target,
    quantize_and_refit, spectral_efficiency_matrices, PrecoderTarget,
};
use crate::numerics::ComplexMatrix;
use crate::reference::{rate_upper_bound, waterfill};

/// Achieved rate may exceed the bound by at most this much before a trial is
/// counted as a violation.
pub const BOUND_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelFamily {
    Rayleigh,
    Mmwave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SvdUnconstrained,
    MdHp,
    MdHpQuantized,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::SvdUnconstrained => "svd_unconstrained",
            Scheme::MdHp => "md_hp",
            Scheme::MdHpQuantized => "md_hp_quantized",
        }
    }
}

/// mmWave channel parameters as written in a config file (degrees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmWaveConfig {
    pub clusters: usize,
    pub paths_per_cluster: usize,
    pub tx_sector_deg: [f64; 2],
    pub rx_sector_deg: [f64; 2],
    pub tx_spread_deg: f64,
    pub rx_spread_deg: f64,
    pub tx_spacing: f64,
    pub rx_spacing: f64,
}

impl Default for MmWaveConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            paths_per_cluster: 10,
            tx_sector_deg: [-30.0, 30.0],
            rx_sector_deg: [-180.0, 180.0],
            tx_spread_deg: 7.5,
            rx_spread_deg: 7.5,
            tx_spacing: 0.5,
            rx_spacing: 0.5,
        }
    }
}

impl MmWaveConfig {
    pub fn to_params(&self, nt: usize, nr: usize) -> MmWaveParams {
        let rad = |d: f64| d.to_radians();
        MmWaveParams {
            clusters: self.clusters,
            paths_per_cluster: self.paths_per_cluster,
            tx_sector: AngleSector::new(rad(self.tx_sector_deg[0]), rad(self.tx_sector_deg[1])),
            rx_sector: AngleSector::new(rad(self.rx_sector_deg[0]), rad(self.rx_sector_deg[1])),
            tx_spread: rad(self.tx_spread_deg),
            rx_spread: rad(self.rx_spread_deg),
            tx_geometry: UlaGeometry {
                element_count: nt,
                spacing_over_wavelength: self.tx_spacing,
            },
            rx_geometry: UlaGeometry {
                element_count: nr,
                spacing_over_wavelength: self.rx_spacing,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel_family: ChannelFamily,
    pub nt: usize,
    pub nr: usize,
    pub ns: usize,
    pub mt: usize,
    pub mr: usize,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub waterfill: bool,
    /// Phase resolution of the quantized scheme; ignored by the others.
    pub quant_bits: u32,
    pub schemes: Vec<Scheme>,
    /// RF entry `(row, col)`, zero-based, whose phase is traced by
    /// `convergence`; checked against the RF shape only there.
    pub trace_entry: [usize; 2],
    pub decomposition: DecompositionSettings,
    pub mmwave: Option<MmWaveConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channel_family: ChannelFamily::Rayleigh,
            nt: 256,
            nr: 64,
            ns: 8,
            mt: 12,
            mr: 12,
            snr_grid_db: (0..=8).map(|i| -40.0 + 5.0 * i as f64).collect(),
            trials: 100,
            seed: 1,
            waterfill: false,
            quant_bits: 2,
            schemes: vec![Scheme::SvdUnconstrained, Scheme::MdHp, Scheme::MdHpQuantized],
            trace_entry: [0, 4],
            decomposition: DecompositionSettings::default(),
            mmwave: None,
        }
    }
}

impl ExperimentConfig {
    /// Single 256×64 Rayleigh channel, 4 streams, 6 RF chains.
    pub fn convergence_default() -> Self {
        Self {
            ns: 4,
            mt: 6,
            mr: 6,
            trials: 1,
            schemes: vec![Scheme::MdHp],
            ..Self::default()
        }
    }

    /// 256×64 clustered mmWave channel with the standard cluster layout.
    pub fn mmwave_default() -> Self {
        Self {
            channel_family: ChannelFamily::Mmwave,
            mmwave: Some(MmWaveConfig::default()),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Error::Config {
            field: field.into(),
            message,
        };
        if self.nt == 0 || self.nr == 0 {
            return Err(bad("nt", "antenna counts must be positive".into()));
        }
        if self.ns == 0 {
            return Err(bad("ns", "must be at least 1".into()));
        }
        if !(self.ns <= self.mt && self.mt <= self.nt) {
            return Err(bad(
                "mt",
                format!("need ns ≤ mt ≤ nt, got {} ≤ {} ≤ {}", self.ns, self.mt, self.nt),
            ));
        }
        if !(self.ns <= self.mr && self.mr <= self.nr) {
            return Err(bad(
                "mr",
                format!("need ns ≤ mr ≤ nr, got {} ≤ {} ≤ {}", self.ns, self.mr, self.nr),
            ));
        }
        if self.ns > self.nr.min(self.nt) {
            return Err(bad("ns", "exceeds the channel rank limit".into()));
        }
        if self.trials == 0 {
            return Err(bad("trials", "must be at least 1".into()));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(bad("snr_grid_db", "needs at least one finite value".into()));
        }
        if self.schemes.is_empty() {
            return Err(bad("schemes", "needs at least one scheme".into()));
        }
        if self.quant_bits == 0 || self.quant_bits > 30 {
            let b = self.quant_bits;
            return Err(bad("quant_bits", format!("must lie in 1..=30, got {b}")));
        }
        self.decomposition.validate()?;
        if self.channel_family == ChannelFamily::Mmwave {
            self.mmwave_params()
                .validate()
                .map_err(|e| bad("mmwave", e.to_string()))?;
        }
        Ok(())
    }

    pub fn mmwave_params(&self) -> MmWaveParams {
        self.mmwave
            .clone()
            .unwrap_or_default()
            .to_params(self.nt, self.nr)
    }

    pub fn generate_channel(&self, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        match self.channel_family {
            ChannelFamily::Rayleigh => gen_rayleigh(self.nr, self.nt, rng),
            ChannelFamily::Mmwave => gen_mmwave(&self.mmwave_params(), rng),
        }
    }
}

/// ChaCha8 generator for `(seed + trial)` on the given stream.
pub fn trial_rng(seed: u64, trial: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
    rng.set_stream(stream);
    rng
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

// ---------------------------------------------------------------------------
// Convergence study

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub mode: ThresholdMode,
    pub k: usize,
    pub eps: f64,
    pub delta_bar: Option<f64>,
}

/// One step of the traced RF entry: the exact update `e^{j(φ+δ)}` next to its
/// first-order model `(1 + jδ)·e^{jφ}`, both on the unit circle scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTracePoint {
    pub k: usize,
    pub exact: Complex64,
    pub linearized: Complex64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub phase_trace: Vec<PhaseTracePoint>,
    pub adaptive: DecompositionTrace,
    pub constant: DecompositionTrace,
}

impl ConvergenceReport {
    pub fn trace(&self, mode: ThresholdMode) -> &DecompositionTrace {
        match mode {
            ThresholdMode::Adaptive => &self.adaptive,
            ThresholdMode::Constant => &self.constant,
        }
    }
}

/// Runs both threshold modes on one channel realization from the same
/// initial RF factor and records their error traces plus the phase trace of
/// `trace_entry` under the adaptive mode.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if cfg.trace_entry[0] >= cfg.nt || cfg.trace_entry[1] >= cfg.mt {
        return Err(Error::Config {
            field: "trace_entry".into(),
            message: format!("must index into the {}x{} RF precoder", cfg.nt, cfg.mt),
        });
    }
    let mut rng = trial_rng(cfg.seed, 0, 0);
    let h = cfg.generate_channel(&mut rng);
    let target = precoder_target(&h, cfg.ns, db_to_linear(cfg.snr_grid_db[0]), false)?.target;
    let modulus = 1.0 / (cfg.nt as f64).sqrt();
    let rf0 = init_rf(&target, cfg.mt, modulus, &mut rng)?;
    let [tr, tc] = cfg.trace_entry;

    let mut rows = Vec::new();
    let mut phase_trace = Vec::new();
    let mut traces = Vec::new();
    for mode in [ThresholdMode::Adaptive, ThresholdMode::Constant] {
        let s = cfg.decomposition.clone().with_mode(mode);
        let mut prev_phase = rf0.phase(tr, tc);
        let (_, trace) = decompose_observed(&target, rf0.clone(), &s, |st| {
            rows.push(ConvergenceRow {
                mode,
                k: st.iteration,
                eps: st.error,
                delta_bar: st.threshold,
            });
            if mode == ThresholdMode::Adaptive {
                if let Some(inc) = st.increments {
                    let d = inc[(tr, tc)];
                    let base = Complex64::from_polar(1.0, prev_phase);
                    phase_trace.push(PhaseTracePoint {
                        k: st.iteration,
                        exact: Complex64::from_polar(1.0, prev_phase + d),
                        linearized: Complex64::new(1.0, d) * base,
                    });
                }
            }
            prev_phase = st.rf.phase(tr, tc);
        })?;
        traces.push(trace);
    }
    let constant = traces.pop().expect("two modes");
    let adaptive = traces.pop().expect("two modes");
    Ok(ConvergenceReport {
        rows,
        phase_trace,
        adaptive,
        constant,
    })
}

pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("mode,k,eps,delta_bar\n");
    for r in &report.rows {
        let mode = match r.mode {
            ThresholdMode::Adaptive => "adaptive",
            ThresholdMode::Constant => "constant",
        };
        let d = r.delta_bar.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(out, "{mode},{},{},{d}", r.k, fmt_f64(r.eps));
    }
    out
}

pub fn phase_trace_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("k,exact_re,exact_im,linear_re,linear_im\n");
    for p in &report.phase_trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.k,
            fmt_f64(p.exact.re),
            fmt_f64(p.exact.im),
            fmt_f64(p.linearized.re),
            fmt_f64(p.linearized.im)
        );
    }
    out
}

// ---------------------------------------------------------------------------
// SNR sweep

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub rate: f64,
    pub upper_bound: f64,
    pub eps_precoder: f64,
    pub eps_combiner: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub mean_rate: f64,
    pub rate_stderr: f64,
    pub mean_eps_precoder: f64,
    pub mean_eps_combiner: f64,
    /// Successful trials behind the means.
    pub trials: usize,
    pub mean_upper_bound: f64,
    pub failures: usize,
    /// Trials whose rate exceeded their own upper bound by more than
    /// [`BOUND_SLACK`].
    pub bound_violations: usize,
}

/// Everything one trial produces: `outcomes[snr_index][scheme_index]`.
type TrialResults = Vec<Vec<std::result::Result<TrialOutcome, String>>>;

struct SchemeDesign {
    precoder: HybridProcessor,
    eps_precoder: f64,
}

fn md_precoder(
    cfg: &ExperimentConfig,
    t: &PrecoderTarget,
    rng: &mut ChaCha8Rng,
    want_quantized: bool,
) -> Result<(SchemeDesign, Option<SchemeDesign>)> {
    let (hp, trace) = design_precoder(t, cfg.mt, &cfg.decomposition, rng)?;
    let quantized = if want_quantized {
        let q = quantize_and_refit(&hp, &t.target, cfg.quant_bits, Some(cfg.ns))?;
        let eps = active_error(&t.target, &q, t.active)?;
        Some(SchemeDesign {
            precoder: q,
            eps_precoder: eps,
        })
    } else {
        None
    };
    Ok((
        SchemeDesign {
            precoder: hp,
            eps_precoder: trace.final_error,
        },
        quantized,
    ))
}

fn evaluate_md(
    cfg: &ExperimentConfig,
    h: &ComplexMatrix,
    t: &PrecoderTarget,
    design: &SchemeDesign,
    gamma: f64,
    quant_bits: Option<u32>,
    rng: &mut ChaCha8Rng,
) -> Result<TrialOutcome> {
    let f = design.precoder.product();
    let w_target = combiner_target(h, &f, gamma, cfg.ns, &t.u1)?;
    let (mut combiner, trace) = design_combiner(&w_target, cfg.mr, &cfg.decomposition, rng)?;
    let mut eps_c = trace.final_error;
    if let Some(bits) = quant_bits {
        combiner = quantize_and_refit(&combiner, &w_target, bits, None)?;
        eps_c = active_error(&w_target, &combiner, cfg.ns)?;
    }
    let rate = spectral_efficiency_matrices(h, &f, &combiner.product(), gamma, cfg.ns)?;
    Ok(TrialOutcome {
        rate,
        upper_bound: t.upper_bound,
        eps_precoder: design.eps_precoder,
        eps_combiner: eps_c,
    })
}

fn bound_at(t: &PrecoderTarget, gamma: f64, ns: usize, waterfilled: bool) -> f64 {
    if waterfilled {
        waterfill(&t.singular_values, gamma, ns).rate(&t.singular_values, gamma)
    } else {
        rate_upper_bound(&t.singular_values, gamma, ns)
    }
}

/// All SNR points and schemes for one channel realization.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> TrialResults {
    let mut rng = trial_rng(cfg.seed, trial, 0);
    let h = cfg.generate_channel(&mut rng);
    let wants_md = cfg.schemes.contains(&Scheme::MdHp);
    let wants_q = cfg.schemes.contains(&Scheme::MdHpQuantized);

    // Without waterfilling the precoder target does not depend on the SNR,
    // so the precoder is designed once per channel.
    let shared = if cfg.waterfill {
        None
    } else {
        Some(precoder_target(&h, cfg.ns, 1.0, false).and_then(|t| {
            let d = if wants_md || wants_q {
                Some(md_precoder(cfg, &t, &mut rng, wants_q)?)
            } else {
                None
            };
            Ok((t, d))
        }))
    };

    cfg.snr_grid_db
        .iter()
        .enumerate()
        .map(|(i, &snr_db)| {
            let gamma = db_to_linear(snr_db);
            let mut rng = trial_rng(cfg.seed, trial, 1 + i as u64);
            let local;
            let (t, designs) = match &shared {
                Some(Ok((t, d))) => (t, d.as_ref()),
                Some(Err(e)) => {
                    let msg = e.to_string();
                    return cfg.schemes.iter().map(|_| Err(msg.clone())).collect();
                }
                None => {
                    local = precoder_target(&h, cfg.ns, gamma, true).and_then(|t| {
                        let d = if wants_md || wants_q {
                            Some(md_precoder(cfg, &t, &mut rng, wants_q)?)
                        } else {
                            None
                        };
                        Ok((t, d))
                    });
                    match &local {
                        Ok((t, d)) => (t, d.as_ref()),
                        Err(e) => {
                            let msg = e.to_string();
                            return cfg.schemes.iter().map(|_| Err(msg.clone())).collect();
                        }
                    }
                }
            };
            let mut t_at = t.clone();
            t_at.upper_bound = bound_at(t, gamma, cfg.ns, cfg.waterfill);

            cfg.schemes
                .iter()
                .map(|scheme| {
                    let out = match scheme {
                        Scheme::SvdUnconstrained => spectral_efficiency_matrices(
                            &h, &t_at.target, &t_at.u1, gamma, cfg.ns,
                        )
                        .map(|rate| TrialOutcome {
                            rate,
                            upper_bound: t_at.upper_bound,
                            eps_precoder: 0.0,
                            eps_combiner: 0.0,
                        }),
                        Scheme::MdHp => {
                            let (d, _) = designs.expect("md designs requested");
                            evaluate_md(cfg, &h, &t_at, d, gamma, None, &mut rng)
                        }
                        Scheme::MdHpQuantized => {
                            let (_, q) = designs.expect("md designs requested");
                            let q = q.as_ref().expect("quantized design requested");
                            evaluate_md(cfg, &h, &t_at, q, gamma, Some(cfg.quant_bits), &mut rng)
                        }
                    };
                    out.map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect()
}

/// Runs the sweep on the current rayon pool.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let per_trial: Vec<TrialResults> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect();
    reduce(cfg, &per_trial)
}

/// Runs the sweep on a dedicated pool with `threads` workers.
pub fn run_sweep_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<ResultRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(cfg))
}

fn reduce(cfg: &ExperimentConfig, per_trial: &[TrialResults]) -> Result<Vec<ResultRecord>> {
    let total = per_trial.len() * cfg.snr_grid_db.len() * cfg.schemes.len();
    let mut failed = 0;
    let mut first_failure = None;
    let mut records = Vec::new();
    for (i, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        for (j, &scheme) in cfg.schemes.iter().enumerate() {
            let mut ok = Vec::new();
            let mut failures = 0;
            for trial in per_trial {
                match &trial[i][j] {
                    Ok(o) => ok.push(*o),
                    Err(e) => {
                        failures += 1;
                        first_failure.get_or_insert_with(|| e.clone());
                    }
                }
            }
            failed += failures;
            records.push(aggregate(scheme, snr_db, &ok, failures));
        }
    }
    if failed * 100 > total {
        return Err(Error::TooManyFailures {
            failed,
            total,
            first: first_failure.unwrap_or_default(),
        });
    }
    Ok(records)
}

fn aggregate(scheme: Scheme, snr_db: f64, ok: &[TrialOutcome], failures: usize) -> ResultRecord {
    let n = ok.len();
    let mean = |f: fn(&TrialOutcome) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            ok.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let mean_rate = mean(|o| o.rate);
    let rate_stderr = if n >= 2 {
        let var = ok.iter().map(|o| (o.rate - mean_rate).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    ResultRecord {
        scheme,
        snr_db,
        mean_rate,
        rate_stderr,
        mean_eps_precoder: mean(|o| o.eps_precoder),
        mean_eps_combiner: mean(|o| o.eps_combiner),
        trials: n,
        mean_upper_bound: mean(|o| o.upper_bound),
        failures,
        bound_violations: ok
            .iter()
            .filter(|o| o.rate > o.upper_bound + BOUND_SLACK)
            .count(),
    }
}

// ---------------------------------------------------------------------------
// CSV

pub const CSV_HEADER: &str = "scheme,snr_db,mean_rate,rate_stderr,eps_precoder,eps_combiner,trials";

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scheme.tag(),
            fmt_f64(r.snr_db),
            fmt_f64(r.mean_rate),
            fmt_f64(r.rate_stderr),
            fmt_f64(r.mean_eps_precoder),
            fmt_f64(r.mean_eps_combiner),
            r.trials
        );
    }
    out
}

pub fn emit_csv(records: &[ResultRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to write".into()));
    }
    write_text(path, &records_to_csv(records))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One parsed data row of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scheme: String,
    pub snr_db: f64,
    pub mean_rate: f64,
    pub rate_stderr: f64,
    pub eps_precoder: f64,
    pub eps_combiner: f64,
    pub trials: usize,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidInput("missing or unexpected CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let err = || Error::InvalidInput(format!("malformed CSV row {}", i + 2));
            if f.len() != 7 {
                return Err(err());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err());
            Ok(CsvRow {
                scheme: f[0].to_string(),
                snr_db: num(f[1])?,
                mean_rate: num(f[2])?,
                rate_stderr: num(f[3])?,
                eps_precoder: num(f[4])?,
                eps_combiner: num(f[5])?,
                trials: f[6].parse().map_err(|_| err())?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Single-channel dump

#[derive(Debug, Clone, Serialize)]
pub struct FactorDump {
    pub modulus: f64,
    pub phases: Vec<Vec<f64>>,
    pub baseband_re: Vec<Vec<f64>>,
    pub baseband_im: Vec<Vec<f64>>,
}

impl From<&HybridProcessor> for FactorDump {
    fn from(hp: &HybridProcessor) -> Self {
        let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        Self {
            modulus: hp.rf.modulus(),
            phases: rows(hp.rf.phases()),
            baseband_re: rows(&hp.baseband.map(|z| z.re)),
            baseband_im: rows(&hp.baseband.map(|z| z.im)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleReport {
    pub snr_db: f64,
    pub nt: usize,
    pub nr: usize,
    pub ns: usize,
    pub mt: usize,
    pub mr: usize,
    pub achieved: f64,
    pub upper_bound: f64,
    pub eps_precoder: f64,
    pub eps_combiner: f64,
    pub precoder: FactorDump,
    pub combiner: FactorDump,
}

/// Designs one link for trial 0 at `snr_db` and dumps factors and rates.
pub fn run_single(cfg: &ExperimentConfig, snr_db: f64) -> Result<SingleReport> {
    cfg.validate()?;
    let mut rng = trial_rng(cfg.seed, 0, 0);
    let h = cfg.generate_channel(&mut rng);
    let opts = crate::evaluator::LinkOptions {
        ns: cfg.ns,
        mt: cfg.mt,
        mr: cfg.mr,
        gamma: db_to_linear(snr_db),
        settings: cfg.decomposition.clone(),
        waterfill: cfg.waterfill,
        quant_bits: if cfg.schemes.contains(&Scheme::MdHpQuantized) {
            Some(cfg.quant_bits)
        } else {
            None
        },
    };
    let (design, report) = crate::evaluator::design_link(&h, &opts, &mut rng)?;
    Ok(SingleReport {
        snr_db,
        nt: cfg.nt,
        nr: cfg.nr,
        ns: cfg.ns,
        mt: cfg.mt,
        mr: cfg.mr,
        achieved: report.achieved,
        upper_bound: report.upper_bound,
        eps_precoder: report.decomposition_errors.0,
        eps_combiner: report.decomposition_errors.1,
        precoder: FactorDump::from(&design.precoder),
        combiner: FactorDump::from(&design.combiner),
    })
}
